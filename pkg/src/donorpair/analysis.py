"""Readout statistics, initial-state recipes, experiment pipelines and calibration."""

from __future__ import annotations

import contextlib
import dataclasses
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from . import dynamics
from .config import ExperimentConfig, parse_float_list
from .errors import ConfigError, ContractViolation, DonorPairError, InvalidParameterError
from .signal_chain import (
    TraceParams,
    blip_durations_batch,
    count_blips_batch,
    synthesize_samples,
)
from .spin_model import DonorPairParams, NuclearConfig, SpinState, electron_eigensystem, esr_frequencies
from .tunneling import EventTimeline, TunnelingParams, run_batch, trajectory_seed

TRACE_CHUNK = 2000


# --------------------------------------------------------------------------
# statistics


@dataclass
class ReadoutStats:
    per_trace_counts: list
    subgroup_means: list
    mean: float
    sigma: float
    count_histogram: dict

    @property
    def n_traces(self) -> int:
        return len(self.per_trace_counts)

    @property
    def spin_up_proportion(self) -> float:
        return spin_up_proportion(self.per_trace_counts)

    def to_dict(self) -> dict:
        return {
            "n_traces": self.n_traces,
            "n_subgroups": len(self.subgroup_means),
            "mean": self.mean,
            "sigma": self.sigma,
            "spin_up_proportion": self.spin_up_proportion,
            "count_histogram": {str(k): v for k, v in sorted(self.count_histogram.items())},
        }


def subgroup_stats(counts: Sequence[int], group_size: int) -> ReadoutStats:
    """Contiguous subgroups of ``group_size`` traces; sigma is the spread of their means."""
    c = np.asarray(counts, dtype=np.int64)
    if group_size < 1 or c.size == 0 or c.size % group_size:
        raise ConfigError(f"{c.size} counts cannot be split into groups of {group_size}")
    sums = c.reshape(-1, group_size).sum(axis=1)
    means = sums / group_size
    mean = float(c.sum()) / c.size
    sigma = float(np.std(means, ddof=1)) if means.size > 1 else 0.0
    hist = {int(k): int(v) for k, v in sorted(Counter(c.tolist()).items())}
    return ReadoutStats(c.tolist(), means.tolist(), mean, sigma, hist)


def spin_up_proportion(counts: Sequence[int]) -> float:
    """Fraction of traces with at least one blip."""
    c = np.asarray(counts)
    if c.size == 0:
        raise ContractViolation("no traces")
    return float(np.count_nonzero(c >= 1)) / c.size


def predicted_parallel_proportion(p_anti: float) -> float:
    """Spin-up proportion when two independent blips each escape detection with 1 - p."""
    if not 0.0 <= p_anti <= 1.0 or math.isnan(p_anti):
        raise InvalidParameterError("p_anti must be in [0, 1]")
    return 1.0 - (1.0 - p_anti) ** 2


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


# --------------------------------------------------------------------------
# stage tagging


@contextlib.contextmanager
def stage(name: str):
    """Prefix any library error raised inside the block with the pipeline stage."""
    try:
        yield
    except DonorPairError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
            exc.args = (f"[{name}] {exc.args[0] if exc.args else type(exc).__name__}",) + exc.args[1:]
        raise


# --------------------------------------------------------------------------
# initial states


def _recipe_key(label: str) -> str:
    return label.strip().replace("_", "").replace("-", "minus").replace("+", "plus").replace("↑", "up").replace("↓", "down").lower()


def crot_line(params: DonorPairParams, cfg: NuclearConfig) -> float:
    """Electron-1 resonance conditional on electron 2 down (anti-parallel nuclei)."""
    return esr_frequencies(params, cfg, full=False)["e1|e2=down"]


def drive_line(params: DonorPairParams, cfg: NuclearConfig) -> float:
    """Frequency used to flip electron 1: f_alpha (parallel) or the CROT line (anti-parallel)."""
    return dynamics.alpha_carrier(params, cfg) if cfg.parallel else crot_line(params, cfg)


def initial_state(recipe: str, params: DonorPairParams, cfg: NuclearConfig,
                  rabi_frequency: float = 1e6, phase: float = 0.0) -> SpinState:
    """Electron state for a named preparation.

    Parallel nuclei: ``Tminus``, ``TX``, ``Tplus`` (pulses at f_alpha).
    Anti-parallel nuclei: ``down`` (both electrons down) or ``up`` (CROT pi
    pulse flipping electron 1 conditional on electron 2 down).
    """
    key = _recipe_key(recipe)
    if cfg.parallel:
        if key in ("tminus", "down"):
            return SpinState.product("↓↓")
        if key in ("tx", "tplus"):
            return dynamics.prepare(key, params, cfg, rabi_frequency, phase)
    else:
        if key in ("down", "tminus"):
            return SpinState.product("↓↓")
        if key in ("up", "up1"):
            carrier = crot_line(params, cfg)
            t_pi = dynamics.calibrate_pi_duration(params, cfg, rabi_frequency, carrier, phase,
                                                  start="↓↓", target="↑↓")
            pulse = dynamics.DrivePulse(carrier, rabi_frequency, t_pi, phase)
            return dynamics.propagate(SpinState.product("↓↓"), pulse, params, cfg)
    raise ConfigError(f"unknown initial state {recipe!r} for nuclear configuration {cfg.name}")


def default_recipe(cfg: NuclearConfig) -> str:
    return "Tminus" if cfg.parallel else "down"


# --------------------------------------------------------------------------
# readout pipeline


@dataclass
class ReadoutResult:
    stats: ReadoutStats
    timelines: list = field(repr=False)
    blip_durations: np.ndarray = field(default=None, repr=False)
    samples: np.ndarray | None = field(default=None, repr=False)


def detect_counts(timelines: Sequence[EventTimeline], tp: TraceParams, keep_samples: int = 0,
                  want_durations: bool = False):
    """Blip counts per trace from synthesized, noisy traces (processed in chunks)."""
    counts = np.empty(len(timelines), dtype=np.int64)
    durations = []
    kept = []
    for a in range(0, len(timelines), TRACE_CHUNK):
        chunk = timelines[a : a + TRACE_CHUNK]
        y = synthesize_samples(chunk, tp)
        counts[a : a + len(chunk)] = count_blips_batch(y, tp.level)
        if want_durations:
            durations.append(blip_durations_batch(y, tp.level, tp.sample_rate))
        if keep_samples > a:
            kept.append(y[: keep_samples - a])
    samples = np.concatenate(kept) if kept else None
    dur = np.concatenate(durations) if durations else np.array([])
    return counts, dur, samples


def readout(state: SpinState, cfg: ExperimentConfig, seed: int | None = None,
            want_durations: bool = False) -> ReadoutResult:
    """Projective measurement + tunneling + detection for ``repetitions`` shots of ``state``."""
    ex = cfg.experiment
    seed = ex.seed if seed is None else seed
    with stage("tunneling"):
        timelines = run_batch(state, ex.repetitions, cfg.donor, cfg.tunneling, cfg.nuclear, seed, ex.workers)
    with stage("signal"):
        if ex.detection == "ideal":
            counts = np.array([tl.ionization_count for tl in timelines], dtype=np.int64)
            durations, samples = None, None
        else:
            counts, durations, samples = detect_counts(timelines, cfg.trace, ex.save_traces, want_durations)
    with stage("analysis"):
        stats = subgroup_stats(counts, ex.subgroup_size)
    return ReadoutResult(stats, timelines, durations, samples)


def run_experiment(cfg: ExperimentConfig, want_durations: bool = False) -> ReadoutResult:
    """Prepare the configured initial state, then read it out ``repetitions`` times."""
    with stage("prepare"):
        state = initial_state(cfg.initial.state, cfg.donor, cfg.nuclear,
                              cfg.initial.rabi_frequency, cfg.initial.phase)
    return readout(state, cfg, want_durations=want_durations)


# --------------------------------------------------------------------------
# spectrum


@dataclass
class SpectrumPoint:
    frequency: float
    offset: float
    proportion: float
    sigma: float
    mean_count: float


def spectrum_scan(cfg: ExperimentConfig, frequencies: Sequence[float] | None = None) -> list[SpectrumPoint]:
    """Spin-up proportion after an adiabatic sweep centred on each frequency."""
    sp = cfg.spectrum
    recipe = sp.initial or default_recipe(cfg.nuclear)
    with stage("prepare"):
        start = initial_state(recipe, cfg.donor, cfg.nuclear, sp.rabi_frequency, sp.phase)
        center = sp.center if sp.center is not None else drive_line(cfg.donor, cfg.nuclear)
    if frequencies is None:
        frequencies = [center + o for o in parse_float_list(sp.offsets)]
    out = []
    for k, f in enumerate(frequencies):
        if not math.isfinite(f):
            raise ContractViolation("spectrum frequencies must be finite")
        with stage("drive"):
            state = dynamics.adiabatic_invert(start, f, sp.span, sp.sweep_duration, sp.rabi_frequency,
                                              cfg.donor, cfg.nuclear, sp.phase)
        res = readout(state, cfg, seed=trajectory_seed(cfg.experiment.seed, k))
        p = res.stats.spin_up_proportion
        out.append(SpectrumPoint(float(f), float(f - center), p, binomial_sigma(p, res.stats.n_traces),
                                 res.stats.mean))
    return out


def inject_detection(cfg: ExperimentConfig, p: float, via: str = "duration") -> ExperimentConfig:
    """Noise-free, zero-temperature settings with single-blip detection probability ``p``.

    ``via="duration"`` shortens the blips (tunnel-in rate) at the configured
    bandwidth; ``via="bandwidth"`` slows the filter instead.  A slow filter
    carries memory from one blip into the next, so the two misses in a
    parallel readout are no longer independent; the duration route keeps the
    filter memory short compared with the gap between blips.
    """
    from .signal_chain import filter_for_detection, tunnel_in_rate_for_detection

    cfg = cfg.with_section("tunneling", electron_temperature=0.0)
    if via == "duration":
        cfg = cfg.with_section("trace", noise_sigma=0.0)
        return cfg.with_section("tunneling", gamma_in=tunnel_in_rate_for_detection(p, cfg.trace))
    if via == "bandwidth":
        return dataclasses.replace(cfg, trace=filter_for_detection(p, cfg.trace, cfg.tunneling.gamma_in))
    raise ConfigError(f"unknown injection mode {via!r}")


# --------------------------------------------------------------------------
# calibration


def completion_probability(gamma_out: float, tp: TunnelingParams, params: DonorPairParams,
                           cfg: NuclearConfig) -> float:
    """Probability that a T+ readout finishes both ionize/neutralize cycles in the window.

    Zero-temperature chain T+ -> D+ -> odd eigenstate -> D+ -> T-; the odd state
    leaves through its ``↑↓`` component.
    """
    if not cfg.parallel:
        # a single cycle for anti-parallel nuclei
        rates = [gamma_out, tp.gamma_in]
        return _hypoexp_cdf(rates, tp.read_duration)
    es = electron_eigensystem(params, cfg)
    b = tp.branching_s_vs_t0
    total = 0.0
    for lab, w in (("S~", b), ("T0~", 1.0 - b)):
        if w == 0:
            continue
        weight = es.state(lab).probability("↑↓")
        total += w * _hypoexp_cdf([gamma_out, tp.gamma_in, gamma_out * weight, tp.gamma_in], tp.read_duration)
    return total


def _hypoexp_cdf(rates: Sequence[float], t: float) -> float:
    n = len(rates)
    q = np.zeros((n + 1, n + 1))
    for i, r in enumerate(rates):
        q[i, i] = -r
        q[i, i + 1] = r
    return float(expm(q * t)[0, -1])


def calibrate_gamma_out(tp: TunnelingParams, params: DonorPairParams, cfg: NuclearConfig,
                        completion: float = 0.99) -> float:
    """Slowest tunnel-out rate whose full-cycle completion probability reaches ``completion``."""
    if not 0 < completion < 1:
        raise ContractViolation("completion must be in (0, 1)")
    lo, hi = 1.0 / tp.read_duration, 1e3 / tp.read_duration
    if completion_probability(hi, tp, params, cfg) < completion:
        raise ContractViolation("completion target unreachable within the read window")
    for _ in range(100):
        mid = math.sqrt(lo * hi)
        if completion_probability(mid, tp, params, cfg) >= completion:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1 + 1e-9:
            break
    return hi


@dataclass
class CalibrationResult:
    config: ExperimentConfig
    gamma_out: float
    threshold: float
    mu_set_offset: float
    parallel_mean: float
    tminus_mean: float
    history: list

    def to_dict(self) -> dict:
        return {
            "label": "calibration-consistency (fitted device parameters, not a prediction)",
            "gamma_out": self.gamma_out,
            "threshold": self.threshold,
            "mu_set_offset": self.mu_set_offset,
            "parallel_mean": self.parallel_mean,
            "tminus_mean": self.tminus_mean,
            "history": self.history,
        }


def _bisect(f, lo, hi, iterations):
    """Root of an increasing function by bisection; clamps to the bracket."""
    flo, fhi = f(lo), f(hi)
    if flo >= 0:
        return lo
    if fhi <= 0:
        return hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def noise_for_threshold(threshold: float, tp: TraceParams, n_sigmas: float) -> float:
    """Largest noise (capped at the configured value) keeping ``threshold`` ``n_sigmas`` from both levels."""
    gap = min(threshold - tp.i_off, tp.i_on - threshold)
    return min(tp.noise_sigma, gap / n_sigmas)


def calibrate(cfg: ExperimentConfig) -> CalibrationResult:
    """Fit the unmeasured device parameters to the reference blip statistics.

    1. ``gamma_out``: slowest rate that completes a parallel T+ readout with
       probability ``completion``.
    2. Alternating searches with fixed seeds: the detection threshold (with
       the noise held ``min_threshold_sigmas`` below either level, so that
       false positives and blip fragmentation stay negligible) such that the
       parallel T+ mean count hits ``target_parallel_mean``; then the SET
       level offset, moved toward the spin-down level, such that the T- mean
       hits ``target_tminus_mean``.
    """
    cal = cfg.calibration
    parallel = cfg.nuclear if cfg.nuclear.parallel else NuclearConfig.DOWN_DOWN
    n = cal.trajectories
    work = dataclasses.replace(cfg, nuclear=parallel).with_section(
        "experiment", repetitions=n, subgroup_size=n, detection="trace", save_traces=0)
    with stage("calibrate"):
        g_out = calibrate_gamma_out(work.tunneling, work.donor, parallel, cal.completion)
        work = work.with_section("tunneling", gamma_out=g_out)
        t_plus = initial_state("Tplus", work.donor, parallel, cfg.initial.rabi_frequency, cfg.initial.phase)
        t_minus = SpinState.product("↓↓")
    seed = cfg.experiment.seed
    tr = work.trace
    span = tr.i_on - tr.i_off
    thr_lo, thr_hi = tr.i_off + 0.02 * span, tr.i_on - 0.02 * span
    ez = work.tunneling.zeeman_split or work.donor.zeeman_splitting
    history = []

    def with_threshold(c, thr):
        sigma = noise_for_threshold(thr, tr, cal.min_threshold_sigmas)
        return c.with_section("trace", threshold=thr, noise_sigma=sigma)

    def tminus_mean(offset):
        c = work.with_section("tunneling", mu_set_offset=offset)
        with stage("calibrate"):
            tls = run_batch(t_minus, n, c.donor, c.tunneling, parallel, trajectory_seed(seed, 1))
            counts, _, _ = detect_counts(tls, c.trace)
        return float(counts.mean())

    for r in range(cal.rounds):
        with stage("calibrate"):
            tls = run_batch(t_plus, n, work.donor, work.tunneling, parallel, trajectory_seed(seed, 0))
            clean = synthesize_samples(tls, tr.replace(noise_sigma=0.0))
            z = np.stack([np.random.default_rng([tl.seed, 1]).standard_normal(clean.shape[1]) for tl in tls])

        def parallel_mean(thr):
            sigma = noise_for_threshold(thr, tr, cal.min_threshold_sigmas)
            return float(count_blips_batch(clean + sigma * z, thr).mean())

        thr = _bisect(lambda t: cal.target_parallel_mean - parallel_mean(t), thr_lo, thr_hi, cal.iterations)
        work = with_threshold(work, thr)
        p_mean = parallel_mean(thr)

        offset = _bisect(lambda o: tminus_mean(-o) - cal.target_tminus_mean, 0.0, 0.5 * ez, cal.iterations)
        work = work.with_section("tunneling", mu_set_offset=-offset)
        m_mean = tminus_mean(-offset)
        history.append({"round": r, "threshold": thr, "noise_sigma": work.trace.noise_sigma,
                        "mu_set_offset": -offset, "parallel_mean": p_mean, "tminus_mean": m_mean})

    final = cfg.with_section("tunneling", gamma_out=g_out, mu_set_offset=work.tunneling.mu_set_offset)
    final = final.with_section("trace", threshold=work.trace.threshold, noise_sigma=work.trace.noise_sigma)
    last = history[-1]
    return CalibrationResult(final, g_out, work.trace.threshold, work.tunneling.mu_set_offset,
                             last["parallel_mean"], last["tminus_mean"], history)
