"""SET current traces: synthesis, blip detection, rise times and tunnel-time fits.

The forward model is an ideal two-level current (``i_on`` while donor 1 is
ionized) through a first-order low-pass filter, sampled at ``sample_rate``
with additive white Gaussian noise.  The filter response is evaluated exactly
at the sample instants for the continuous-time square wave, so event times do
not need to sit on the sample grid.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter

from .errors import ContractViolation, DegenerateDataError, InsufficientDataError, NotMeasurableError
from .tunneling import EventTimeline, trajectory_rngs

LN9 = math.log(9.0)
RISE_TIME = 6.7e-6
BANDWIDTH_FACTOR = 0.35


def bandwidth_from_rise_time(t_r: float) -> float:
    return BANDWIDTH_FACTOR / t_r


@dataclass(frozen=True)
class TraceParams:
    sample_rate: float = 1e6
    i_off: float = 0.0
    i_on: float = 1.0
    filter_time_constant: float = RISE_TIME / LN9
    noise_sigma: float = 0.1
    threshold: float | None = None  # None -> midpoint

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ContractViolation("sample_rate must be > 0")
        if not self.i_on > self.i_off:
            raise ContractViolation("i_on must exceed i_off")
        if self.filter_time_constant < 0 or self.noise_sigma < 0:
            raise ContractViolation("filter_time_constant and noise_sigma must be >= 0")
        thr = self.level
        if not self.i_off < thr < self.i_on:
            raise ContractViolation("threshold must lie strictly between i_off and i_on")

    @property
    def level(self) -> float:
        """Effective detection threshold."""
        return 0.5 * (self.i_off + self.i_on) if self.threshold is None else self.threshold

    @property
    def rise_time(self) -> float:
        return LN9 * self.filter_time_constant

    @property
    def bandwidth(self) -> float:
        return bandwidth_from_rise_time(self.rise_time) if self.rise_time > 0 else math.inf

    def replace(self, **changes) -> "TraceParams":
        values = asdict(self)
        values.update(changes)
        return TraceParams(**values)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class CurrentTrace:
    samples: np.ndarray
    sample_rate: float
    params: TraceParams
    seed: int = -1

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def params_hash(self) -> str:
        return self.params.digest()

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate


@dataclass(frozen=True)
class BlipRecord:
    start_time: float
    duration: float
    peak: float


# --------------------------------------------------------------------------
# synthesis


def filtered_levels(edge_times: np.ndarray, edge_steps: np.ndarray, n_samples: int,
                    tp: TraceParams, start_level: np.ndarray | None = None) -> np.ndarray:
    """Noise-free filtered current for a batch of square waves.

    ``edge_times`` and ``edge_steps`` have shape (n_traces, n_edges), padded
    with NaN/0; steps are +1 (switch on) or -1 (switch off).  The filter is
    in steady state at ``start_level`` (0 or 1, default 0) at t = 0.
    """
    edge_times = np.atleast_2d(np.asarray(edge_times, dtype=float))
    edge_steps = np.atleast_2d(np.asarray(edge_steps, dtype=float))
    n_tr, n_edges = edge_times.shape
    dt = 1.0 / tp.sample_rate
    tau = tp.filter_time_constant
    x0 = np.zeros(n_tr) if start_level is None else np.asarray(start_level, dtype=float)

    valid = np.isfinite(edge_times) & (edge_steps != 0)
    times = np.where(valid, edge_times, 0.0)
    # first sample index at which the edge is visible (t_k >= t_e)
    k_on = np.ceil(times / dt - 1e-9).astype(np.int64)
    rows = np.broadcast_to(np.arange(n_tr)[:, None], (n_tr, n_edges))

    x = np.zeros((n_tr, n_samples + 1))
    sel = valid & (k_on <= n_samples)
    np.add.at(x, (rows[sel], np.maximum(k_on[sel], 0)), edge_steps[sel])
    x = np.cumsum(x, axis=1)[:, :n_samples] + x0[:, None]

    if tau == 0 or n_samples < 2:
        y = x
    else:
        # y[k+1] = a y[k] + (1-a) x[k] + sum over edges in (t_k, t_k+1] of step * (1 - exp(-(t_k+1 - t_e)/tau))
        a = math.exp(-dt / tau)
        u = (1.0 - a) * x[:, :-1]
        k_in = k_on - 1
        sel = valid & (k_in >= 0) & (k_in < n_samples - 1)
        share = -np.expm1(-((k_in + 1) * dt - times) / tau)
        np.add.at(u, (rows[sel], k_in[sel]), edge_steps[sel] * share[sel])
        y = np.empty((n_tr, n_samples))
        y[:, 0] = x[:, 0]
        y[:, 1:] = lfilter([1.0], [1.0, -a], u, axis=1, zi=(a * x[:, 0])[:, None])[0]
    return tp.i_off + (tp.i_on - tp.i_off) * y


def _timeline_edges(timelines: Sequence[EventTimeline]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_edges = max((len(t.events) for t in timelines), default=0)
    times = np.full((len(timelines), max(n_edges, 1)), np.nan)
    steps = np.zeros_like(times)
    start = np.zeros(len(timelines))
    for i, tl in enumerate(timelines):
        t, s = tl.edges()
        times[i, : t.size] = t
        steps[i, : s.size] = s
        start[i] = 0.0 if tl.initial_config.donor1_occupied else 1.0
    return times, steps, start


def n_samples_for(read_duration: float, tp: TraceParams) -> int:
    return int(round(read_duration * tp.sample_rate))


def synthesize_trace(timeline: EventTimeline, tp: TraceParams, rng: np.random.Generator) -> CurrentTrace:
    """Filtered, noisy SET current for one readout window."""
    return synthesize_batch([timeline], tp, [rng])[0]


def synthesize_batch(timelines: Sequence[EventTimeline], tp: TraceParams,
                     rngs: Sequence[np.random.Generator] | None = None) -> list[CurrentTrace]:
    """Vectorized :func:`synthesize_trace`; noise streams default to each timeline's seed."""
    if not timelines:
        return []
    samples = synthesize_samples(timelines, tp, rngs)
    return [CurrentTrace(samples[i], tp.sample_rate, tp, tl.seed) for i, tl in enumerate(timelines)]


def synthesize_samples(timelines: Sequence[EventTimeline], tp: TraceParams,
                       rngs: Sequence[np.random.Generator] | None = None) -> np.ndarray:
    durations = {tl.read_duration for tl in timelines}
    if len(durations) != 1:
        raise ContractViolation("batch synthesis needs a common read duration")
    n = n_samples_for(durations.pop(), tp)
    times, steps, start = _timeline_edges(timelines)
    y = filtered_levels(times, steps, n, tp, start_level=start)
    if tp.noise_sigma > 0:
        if rngs is None:
            rngs = [trajectory_rngs(tl.seed)[1] for tl in timelines]
        for i, rng in enumerate(rngs):
            y[i] += rng.normal(0.0, tp.noise_sigma, n)
    return y


# --------------------------------------------------------------------------
# detection


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.concatenate([[False], mask, [False]])
    d = np.diff(padded.astype(np.int8))
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1)


def detect_blips(trace: CurrentTrace, threshold: float | None = None) -> list[BlipRecord]:
    """Maximal runs of samples strictly above ``threshold``."""
    thr = trace.params.level if threshold is None else threshold
    y = trace.samples
    starts, stops = _runs(y > thr)
    dt = 1.0 / trace.sample_rate
    return [BlipRecord(a * dt, (b - a) * dt, float(y[a:b].max())) for a, b in zip(starts, stops)]


def count_blips(trace: CurrentTrace, threshold: float | None = None) -> int:
    return len(detect_blips(trace, threshold))


def count_blips_batch(samples: np.ndarray, threshold: float) -> np.ndarray:
    """Number of supra-threshold runs in each row of ``samples``."""
    above = np.asarray(samples) > threshold
    return above[:, 0].astype(int) + np.count_nonzero(above[:, 1:] & ~above[:, :-1], axis=1)


def blip_durations_batch(samples: np.ndarray, threshold: float, sample_rate: float) -> np.ndarray:
    """Durations (s) of every detected blip across a batch of traces."""
    above = np.asarray(samples) > threshold
    out = []
    for row in above:
        a, b = _runs(row)
        out.append(b - a)
    return np.concatenate(out) / sample_rate if out else np.array([])


def _crossing(y: np.ndarray, i: int, level: float) -> float:
    """Fractional sample index where the segment y[i] -> y[i+1] crosses ``level``."""
    y0, y1 = y[i], y[i + 1]
    if y1 == y0:
        return float(i)
    return i + (level - y0) / (y1 - y0)


def rise_time(trace: CurrentTrace, blip: BlipRecord) -> float:
    """10-90 % rise time (s) of a saturated blip, interpolated between samples."""
    tau = trace.params.filter_time_constant
    if blip.duration <= 5.0 * tau:
        raise NotMeasurableError("blip too short to saturate (needs duration > 5 filter time constants)")
    fs = trace.sample_rate
    y = trace.samples
    k0 = int(round(blip.start_time * fs))
    k1 = k0 + int(round(blip.duration * fs))
    high = float(np.median(y[(k0 + k1) // 2 : k1]))
    lead = int(math.ceil(3 * tau * fs)) + 1
    pre = y[max(0, k0 - lead - 10) : max(0, k0 - lead)]
    low = float(np.median(pre)) if pre.size >= 3 else trace.params.i_off
    l10 = low + 0.1 * (high - low)
    l90 = low + 0.9 * (high - low)

    i = k0 - 1
    while i >= 0 and y[i] > l10:
        i -= 1
    if i < 0:
        raise NotMeasurableError("no baseline before the blip")
    t10 = _crossing(y, i, l10)
    i = max(k0 - 1, 0)
    while i + 1 < k1 and y[i + 1] < l90:
        i += 1
    if i + 1 >= k1:
        raise NotMeasurableError("blip never reaches 90 % of its plateau")
    t90 = _crossing(y, i, l90)
    return (t90 - t10) / fs


# --------------------------------------------------------------------------
# detection probability


def single_blip_detection(durations: Iterable[float], tp: TraceParams, n_trials: int = 2000,
                          seed: int = 0) -> np.ndarray:
    """Monte Carlo probability that one blip of each duration crosses the threshold.

    Start phases and noise are shared across durations (common random numbers),
    so the estimate is exactly monotone in duration.
    """
    durations = np.asarray(list(durations), dtype=float)
    dt = 1.0 / tp.sample_rate
    lead = 10 * dt
    tail = 10 * tp.filter_time_constant + 5 * dt
    n = int(math.ceil((lead + durations.max() + tail) / dt)) + 1
    rng = np.random.default_rng(seed)
    phase = rng.random(n_trials) * dt
    noise = rng.normal(0.0, tp.noise_sigma, (n_trials, n)) if tp.noise_sigma > 0 else None
    out = np.empty(durations.size)
    for i, d in enumerate(durations):
        on = lead + phase
        times = np.stack([on, on + d], axis=1)
        steps = np.tile([1.0, -1.0], (n_trials, 1))
        y = filtered_levels(times, steps, n, tp)
        if noise is not None:
            y = y + noise
        out[i] = np.mean(np.any(y > tp.level, axis=1))
    return out


def threshold_duration(tp: TraceParams) -> float:
    """Blip length at which the continuous filtered peak just reaches the threshold."""
    frac = (tp.level - tp.i_off) / (tp.i_on - tp.i_off)
    return -tp.filter_time_constant * math.log(1.0 - frac)


def _min_detected_duration(phase: float, tp: TraceParams, frac: float) -> float:
    """Shortest noise-free blip starting ``phase`` after a sample that some sample sees above threshold."""
    dt = 1.0 / tp.sample_rate
    tau = tp.filter_time_constant

    def peak_sample(d):
        end = phase + d
        k_last = math.floor(end / dt + 1e-12)
        best = 0.0
        if k_last * dt > phase:
            best = 1.0 - math.exp(-(k_last * dt - phase) / tau) if tau > 0 else 1.0
        k_next = k_last + 1
        if tau > 0:
            best = max(best, (1.0 - math.exp(-d / tau)) * math.exp(-(k_next * dt - end) / tau))
        return best - frac

    if tau == 0:
        # a sample must fall inside the pulse
        return max(dt - phase, 0.0) if phase > 0 else dt
    hi = -tau * math.log(1.0 - frac) + 2 * dt
    while peak_sample(hi) <= 0:
        hi *= 2
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if peak_sample(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def exponential_detection_probability(tp: TraceParams, gamma_in: float, n_phase: int = 256) -> float:
    """Noise-free probability of detecting a blip whose length is Exp(gamma_in)."""
    frac = (tp.level - tp.i_off) / (tp.i_on - tp.i_off)
    dt = 1.0 / tp.sample_rate
    phases = (np.arange(n_phase) + 0.5) / n_phase * dt
    d_min = np.array([_min_detected_duration(p, tp, frac) for p in phases])
    return float(np.mean(np.exp(-gamma_in * d_min)))


def filter_for_detection(p: float, tp: TraceParams, gamma_in: float) -> TraceParams:
    """Noise-free trace parameters whose filter makes the per-blip detection probability ``p``."""
    if not 0 < p < 1:
        raise ContractViolation("target detection probability must be in (0, 1)")
    base = tp.replace(noise_sigma=0.0)

    def f(log_tau):
        return exponential_detection_probability(base.replace(filter_time_constant=math.exp(log_tau)), gamma_in) - p

    lo, hi = math.log(1e-3 / gamma_in), math.log(100.0 / gamma_in)
    if f(lo) < 0:
        raise ContractViolation("target detection probability unreachable at this sample rate")
    log_tau = brentq(f, lo, hi, xtol=1e-12)
    return base.replace(filter_time_constant=math.exp(log_tau))


# --------------------------------------------------------------------------
# tunnel-in time fit


@dataclass(frozen=True)
class TunnelFit:
    tau: float
    sigma_tau: float
    n_used: int
    bin_centers: tuple
    counts: tuple


def fit_tunnel_in_time(durations: Sequence[float], bin_width: float,
                       min_duration_cut: float | None = None) -> TunnelFit:
    """Exponential decay time from a duration histogram.

    Bins whose left edge lies below ``min_duration_cut`` (default: 1/bandwidth
    for the 6.7 us rise time) are dropped; the remaining non-empty bins are
    fitted as ``log(count)`` versus bin centre by least squares weighted by
    count.  ``sigma_tau`` assumes Poisson counts.
    """
    d = np.asarray(durations, dtype=float)
    if bin_width <= 0:
        raise ContractViolation("bin_width must be > 0")
    if min_duration_cut is None:
        min_duration_cut = 1.0 / bandwidth_from_rise_time(RISE_TIME)
    if d.size and np.ptp(d) == 0:
        raise DegenerateDataError("all durations are identical")
    if np.count_nonzero(d >= min_duration_cut) < 50:
        raise InsufficientDataError("need at least 50 durations above the cut")
    n_bins = int(math.ceil(d.max() / bin_width)) + 1
    edges = np.arange(n_bins + 1) * bin_width
    counts, _ = np.histogram(d, edges)
    left = edges[:-1]
    keep = (left >= min_duration_cut - 1e-12 * bin_width) & (counts > 0)
    if np.count_nonzero(keep) < 2:
        raise InsufficientDataError("fewer than 2 non-empty bins above the cut")
    x = left[keep] + 0.5 * bin_width
    n = counts[keep].astype(float)
    y = np.log(n)
    w = n
    X = np.column_stack([np.ones_like(x), x])
    xtw = X.T * w
    cov = np.linalg.inv(xtw @ X)
    intercept, slope = cov @ (xtw @ y)
    if slope >= 0:
        raise DegenerateDataError("histogram does not decay")
    tau = -1.0 / slope
    sigma = math.sqrt(cov[1, 1]) / slope ** 2
    return TunnelFit(float(tau), float(sigma), int(n.sum()), tuple(x), tuple(int(c) for c in n))


def fit_tunnel_in_time_mle(durations: Sequence[float], min_duration_cut: float = 0.0) -> tuple[float, float]:
    """Maximum-likelihood decay time of durations above a cut (memoryless shift)."""
    d = np.asarray(durations, dtype=float)
    d = d[d >= min_duration_cut] - min_duration_cut
    if d.size < 2:
        raise InsufficientDataError("need at least 2 durations above the cut")
    tau = float(d.mean())
    return tau, tau / math.sqrt(d.size)


def tunnel_in_rate_for_detection(p: float, tp: TraceParams) -> float:
    """Tunnel-in rate at which an Exp(rate) blip is detected with probability ``p`` (noise-free)."""
    if not 0 < p < 1:
        raise ContractViolation("target detection probability must be in (0, 1)")
    base = tp.replace(noise_sigma=0.0)
    d0 = max(threshold_duration(base), 1.0 / base.sample_rate)

    def f(log_rate):
        return exponential_detection_probability(base, math.exp(log_rate)) - p

    log_rate = brentq(f, math.log(1e-4 / d0), math.log(1e3 / d0), xtol=1e-12)
    return math.exp(log_rate)
