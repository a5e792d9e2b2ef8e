"""Spin-dependent tunneling between donor 1 and the SET island during one read window.

Trajectories are continuous-time Markov chains over charge/spin configurations.
With parallel nuclei the two-electron eigenstates ``T-``, ``S~``, ``T0~`` and
``T+`` are the occupied-donor states; with anti-parallel nuclei the electrons
are treated as separable product states.  When donor 1 is ionized only the
spin of electron 2 is tracked.

Rates
-----
* donor -> SET for an electron-1 spin ``s`` leaving donor 2 in ``s2``:
  ``gamma_out * |<s s2|X>|^2 * fermi(mu_SET - mu_s)``
* SET -> donor for spin ``s``: ``gamma_in * fermi(mu_s - mu_SET)``; landing in
  the odd-parity sector picks ``S~`` with probability ``branching_s_vs_t0``.

Levels are ``mu_up = +Ez/2`` and ``mu_down = -Ez/2`` about the midpoint and
``mu_SET = mu_set_offset``.  Exchange-scale (MHz) level shifts are ignored
against the GHz Zeeman and thermal scales.  At zero temperature the Fermi
factor is a step, which switches every thermal error channel off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import constants
from scipy.special import expit

from .errors import ContractViolation, InvalidParameterError
from .spin_model import (
    EIGEN_LABELS,
    ELECTRON_LABELS,
    DonorPairParams,
    NuclearConfig,
    SpinState,
    electron_eigensystem,
)

H_OVER_KB = constants.h / constants.k  # kelvin per hertz

IONIZE = "IonizeDonor1"
NEUTRALIZE = "NeutralizeDonor1"


def fermi_factor(energy_offset: float, temperature: float) -> float:
    """1 / (1 + exp(h * offset / (k_B T))); a step function at T = 0."""
    if temperature < 0:
        raise InvalidParameterError("temperature must be >= 0")
    if temperature == 0:
        if energy_offset > 0:
            return 0.0
        return 1.0 if energy_offset < 0 else 0.5
    return float(expit(-energy_offset * H_OVER_KB / temperature))


@dataclass(frozen=True)
class TunnelingParams:
    """Tunnel rates, SET electrochemical potential and read window.

    ``gamma_out`` is not measured in the experiment and is a calibration knob;
    ``zeeman_split=None`` takes gamma_e * B0 from the donor parameters.
    """

    gamma_out: float = 1.0 / 60e-6
    gamma_in: float = 1.0 / 32.8e-6
    electron_temperature: float = 0.1
    mu_set_offset: float = 0.0
    zeeman_split: float | None = None
    branching_s_vs_t0: float = 0.5
    read_duration: float = 1e-3

    def __post_init__(self):
        if not (self.gamma_out > 0 and self.gamma_in > 0):
            raise InvalidParameterError("tunnel rates must be > 0")
        if not 0.0 <= self.branching_s_vs_t0 <= 1.0:
            raise InvalidParameterError("branching_s_vs_t0 must be in [0, 1]")
        if self.electron_temperature < 0:
            raise InvalidParameterError("electron_temperature must be >= 0")
        if not self.read_duration > 0:
            raise InvalidParameterError("read_duration must be > 0")

    def replace(self, **changes) -> "TunnelingParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return TunnelingParams(**values)

    @property
    def thermal(self) -> bool:
        return self.electron_temperature > 0


@dataclass(frozen=True)
class ChargeSpinConfig:
    """Occupancy of donor 1 and the spin state of the pair.

    Occupied: ``resident_state`` is an eigenstate label (parallel) or a product
    label such as ``"↑↓"`` (anti-parallel).  Ionized: it is electron 2's spin,
    ``"↓"`` or ``"↑"``.
    """

    donor1_occupied: bool
    resident_state: str

    def __str__(self):
        return self.resident_state if self.donor1_occupied else f"D1+,{self.resident_state}2"

    def to_dict(self) -> dict:
        return {"donor1_occupied": self.donor1_occupied, "resident_state": self.resident_state}

    @classmethod
    def from_dict(cls, d) -> "ChargeSpinConfig":
        return cls(bool(d["donor1_occupied"]), str(d["resident_state"]))


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    from_state: ChargeSpinConfig
    to_state: ChargeSpinConfig


@dataclass
class EventTimeline:
    events: list
    seed: int
    initial_config: ChargeSpinConfig
    final_config: ChargeSpinConfig
    read_duration: float

    @property
    def ionization_count(self) -> int:
        return sum(1 for e in self.events if e.kind == IONIZE)

    def ionized_intervals(self) -> list[tuple[float, float]]:
        """(start, end) spans with donor 1 ionized, clipped to the read window."""
        out = []
        start = None if self.initial_config.donor1_occupied else 0.0
        for e in self.events:
            if e.kind == IONIZE:
                start = e.time
            elif start is not None:
                out.append((start, e.time))
                start = None
        if start is not None:
            out.append((start, self.read_duration))
        return out

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Event times and level steps (+1 ionize, -1 neutralize)."""
        t = np.array([e.time for e in self.events], dtype=float)
        s = np.array([1.0 if e.kind == IONIZE else -1.0 for e in self.events])
        return t, s


# --------------------------------------------------------------------------
# rate table


def _odd_weights(params: DonorPairParams, cfg: NuclearConfig) -> dict:
    """|<s1 s2|X>|^2 for every eigenstate X and product label s1 s2."""
    es = electron_eigensystem(params, cfg)
    out = {}
    for lab in EIGEN_LABELS:
        st = es.state(lab)
        out[lab] = {p: st.probability(p) for p in ELECTRON_LABELS}
    return out


def build_rate_table(params: DonorPairParams, tp: TunnelingParams, cfg: NuclearConfig) -> dict:
    """Map each reachable configuration to ``(rates, targets, kinds)``."""
    ez = tp.zeeman_split if tp.zeeman_split is not None else params.zeeman_splitting
    mu = {"↑": 0.5 * ez, "↓": -0.5 * ez}
    t_k = tp.electron_temperature
    p_out = {s: fermi_factor(tp.mu_set_offset - mu[s], t_k) for s in "↓↑"}
    p_in = {s: fermi_factor(mu[s] - tp.mu_set_offset, t_k) for s in "↓↑"}

    table: dict = {}

    def add(src, rate, dst, kind):
        if rate <= 0:
            return
        rates, targets, kinds = table.setdefault(src, ([], [], []))
        rates.append(rate)
        targets.append(dst)
        kinds.append(kind)

    if cfg.parallel:
        weights = _odd_weights(params, cfg)
        for lab in EIGEN_LABELS:
            src = ChargeSpinConfig(True, lab)
            table.setdefault(src, ([], [], []))
            for prod, w in weights[lab].items():
                if w < 1e-15:
                    continue
                s1, s2 = prod
                add(src, tp.gamma_out * w * p_out[s1], ChargeSpinConfig(False, s2), IONIZE)
        b = tp.branching_s_vs_t0
        for s2 in "↓↑":
            src = ChargeSpinConfig(False, s2)
            table.setdefault(src, ([], [], []))
            for s1 in "↓↑":
                rate = tp.gamma_in * p_in[s1]
                prod = s1 + s2
                if prod == "↓↓":
                    add(src, rate, ChargeSpinConfig(True, "T-"), NEUTRALIZE)
                elif prod == "↑↑":
                    add(src, rate, ChargeSpinConfig(True, "T+"), NEUTRALIZE)
                else:
                    add(src, rate * b, ChargeSpinConfig(True, "S~"), NEUTRALIZE)
                    add(src, rate * (1 - b), ChargeSpinConfig(True, "T0~"), NEUTRALIZE)
    else:
        for prod in ELECTRON_LABELS:
            src = ChargeSpinConfig(True, prod)
            table.setdefault(src, ([], [], []))
            add(src, tp.gamma_out * p_out[prod[0]], ChargeSpinConfig(False, prod[1]), IONIZE)
        for s2 in "↓↑":
            src = ChargeSpinConfig(False, s2)
            table.setdefault(src, ([], [], []))
            for s1 in "↓↑":
                add(src, tp.gamma_in * p_in[s1], ChargeSpinConfig(True, s1 + s2), NEUTRALIZE)

    return {
        k: (np.asarray(r, dtype=float), tuple(t), tuple(kd)) for k, (r, t, kd) in table.items()
    }


# --------------------------------------------------------------------------
# sampling


def branch_probabilities(state: SpinState, cfg: NuclearConfig, params: DonorPairParams | None = None) -> dict:
    """Outcome probabilities of the projective measurement that starts a readout."""
    if state.dim != 4:
        raise ContractViolation("initial state must be an electron (4-dim) state")
    if cfg.parallel:
        es = electron_eigensystem(params or DonorPairParams(), cfg)
        probs = {lab: abs(es.state(lab).overlap(state)) ** 2 for lab in EIGEN_LABELS}
    else:
        probs = state.populations()
    total = sum(probs.values())
    return {k: v / total for k, v in probs.items()}


def _draw(rng: np.random.Generator, labels: Sequence, probs: np.ndarray):
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return labels[min(k, len(labels) - 1)]


def initial_branch(state: SpinState, cfg: NuclearConfig, rng: np.random.Generator,
                   params: DonorPairParams | None = None) -> ChargeSpinConfig:
    """Sample the eigenstate (parallel) or product state (anti-parallel) the readout starts from."""
    probs = branch_probabilities(state, cfg, params)
    labels = list(probs)
    return ChargeSpinConfig(True, _draw(rng, labels, np.array([probs[k] for k in labels])))


def _check_branch(branch: ChargeSpinConfig, cfg: NuclearConfig) -> None:
    if branch.donor1_occupied:
        allowed = EIGEN_LABELS if cfg.parallel else ELECTRON_LABELS
    else:
        allowed = ("↓", "↑")
    if branch.resident_state not in allowed:
        raise ContractViolation(f"state {branch.resident_state!r} inconsistent with nuclear config {cfg.value}")


def simulate_readout(
    branch: ChargeSpinConfig,
    params: DonorPairParams,
    tp: TunnelingParams,
    cfg: NuclearConfig,
    rng: np.random.Generator,
    seed: int = -1,
    table: dict | None = None,
) -> EventTimeline:
    """Gillespie simulation of one read window starting from ``branch``."""
    _check_branch(branch, cfg)
    if table is None:
        table = build_rate_table(params, tp, cfg)
    t = 0.0
    state = branch
    events = []
    while True:
        rates, targets, kinds = table[state]
        total = float(rates.sum()) if len(rates) else 0.0
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > tp.read_duration:
            break
        k = _draw(rng, range(len(rates)), rates)
        events.append(Event(t, kinds[k], state, targets[k]))
        state = targets[k]
    return EventTimeline(events, seed, branch, state, tp.read_duration)


def trajectory_seed(master_seed: int, index: int) -> int:
    """Per-trajectory seed derived from the master seed and the trajectory index."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def trajectory_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(Markov-chain stream, trace-noise stream) for a trajectory seed."""
    return np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1])


def _run_range(args):
    initial, start, stop, params, tp, cfg, master_seed = args
    table = build_rate_table(params, tp, cfg)
    probs = branch_probabilities(initial, cfg, params)
    labels = list(probs)
    p = np.array([probs[k] for k in labels])
    out = []
    for i in range(start, stop):
        seed = trajectory_seed(master_seed, i)
        rng, _ = trajectory_rngs(seed)
        branch = ChargeSpinConfig(True, _draw(rng, labels, p))
        out.append(simulate_readout(branch, params, tp, cfg, rng, seed=seed, table=table))
    return out


def run_batch(
    initial: SpinState,
    n: int,
    params: DonorPairParams,
    tp: TunnelingParams,
    cfg: NuclearConfig,
    master_seed: int,
    workers: int = 1,
) -> list[EventTimeline]:
    """``n`` independent readouts; trajectory ``i`` depends only on (master_seed, i)."""
    if n < 1:
        raise ContractViolation("n must be >= 1")
    if workers <= 1:
        return _run_range((initial, 0, n, params, tp, cfg, master_seed))
    from concurrent.futures import ProcessPoolExecutor

    bounds = np.linspace(0, n, workers + 1).astype(int)
    jobs = [(initial, int(a), int(b), params, tp, cfg, master_seed) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunks = list(pool.map(_run_range, jobs))
    return [tl for chunk in chunks for tl in chunk]
