"""Driven electron dynamics in the rotating frame, state preparation and Husimi maps.

Evolution uses the 4-dim electron sector with the nuclei frozen.  The frame
rotates at the instantaneous carrier frequency about the total S_z; because
the static Hamiltonian conserves total S_z, the only approximation is the
rotating-wave one (error of order f_R / (gamma_e B0)).

Within each sample step the generator is held constant and exponentiated
exactly, so the norm is preserved by construction.  Returned states live in
the rotating frame of the carrier; populations and S_z projections are the
same in either frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import AccuracyError, ContractViolation, ManifoldError, UnsupportedConfigurationError
from .spin_model import (
    E_SX,
    E_SY,
    E_SZ,
    EIGEN_LABELS,
    ELECTRON_LABELS,
    SINGLET,
    DonorPairParams,
    NuclearConfig,
    SpinState,
    alpha_splitting,
    electron_eigensystem,
    electron_hamiltonian,
    esr_frequencies,
    esr_lines,
)

TWO_PI = 2.0 * math.pi
SZ_TOTAL = E_SZ[0] + E_SZ[1]
STEPS_PER_PERIOD = 50


@dataclass(frozen=True)
class DrivePulse:
    """Microwave pulse in the rotating-wave picture.

    ``carrier_frequency`` is the frequency at the pulse midpoint; with a
    nonzero ``chirp_rate`` the instantaneous frequency is
    ``carrier + chirp_rate * (t - duration / 2)``.  ``rabi_frequency`` is the
    single-spin Rabi frequency, so a lone spin needs ``1 / (2 f_R)`` for a pi
    rotation.
    """

    carrier_frequency: float
    rabi_frequency: float
    duration: float
    phase: float = 0.0
    chirp_rate: float = 0.0

    def __post_init__(self):
        if self.rabi_frequency < 0:
            raise ContractViolation("rabi_frequency must be >= 0")
        if self.duration < 0:
            raise ContractViolation("duration must be >= 0")

    def frequency_at(self, t):
        return self.carrier_frequency + self.chirp_rate * (np.asarray(t) - 0.5 * self.duration)

    @property
    def frequency_range(self) -> tuple[float, float]:
        f0, f1 = self.frequency_at(0.0), self.frequency_at(self.duration)
        return float(min(f0, f1)), float(max(f0, f1))


@dataclass
class EvolutionRecord:
    times: np.ndarray
    z_projections: np.ndarray  # (n_times, 2): <S_z1>, <S_z2>
    eigenstate_populations: np.ndarray  # (n_times, 4) in EIGEN_LABELS order
    final_state: SpinState
    labels: tuple = EIGEN_LABELS

    def population(self, label: str) -> np.ndarray:
        return self.eigenstate_populations[:, self.labels.index(label)]

    def rows(self):
        for t, (z1, z2), pops in zip(self.times, self.z_projections, self.eigenstate_populations):
            yield (float(t), float(z1), float(z2), *map(float, pops))


def _drive_operator(params: DonorPairParams, phase: float) -> np.ndarray:
    g = 0.5 * (params.g1 + params.g2)
    out = np.zeros((4, 4), dtype=complex)
    for k, gk in enumerate((params.g1, params.g2)):
        out += (gk / g) * (math.cos(phase) * E_SX[k] + math.sin(phase) * E_SY[k])
    return out


def transition_matrix_element(params: DonorPairParams, cfg: NuclearConfig, lower: str, upper: str) -> float:
    """|<upper| sum_i (S_x,i) |lower>| between electron eigenstates (unit drive)."""
    es = electron_eigensystem(params, cfg)
    d = _drive_operator(params, 0.0)
    a = es.state(lower).canonical().amplitudes
    b = es.state(upper).canonical().amplitudes
    return float(abs(np.vdot(b, d @ a)))


def max_sample_step(pulse: DrivePulse, params: DonorPairParams, cfg: NuclearConfig) -> float:
    """Coarsest step accepted by :func:`evolve` for this pulse."""
    scale = pulse.rabi_frequency
    lo, hi = pulse.frequency_range
    for line in esr_lines(params, cfg, full=False):
        scale = max(scale, abs(line.frequency - lo), abs(line.frequency - hi))
    if scale == 0:
        return math.inf
    return 1.0 / (STEPS_PER_PERIOD * scale)


def _generators(params, cfg, pulse, f_c):
    """Stack of rotating-frame generators, one per carrier value in ``f_c``."""
    h0 = electron_hamiltonian(params, cfg)
    drive = pulse.rabi_frequency * _drive_operator(params, pulse.phase)
    f_c = np.atleast_1d(np.asarray(f_c, dtype=float))
    return (h0 + drive)[None, :, :] - f_c[:, None, None] * SZ_TOTAL[None, :, :]


def _propagators(gens: np.ndarray, dts: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(gens)
    phases = np.exp(-1j * TWO_PI * vals * np.asarray(dts)[:, None])
    return np.einsum("nij,nj,nkj->nik", vecs, phases, vecs.conj())


def _step_grid(duration: float, step: float) -> np.ndarray:
    n_full = int(math.floor(duration / step + 1e-9))
    edges = list(np.arange(n_full + 1) * step)
    if duration - edges[-1] > 1e-9 * step:
        edges.append(duration)
    else:
        edges[-1] = duration
    return np.asarray(edges)


def _as_electron_state(state: SpinState) -> np.ndarray:
    if state.dim != 4:
        raise ContractViolation("drive dynamics act on electron (4-dim) states")
    return state.reordered(ELECTRON_LABELS).amplitudes.copy()


def evolve(
    initial: SpinState,
    pulse: DrivePulse,
    params: DonorPairParams,
    cfg: NuclearConfig,
    sample_step: float,
) -> EvolutionRecord:
    """Propagate ``initial`` under ``pulse`` and record every ``sample_step``."""
    if sample_step <= 0:
        raise ContractViolation("sample_step must be > 0")
    limit = max_sample_step(pulse, params, cfg)
    if sample_step > limit * (1 + 1e-12):
        raise AccuracyError(f"sample_step {sample_step:.3e} s exceeds the accuracy limit {limit:.3e} s")
    psi = _as_electron_state(initial)

    edges = _step_grid(pulse.duration, sample_step) if pulse.duration > 0 else np.array([0.0])
    dts = np.diff(edges)
    if pulse.chirp_rate == 0:
        gen = _generators(params, cfg, pulse, pulse.carrier_frequency)
        uniq = {float(dt) for dt in dts}
        cache = {dt: _propagators(gen, np.array([dt]))[0] for dt in uniq}
        steps = [cache[float(dt)] for dt in dts]
    else:
        mids = 0.5 * (edges[:-1] + edges[1:])
        steps = _propagators(_generators(params, cfg, pulse, pulse.frequency_at(mids)), dts)

    es = electron_eigensystem(params, cfg)
    eig = np.column_stack([es.state(lab).canonical().amplitudes for lab in EIGEN_LABELS])
    sz = np.stack([np.real(np.diag(E_SZ[0])), np.real(np.diag(E_SZ[1]))], axis=1)

    traj = np.empty((len(edges), 4), dtype=complex)
    traj[0] = psi
    for k, u in enumerate(steps):
        psi = u @ psi
        traj[k + 1] = psi

    norms = np.linalg.norm(traj, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-9:
        raise ContractViolation("norm drifted beyond 1e-9 during evolution")
    probs = np.abs(traj) ** 2
    pops = np.abs(traj @ eig.conj()) ** 2
    final = SpinState.from_amplitudes(traj[-1], ELECTRON_LABELS)
    return EvolutionRecord(times=edges, z_projections=probs @ sz, eigenstate_populations=pops, final_state=final)


def propagate(initial: SpinState, pulse: DrivePulse, params: DonorPairParams, cfg: NuclearConfig,
              step: float | None = None) -> SpinState:
    """Final state only.  Steps are multiplied pairwise, which is much faster for long chirps."""
    psi = _as_electron_state(initial)
    if pulse.duration == 0:
        return SpinState.from_amplitudes(psi, ELECTRON_LABELS)
    if step is None:
        step = max_sample_step(pulse, params, cfg)
    step = min(step, pulse.duration)
    if pulse.chirp_rate == 0:
        u = _propagators(_generators(params, cfg, pulse, pulse.carrier_frequency), np.array([pulse.duration]))[0]
        return SpinState.from_amplitudes(u @ psi, ELECTRON_LABELS)
    edges = _step_grid(pulse.duration, step)
    dts = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    us = _propagators(_generators(params, cfg, pulse, pulse.frequency_at(mids)), dts)
    while len(us) > 1:
        if len(us) % 2:
            us = np.concatenate([us, np.eye(4, dtype=complex)[None]], axis=0)
        us = us[1::2] @ us[0::2]
    out = us[0] @ psi
    if abs(np.linalg.norm(out) - 1.0) > 1e-9:
        raise ContractViolation("norm drifted beyond 1e-9 during propagation")
    return SpinState.from_amplitudes(out, ELECTRON_LABELS)


# --------------------------------------------------------------------------
# pi-pulse calibration and state preparation


def alpha_carrier(params: DonorPairParams, cfg: NuclearConfig) -> float:
    """Midpoint of the two alpha lines in the electron sector."""
    if not cfg.parallel:
        raise UnsupportedConfigurationError("the alpha transition needs parallel nuclei")
    return esr_frequencies(params, cfg, full=False)["f_alpha"]


def calibrate_pi_duration(params: DonorPairParams, cfg: NuclearConfig, rabi_frequency: float = 1e6,
                          carrier: float | None = None, phase: float = 0.0,
                          start: str = "↓↓", target: str = "↑↑") -> float:
    """Duration maximizing the ``start`` -> ``target`` transfer at ``carrier``.

    Defaults give the T- -> T+ pulse at the f_alpha midpoint.  The search
    brackets the ideal value ``1 / (2 f_R)`` by +/-30 %.
    """
    if rabi_frequency <= 0:
        raise ContractViolation("rabi_frequency must be > 0")
    if carrier is None:
        carrier = alpha_carrier(params, cfg)
    gen = _generators(params, cfg, DrivePulse(carrier, rabi_frequency, 0.0, phase), carrier)[0]
    vals, vecs = np.linalg.eigh(gen)
    a = vecs.conj().T @ SpinState.product(start).amplitudes
    b = vecs.conj().T @ SpinState.product(target).amplitudes

    def loss(t):
        amp = np.vdot(b, np.exp(-1j * TWO_PI * vals * t) * a)
        return -abs(amp) ** 2

    guess = 1.0 / (2.0 * rabi_frequency)
    res = minimize_scalar(loss, bounds=(0.7 * guess, 1.3 * guess), method="bounded",
                          options={"xatol": guess * 1e-10})
    return float(res.x)


def hard_pulse_check(rabi_frequency: float, params: DonorPairParams, cfg: NuclearConfig) -> tuple[bool, float]:
    """Whether both alpha lines are driven together: 2 f_R > alpha splitting.

    Returns ``(ok, margin)`` with ``margin = 2 f_R / splitting``.
    """
    if not cfg.parallel:
        raise UnsupportedConfigurationError("hard-pulse criterion applies to parallel nuclei")
    split = abs(alpha_splitting(params, cfg, full=False))
    if split == 0:
        return rabi_frequency > 0, (math.inf if rabi_frequency > 0 else 0.0)
    margin = 2.0 * rabi_frequency / split
    return margin > 1.0, margin


def prepare(label: str, params: DonorPairParams, cfg: NuclearConfig, rabi_frequency: float = 1e6,
            phase: float = 0.0, sample_step: float | None = None) -> SpinState:
    """Prepare ``Tminus``, ``TX`` or ``Tplus`` starting from T- with a pulse at f_alpha."""
    if not cfg.parallel:
        raise UnsupportedConfigurationError("T-/TX/T+ preparation needs parallel nuclei")
    key = label.replace("_", "").replace("-", "minus").replace("+", "plus").lower()
    t_minus = SpinState.product("↓↓")
    if key in ("tminus", "t minus"):
        return t_minus
    if key not in ("tx", "tplus"):
        raise ContractViolation(f"unknown preparation label {label!r}")
    carrier = alpha_carrier(params, cfg)
    t_pi = calibrate_pi_duration(params, cfg, rabi_frequency, carrier, phase)
    duration = t_pi if key == "tplus" else 0.5 * t_pi
    pulse = DrivePulse(carrier, rabi_frequency, duration, phase)
    step = sample_step or max_sample_step(pulse, params, cfg)
    return evolve(t_minus, pulse, params, cfg, step).final_state


# --------------------------------------------------------------------------
# adiabatic passage


def adiabatic_invert(
    initial: SpinState,
    center: float,
    span: float,
    duration: float,
    rabi_frequency: float,
    params: DonorPairParams,
    cfg: NuclearConfig,
    phase: float = 0.0,
) -> SpinState:
    """Linear chirp from ``center - span/2`` to ``center + span/2``."""
    if span <= 0 or duration <= 0:
        raise ContractViolation("span and duration must be > 0")
    pulse = DrivePulse(center, rabi_frequency, duration, phase, chirp_rate=span / duration)
    return propagate(initial, pulse, params, cfg)


def landau_zener_inversion(rabi_frequency: float, chirp_rate: float) -> float:
    """Adiabatic inversion probability 1 - exp(-pi^2 f_R^2 / rate) for a full sweep.

    With coupling V = pi f_R (rad/s) and sweep alpha = 2 pi rate, the diabatic
    probability is exp(-2 pi V^2 / alpha).
    """
    return 1.0 - math.exp(-(math.pi ** 2) * rabi_frequency ** 2 / abs(chirp_rate))


# --------------------------------------------------------------------------
# Husimi representation on the triplet (S = 1) sphere


@dataclass
class HusimiGrid:
    theta: np.ndarray
    phi: np.ndarray
    q: np.ndarray  # (n_theta, n_phi)

    def normalization(self) -> float:
        """(2S+1)/(4 pi) * integral Q dOmega with trapezoid weights."""
        wt = np.trapezoid(np.eye(len(self.theta)), self.theta, axis=1) * np.sin(self.theta)
        wp = np.trapezoid(np.eye(len(self.phi)), self.phi, axis=1)
        return float(3.0 / (4.0 * math.pi) * wt @ self.q @ wp)

    def argmax(self) -> tuple[float, float]:
        i, k = np.unravel_index(np.argmax(self.q), self.q.shape)
        return float(self.theta[i]), float(self.phi[k])


def triplet_components(state: SpinState) -> np.ndarray:
    """Amplitudes on (m=+1, 0, -1) = (T+, T0, T-)."""
    v = _as_electron_state(state)
    t0 = (v[1] + v[2]) * math.sqrt(0.5)
    return np.array([v[3], t0, v[0]])


def husimi(state: SpinState, n_theta: int = 181, n_phi: int = 361) -> HusimiGrid:
    """Q(theta, phi) = |<theta, phi|psi>|^2 with spin-1 coherent states."""
    v = _as_electron_state(state)
    singlet_pop = abs(np.vdot(SINGLET, v)) ** 2
    if singlet_pop >= 0.01:
        raise ManifoldError(f"singlet population {singlet_pop:.3g} too large for a triplet Husimi map")
    c = triplet_components(state)
    theta = np.linspace(0.0, math.pi, n_theta)
    phi = np.linspace(0.0, 2.0 * math.pi, n_phi)
    ct, st = np.cos(theta / 2)[:, None], np.sin(theta / 2)[:, None]
    eph = np.exp(1j * phi)[None, :]
    # <theta,phi| has conjugated coherent amplitudes
    amp = (ct ** 2 * eph * c[0]) + (math.sqrt(2) * ct * st * c[1]) + (st ** 2 * eph.conj() * c[2])
    return HusimiGrid(theta=theta, phi=phi, q=np.abs(amp) ** 2)
