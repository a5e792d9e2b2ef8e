"""Two-donor spin Hamiltonian, eigensystems and ESR transition frequencies.

All energies are in frequency units (H/h, Hz) and fields in tesla.

Basis ordering is fixed as ``|e1> (x) |e2> (x) |n1> (x) |n2>`` with the down
state (``↓`` for electrons, ``⇓`` for nuclei) at index 0.  The flat index of a
basis word is therefore ``8*e1 + 4*e2 + 2*n1 + n2``.  Electron-only (4-dim)
states use the ordering ``↓↓, ↓↑, ↑↓, ↑↑``.

Eigenstates of the electron sector are labelled ``T-``, ``S~``, ``T0~`` and
``T+``.  ``S~`` is always the lower of the two odd-parity states; for weak
exchange it reduces to whichever product state (``↓↑`` or ``↑↓``) has the
lower Zeeman energy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import constants
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolation, InvalidParameterError

MU_B_OVER_H = constants.physical_constants["Bohr magneton in Hz/T"][0]

ELECTRON_LABELS = ("↓↓", "↓↑", "↑↓", "↑↑")
NUCLEAR_LABELS = ("⇓⇓", "⇓⇑", "⇑⇓", "⇑⇑")
FULL_LABELS = tuple(e + n for e in ELECTRON_LABELS for n in NUCLEAR_LABELS)
EIGEN_LABELS = ("T-", "S~", "T0~", "T+")

NORM_TOL = 1e-12

_SQ2 = math.sqrt(0.5)
SINGLET = np.array([0.0, _SQ2, -_SQ2, 0.0], dtype=complex)
TRIPLET_ZERO = np.array([0.0, _SQ2, _SQ2, 0.0], dtype=complex)


def _spin_half():
    sz = np.diag([-0.5, 0.5]).astype(complex)
    sp = np.array([[0, 0], [1, 0]], dtype=complex)  # |up><down|
    sm = sp.T.copy()
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    return sx, sy, sz


SX, SY, SZ = _spin_half()
_I2 = np.eye(2, dtype=complex)


def embed(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Place a single-spin operator on ``site`` of an ``n_sites`` spin-1/2 register."""
    out = np.array([[1.0 + 0j]])
    for k in range(n_sites):
        out = np.kron(out, op if k == site else _I2)
    return out


# electron (4-dim) operators, sites 0 and 1
E_SX = [embed(SX, k, 2) for k in range(2)]
E_SY = [embed(SY, k, 2) for k in range(2)]
E_SZ = [embed(SZ, k, 2) for k in range(2)]


# --------------------------------------------------------------------------
# parameters and configuration


@dataclass(frozen=True)
class DonorPairParams:
    """Physical constants of the exchange-coupled donor pair.

    ``a1`` and ``a2`` enter the Hamiltonian as ``A S.I``, so the electron
    detuning in the parallel nuclear regime is ``|a1 - a2| / 2``.  The
    defaults put that detuning at 90 kHz with a 117 MHz mean hyperfine.
    """

    b0: float = 1.0
    g1: float = 1.9985
    g2: float = 1.9985
    a1: float = 117.09e6
    a2: float = 116.91e6
    j: float = 10e6
    gamma_n: float = -17.23e6

    def __post_init__(self):
        for name in ("b0", "g1", "g2", "a1", "a2", "j", "gamma_n"):
            value = getattr(self, name)
            if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be a finite number, got {value!r}")
        if self.b0 < 0:
            raise InvalidParameterError("b0 must be >= 0")
        if self.j < 0:
            raise InvalidParameterError("j must be >= 0 (S1.S2 with positive J)")

    @classmethod
    def from_detunings(cls, mean_hyperfine=117e6, parallel_detuning=90e3, j=10e6, **kw):
        """Build parameters from the mean hyperfine and the parallel-regime detuning."""
        return cls(a1=mean_hyperfine + parallel_detuning, a2=mean_hyperfine - parallel_detuning, j=j, **kw)

    @property
    def gamma_e1(self) -> float:
        return self.g1 * MU_B_OVER_H

    @property
    def gamma_e2(self) -> float:
        return self.g2 * MU_B_OVER_H

    @property
    def zeeman_splitting(self) -> float:
        """Mean electron Zeeman splitting in Hz."""
        return 0.5 * (self.gamma_e1 + self.gamma_e2) * self.b0

    def replace(self, **changes) -> "DonorPairParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return DonorPairParams(**values)


class NuclearConfig(enum.Enum):
    DOWN_DOWN = "⇓⇓"
    DOWN_UP = "⇓⇑"
    UP_DOWN = "⇑⇓"
    UP_UP = "⇑⇑"

    @property
    def parallel(self) -> bool:
        return self in (NuclearConfig.DOWN_DOWN, NuclearConfig.UP_UP)

    @property
    def index(self) -> int:
        return NUCLEAR_LABELS.index(self.value)

    @property
    def m(self) -> tuple[float, float]:
        """Nuclear magnetic quantum numbers (m1, m2)."""
        return tuple(-0.5 if c == "⇓" else 0.5 for c in self.value)

    @classmethod
    def parse(cls, text: str) -> "NuclearConfig":
        key = text.strip()
        aliases = {
            "downdown": cls.DOWN_DOWN, "dd": cls.DOWN_DOWN,
            "downup": cls.DOWN_UP, "du": cls.DOWN_UP,
            "updown": cls.UP_DOWN, "ud": cls.UP_DOWN,
            "upup": cls.UP_UP, "uu": cls.UP_UP,
        }
        for member in cls:
            if key in (member.value, member.name):
                return member
        norm = key.lower().replace("_", "").replace("-", "")
        if norm in aliases:
            return aliases[norm]
        raise ValueError(f"unknown nuclear configuration {text!r}")


# --------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class SpinState:
    """Normalized amplitude vector over a labelled spin basis."""

    amplitudes: np.ndarray
    basis: tuple = ELECTRON_LABELS

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        basis = tuple(self.basis)
        if len(basis) != amps.size:
            raise ContractViolation(f"basis has {len(basis)} labels for {amps.size} amplitudes")
        if len(set(basis)) != len(basis):
            raise ContractViolation("basis labels must be unique")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > NORM_TOL * 10:
            raise ContractViolation(f"state not normalized (|psi|^2 = {norm2!r})")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def from_amplitudes(cls, amplitudes, basis=ELECTRON_LABELS, normalize=True) -> "SpinState":
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        if normalize:
            norm = np.linalg.norm(amps)
            if norm == 0:
                raise ContractViolation("zero vector cannot be normalized")
            amps = amps / norm
        return cls(amps, tuple(basis))

    @classmethod
    def product(cls, label: str, basis=None) -> "SpinState":
        if basis is None:
            basis = FULL_LABELS if len(label) == 4 else ELECTRON_LABELS
        basis = tuple(basis)
        amps = np.zeros(len(basis), dtype=complex)
        amps[basis.index(label)] = 1.0
        return cls(amps, basis)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def reordered(self, basis: Sequence[str]) -> "SpinState":
        basis = tuple(basis)
        if set(basis) != set(self.basis):
            raise ContractViolation("target basis does not match state labels")
        lookup = {lab: k for k, lab in enumerate(self.basis)}
        return SpinState(self.amplitudes[[lookup[b] for b in basis]], basis)

    def canonical(self) -> "SpinState":
        ref = ELECTRON_LABELS if self.dim == 4 else FULL_LABELS
        return self.reordered(ref)

    def overlap(self, other: "SpinState") -> complex:
        """<self|other>, matching components by label."""
        other = other.reordered(self.basis)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def probability(self, label: str) -> float:
        return float(abs(self.amplitudes[self.basis.index(label)]) ** 2)

    def populations(self) -> dict:
        return {lab: float(abs(a) ** 2) for lab, a in zip(self.basis, self.amplitudes)}


# --------------------------------------------------------------------------
# Hamiltonian


def _full_ops():
    ops = {}
    for name, op in (("x", SX), ("y", SY), ("z", SZ)):
        ops["S1" + name] = embed(op, 0, 4)
        ops["S2" + name] = embed(op, 1, 4)
        ops["I1" + name] = embed(op, 2, 4)
        ops["I2" + name] = embed(op, 3, 4)
    return ops


_OPS16 = _full_ops()


def _dot(a: str, b: str) -> np.ndarray:
    return sum(_OPS16[a + c] @ _OPS16[b + c] for c in "xyz")


_S1_I1 = _dot("S1", "I1")
_S2_I2 = _dot("S2", "I2")
_S1_S2 = _dot("S1", "S2")


def build_hamiltonian(params: DonorPairParams, basis: Sequence[str] | None = None) -> np.ndarray:
    """Full 16x16 Hamiltonian H/h in Hz.

    Terms: electron Zeeman, nuclear Zeeman, isotropic hyperfine ``A_i S_i.I_i``
    and exchange ``J S1.S2`` (no constant offset).  ``basis`` optionally
    permutes the canonical :data:`FULL_LABELS` ordering.
    """
    if not isinstance(params, DonorPairParams):
        raise InvalidParameterError("params must be a DonorPairParams")
    o = _OPS16
    h = (
        params.b0 * (params.gamma_e1 * o["S1z"] + params.gamma_e2 * o["S2z"])
        + params.gamma_n * params.b0 * (o["I1z"] + o["I2z"])
        + params.a1 * _S1_I1
        + params.a2 * _S2_I2
        + params.j * _S1_S2
    )
    if basis is not None:
        perm = [FULL_LABELS.index(b) for b in basis]
        h = h[np.ix_(perm, perm)]
    return h


def sector_indices(cfg: NuclearConfig) -> list[int]:
    """Flat indices of the electron sector with nuclei frozen in ``cfg``."""
    return [4 * e + cfg.index for e in range(4)]


def electron_hamiltonian(params: DonorPairParams, cfg: NuclearConfig) -> np.ndarray:
    """4x4 block of the full Hamiltonian with the nuclear state fixed to ``cfg``.

    This keeps the secular hyperfine terms and drops electron-nuclear
    flip-flops, which only shift levels at second order in A / (gamma_e B0).
    """
    idx = sector_indices(cfg)
    return build_hamiltonian(params)[np.ix_(idx, idx)]


def electron_frequencies(params: DonorPairParams, cfg: NuclearConfig) -> tuple[float, float]:
    """First-order ESR frequencies of each electron (exchange off)."""
    m1, m2 = cfg.m
    return (params.gamma_e1 * params.b0 + params.a1 * m1, params.gamma_e2 * params.b0 + params.a2 * m2)


def signed_detuning(params: DonorPairParams, cfg: NuclearConfig) -> float:
    f1, f2 = electron_frequencies(params, cfg)
    return f1 - f2


def detuning(params: DonorPairParams, cfg: NuclearConfig) -> float:
    """Electron-electron detuning |Delta| in Hz.

    Anti-parallel nuclei give the mean hyperfine (a1 + a2)/2, parallel nuclei
    give |a1 - a2|/2 (for equal g-factors).
    """
    return abs(signed_detuning(params, cfg))


def mixing_angle(j: float, delta: float) -> float:
    """theta with tan(2 theta) = J / |Delta|, in [0, pi/4]."""
    if j < 0:
        raise InvalidParameterError("j must be >= 0")
    return 0.5 * math.atan2(j, abs(delta))


def named_electron_states(theta: float, delta_sign: float = 1.0) -> dict[str, np.ndarray]:
    """Closed-form electron eigenstates in the ``↓↓, ↓↑, ↑↓, ↑↑`` ordering."""
    c, s = math.cos(theta), math.sin(theta)
    if delta_sign >= 0:
        s_tilde = [0, c, -s, 0]
        t_tilde = [0, s, c, 0]
    else:
        s_tilde = [0, -s, c, 0]
        t_tilde = [0, c, s, 0]
    return {
        "T-": np.array([1, 0, 0, 0], dtype=complex),
        "S~": np.array(s_tilde, dtype=complex),
        "T0~": np.array(t_tilde, dtype=complex),
        "T+": np.array([0, 0, 0, 1], dtype=complex),
    }


def _theta_from_block(block: np.ndarray) -> tuple[float, float]:
    # odd sector: diag = (-D/2 - J/4, +D/2 - J/4), off-diagonal J/2
    delta = float((block[2, 2] - block[1, 1]).real)
    j = 2.0 * float(block[1, 2].real)
    return 0.5 * math.atan2(abs(j), abs(delta)), (1.0 if delta >= 0 else -1.0)


# --------------------------------------------------------------------------
# eigensystems


@dataclass
class EigenSystem:
    energies: np.ndarray
    states: list
    labels: tuple
    basis: tuple = field(default=ELECTRON_LABELS)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ContractViolation(f"unknown eigenstate label {label!r}; have {self.labels}") from None

    def energy(self, label: str) -> float:
        return float(self.energies[self.index(label)])

    def state(self, label: str) -> SpinState:
        return self.states[self.index(label)]

    def matrix(self) -> np.ndarray:
        """Eigenvectors as columns, in ``basis`` ordering."""
        return np.column_stack([s.reordered(self.basis).amplitudes for s in self.states])


def _check_hermitian(h: np.ndarray) -> None:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ContractViolation("Hamiltonian must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.max(np.abs(h - h.conj().T)) > 1e-12 * scale:
        raise ContractViolation("matrix is not Hermitian within tolerance")


def _named_reference(h: np.ndarray, basis: tuple) -> tuple[list[str], np.ndarray]:
    """Closed-form named states for every electron sector present in ``h``."""
    n = h.shape[0]
    if n == 4:
        canon = [basis.index(lab) for lab in ELECTRON_LABELS]
        block = h[np.ix_(canon, canon)]
        theta, sign = _theta_from_block(block)
        named = named_electron_states(theta, sign)
        ref = np.zeros((4, 4), dtype=complex)
        for k, lab in enumerate(EIGEN_LABELS):
            ref[canon, k] = named[lab]
        return list(EIGEN_LABELS), ref
    if n == 16:
        names = []
        ref = np.zeros((16, 16), dtype=complex)
        col = 0
        for cfg in NuclearConfig:
            canon = [basis.index(ELECTRON_LABELS[e] + cfg.value) for e in range(4)]
            theta, sign = _theta_from_block(h[np.ix_(canon, canon)])
            named = named_electron_states(theta, sign)
            for lab in EIGEN_LABELS:
                ref[canon, col] = named[lab]
                names.append(f"{lab}|{cfg.value}")
                col += 1
        return names, ref
    raise ContractViolation(f"expected a 4x4 or 16x16 Hamiltonian, got {n}x{n}")


def _reproject_degenerate(energies, vecs, ref, tol):
    vecs = vecs.copy()
    start = 0
    n = len(energies)
    while start < n:
        stop = start + 1
        while stop < n and energies[stop] - energies[start] <= tol:
            stop += 1
        m = stop - start
        if m > 1:
            block = vecs[:, start:stop]
            proj = block @ (block.conj().T @ ref)
            weights = np.linalg.norm(proj, axis=0)
            chosen = []
            for k in np.argsort(-weights, kind="stable"):
                v = proj[:, k].copy()
                for u in chosen:
                    v -= u * np.vdot(u, v)
                nv = np.linalg.norm(v)
                if nv > 1e-6:
                    chosen.append(v / nv)
                if len(chosen) == m:
                    break
            if len(chosen) == m:
                vecs[:, start:stop] = np.column_stack(chosen)
        start = stop
    return vecs


def eigensystem(h: np.ndarray, basis: Sequence[str] | None = None) -> EigenSystem:
    """Diagonalize a 4x4 electron or 16x16 full Hamiltonian and label its states.

    Labels come from maximal overlap with the closed-form singlet/triplet-like
    states (mixing angle estimated from ``h`` itself).  Degenerate eigenvectors
    are first rotated onto those named states so labels stay stable.
    """
    h = np.asarray(h, dtype=complex)
    _check_hermitian(h)
    n = h.shape[0]
    if basis is None:
        basis = ELECTRON_LABELS if n == 4 else FULL_LABELS
    basis = tuple(basis)
    if len(basis) != n:
        raise ContractViolation("basis length does not match matrix size")
    h = 0.5 * (h + h.conj().T)
    energies, vecs = np.linalg.eigh(h)
    scale = max(1.0, float(np.max(np.abs(energies))))
    names, ref = _named_reference(h, basis)
    vecs = _reproject_degenerate(energies, vecs, ref, tol=1e-11 * scale)

    resid = np.linalg.norm(h @ vecs - vecs * energies, axis=0)
    if np.max(resid) > 1e-9 * scale:
        raise ContractViolation("eigen-decomposition residual too large")

    overlap = np.abs(ref.conj().T @ vecs) ** 2  # [named, eigen]
    # ties resolved in favour of energy ordering
    tiebreak = 1e-12 * np.arange(n)[None, :] * np.arange(n)[:, None]
    rows, cols = linear_sum_assignment(-(overlap + tiebreak))
    labels = [None] * n
    for r, c in zip(rows, cols):
        labels[c] = names[r]

    states = []
    for k in range(n):
        v = vecs[:, k]
        # fix the global phase so the largest component is real and positive
        big = np.argmax(np.abs(v))
        v = v * np.exp(-1j * np.angle(v[big]))
        states.append(SpinState.from_amplitudes(v, basis))
    return EigenSystem(energies=energies.copy(), states=states, labels=tuple(labels), basis=basis)


def electron_eigensystem(params: DonorPairParams, cfg: NuclearConfig) -> EigenSystem:
    return eigensystem(electron_hamiltonian(params, cfg), ELECTRON_LABELS)


def full_eigensystem(params: DonorPairParams) -> EigenSystem:
    return eigensystem(build_hamiltonian(params), FULL_LABELS)


def odd_parity_splitting(params: DonorPairParams, cfg: NuclearConfig, full: bool = True) -> float:
    """E(T0~) - E(S~) from the 16-dim (default) or the 4-dim electron diagonalization."""
    if full:
        es = full_eigensystem(params)
        return es.energy(f"T0~|{cfg.value}") - es.energy(f"S~|{cfg.value}")
    es = electron_eigensystem(params, cfg)
    return es.energy("T0~") - es.energy("S~")


# --------------------------------------------------------------------------
# projections


def eigenstate_projection(params: DonorPairParams, cfg: NuclearConfig, which: str, target: SpinState) -> float:
    """|<target|eigenstate>|^2 for an electron-sector eigenstate label."""
    if which not in EIGEN_LABELS:
        raise ContractViolation(f"unknown eigenstate label {which!r}")
    if target.dim != 4:
        raise ContractViolation("target must be an electron (4-dim) state")
    es = electron_eigensystem(params, cfg)
    return float(min(1.0, abs(target.overlap(es.state(which))) ** 2))


def projection_curves(ratios: Sequence[float]) -> dict[str, np.ndarray]:
    """Eigenstate projections versus J/|Delta| (Delta > 0 convention).

    Keys: ``"T0~:↑↓"``, ``"T0~:T0"``, ``"S~:↓↑"``, ``"S~:S"``.
    """
    up_down = SpinState.product("↑↓")
    down_up = SpinState.product("↓↑")
    singlet = SpinState(SINGLET)
    t_zero = SpinState(TRIPLET_ZERO)
    out = {k: np.empty(len(ratios)) for k in ("T0~:↑↓", "T0~:T0", "S~:↓↑", "S~:S")}
    for i, r in enumerate(ratios):
        # f1 - f2 = 1, J = r in arbitrary units
        h =0.5 * (E_SZ[0] - E_SZ[1]) + r * (E_SX[0] @ E_SX[1] + E_SY[0] @ E_SY[1] + E_SZ[0] @ E_SZ[1])
        es = eigensystem(h)
        t, s = es.state("T0~"), es.state("S~")
        out["T0~:↑↓"][i] = abs(up_down.overlap(t)) ** 2
        out["T0~:T0"][i] = abs(t_zero.overlap(t)) ** 2
        out["S~:↓↑"][i] = abs(down_up.overlap(s)) ** 2
        out["S~:S"][i] = abs(singlet.overlap(s)) ** 2
    return out


# --------------------------------------------------------------------------
# ESR


class EsrLine(NamedTuple):
    name: str
    lower: str
    upper: str
    frequency: float


def _dominant(es: EigenSystem, suffix: str, product: str) -> str:
    target = SpinState.product(product + suffix.lstrip("|"), es.basis)
    return max(
        (lab for lab in es.labels if lab.endswith(suffix)),
        key=lambda lab: abs(target.overlap(es.state(lab))) ** 2,
    )


def esr_lines(params: DonorPairParams, cfg: NuclearConfig, full: bool = True) -> list[EsrLine]:
    """ESR transitions as energy differences of an eigensystem.

    ``full=True`` uses the 16-dim Hamiltonian (labels like ``"T-|⇓⇓"``);
    ``full=False`` the 4-dim electron sector (labels like ``"T-"``).

    Parallel nuclei: ``f_beta`` (T- <-> S~), the two alpha lines
    (T- <-> T0~ and T0~ <-> T+, named ``f_alpha_minus`` / ``f_alpha_plus`` in
    order of increasing frequency) and ``f_gamma`` (S~ <-> T+).

    Anti-parallel nuclei: conditional flips of each electron, e.g.
    ``e1|e2=down`` for electron 1 flipping while electron 2 is down.
    """
    if full:
        es = full_eigensystem(params)
        sfx = "|" + cfg.value
    else:
        es = electron_eigensystem(params, cfg)
        sfx = ""

    def line(name, lo, hi):
        return EsrLine(name, lo, hi, es.energy(hi) - es.energy(lo))

    if cfg.parallel:
        a1 = line("", "T-" + sfx, "T0~" + sfx)
        a2 = line("", "T0~" + sfx, "T+" + sfx)
        lo_a, hi_a = sorted([a1, a2], key=lambda l: l.frequency)
        return [
            line("f_beta", "T-" + sfx, "S~" + sfx),
            lo_a._replace(name="f_alpha_minus"),
            hi_a._replace(name="f_alpha_plus"),
            line("f_gamma", "S~" + sfx, "T+" + sfx),
        ]
    dd, du, ud, uu = (_dominant(es, sfx, p) for p in ELECTRON_LABELS)
    return [
        line("e1|e2=down", dd, ud),
        line("e1|e2=up", du, uu),
        line("e2|e1=down", dd, du),
        line("e2|e1=up", ud, uu),
    ]


def esr_frequencies(params: DonorPairParams, cfg: NuclearConfig, full: bool = True) -> dict[str, float]:
    """Named ESR frequencies in Hz; parallel sets also carry the ``f_alpha`` midpoint."""
    lines = esr_lines(params, cfg, full)
    freqs = {l.name: l.frequency for l in lines}
    if cfg.parallel:
        freqs["f_alpha"] = 0.5 * (freqs["f_alpha_minus"] + freqs["f_alpha_plus"])
    return freqs


def alpha_splitting(params: DonorPairParams, cfg: NuclearConfig, full: bool = True) -> float:
    """Frequency gap between the two near-degenerate alpha lines."""
    if not cfg.parallel:
        raise ContractViolation("alpha lines exist only for parallel nuclei")
    f = esr_frequencies(params, cfg, full)
    return f["f_alpha_plus"] - f["f_alpha_minus"]
