import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


# Independent Pauli-matrix construction, kept separate from the package code.
PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def spin_ops():
    """S_x, S_y, S_z for a spin-1/2 with basis (down, up)."""
    perm = np.array([[0, 1], [1, 0]])
    return {k: 0.5 * perm @ v @ perm for k, v in PAULI.items()}


def kron_all(*ops):
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def oracle_hamiltonian(b0, g1, g2, a1, a2, j, gamma_n, mu_b_over_h=13.996244936e9):
    """H/h over |e1 e2 n1 n2> built term by term from Pauli matrices."""
    s = spin_ops()
    eye = np.eye(2)

    def on(site, op):
        ops = [eye] * 4
        ops[site] = op
        return kron_all(*ops)

    h = g1 * mu_b_over_h * b0 * on(0, s["z"]) + g2 * mu_b_over_h * b0 * on(1, s["z"])
    h += gamma_n * b0 * (on(2, s["z"]) + on(3, s["z"]))
    for c in "xyz":
        h += a1 * on(0, s[c]) @ on(2, s[c])
        h += a2 * on(1, s[c]) @ on(3, s[c])
        h += j * on(0, s[c]) @ on(1, s[c])
    return h


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, collected by tests/test_acceptance.py.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
