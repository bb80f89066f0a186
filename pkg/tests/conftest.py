import math

import numpy as np
import pytest

from cohfluct.core import Hamiltonian, haar_unitary

THETA_REF = math.radians(86.6)


def random_hermitian(dim, rng, scale=1.0):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * (a + a.conj().T) / 2


def random_hamiltonian(dim, rng):
    """Random spectrum in a random eigenbasis."""
    energies = np.sort(rng.uniform(0.0, 2.0, dim))
    basis = haar_unitary(dim, rng).matrix
    return Hamiltonian.from_energies(energies, basis)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one verdict line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
