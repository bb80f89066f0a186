"""Finite-dimensional operators, states and qubit maps.

Every operator is carried as a read-only ``complex128`` numpy array wrapped in
a small frozen dataclass that validates its defining property once, at
construction time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    AngleOutOfRange,
    DimensionMismatch,
    InvalidBeta,
    InvalidState,
    NonHermitianInput,
    NonUnitaryInput,
)

#: validation tolerance (Hermiticity, unitarity, trace)
TOL = 1e-9
#: tolerance for reconstruction identities
RECON_TOL = 1e-12
#: eigenvalues closer than this are treated as one degenerate level
DEGENERACY_TOL = 1e-9
MAX_DIM = 64

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)

for _p in PAULIS:
    _p.setflags(write=False)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def as_square_matrix(m: Any) -> np.ndarray:
    """Coerce ``m`` to a square complex128 array, raising on bad shapes."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise DimensionMismatch(f"dimension {a.shape[0]} exceeds supported maximum {MAX_DIM}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def hermiticity_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - dagger(m))))


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-modulus entry is real and positive.

    Exact-modulus ties go to the lowest index (``argmax`` semantics).
    """
    v = np.array(vectors, dtype=complex, copy=True)
    idx = np.argmax(np.abs(v), axis=0)
    pivots = v[idx, np.arange(v.shape[1])]
    v *= np.conj(pivots) / np.abs(pivots)
    return v


def eig_hermitian(m: Any, tol: float = TOL) -> tuple[np.ndarray, np.ndarray]:
    """Spectral decomposition of a Hermitian matrix.

    Parameters
    ----------
    m : array_like
        Square Hermitian matrix.
    tol : float
        Maximum allowed ``|M - M^dagger|`` entry.

    Returns
    -------
    eigenvalues : ndarray
        Real eigenvalues in ascending order.
    eigenvectors : ndarray
        Orthonormal eigenvectors as columns, phase-normalised with
        :func:`fix_phases`.
    """
    a = as_square_matrix(m)
    err = hermiticity_error(a)
    if err > tol:
        raise NonHermitianInput(f"matrix is not Hermitian (max |M - M^H| = {err:.3e})")
    w, v = np.linalg.eigh(0.5 * (a + dagger(a)))
    return w, fix_phases(v)


def degenerate_groups(values: np.ndarray, tol: float = DEGENERACY_TOL) -> list[list[int]]:
    """Group indices of an ascending array into runs of nearly equal values."""
    groups: list[list[int]] = []
    for i, x in enumerate(values):
        if groups and x - values[groups[-1][0]] < tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Hermitian operator with its cached spectral decomposition."""

    matrix: np.ndarray
    energies: np.ndarray = field(init=False)
    vectors: np.ndarray = field(init=False)

    def __post_init__(self):
        a = as_square_matrix(self.matrix)
        w, v = eig_hermitian(a)
        object.__setattr__(self, "matrix", _frozen(a))
        object.__setattr__(self, "energies", _frozen(w))
        object.__setattr__(self, "vectors", _frozen(v))

    @classmethod
    def from_energies(cls, energies, basis=None) -> Hamiltonian:
        """Build ``sum_n E_n |n><n|`` from levels and an optional unitary basis."""
        e = np.asarray(energies, dtype=float)
        if basis is None:
            return cls(np.diag(e).astype(complex))
        b = as_square_matrix(basis)
        return cls((b * e) @ dagger(b))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def projector(self, n: int) -> np.ndarray:
        v = self.vectors[:, n]
        return np.outer(v, np.conj(v))

    def exp(self, z: complex) -> np.ndarray:
        """Return ``exp(z H)`` through the spectral decomposition."""
        return (self.vectors * np.exp(z * self.energies)) @ dagger(self.vectors)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semi-definite, unit-trace operator."""

    matrix: np.ndarray
    populations: np.ndarray = field(init=False)
    vectors: np.ndarray = field(init=False)

    def __post_init__(self):
        a = as_square_matrix(self.matrix)
        tr = np.trace(a)
        if abs(tr - 1.0) > TOL:
            raise InvalidState(f"trace is {tr:.12g}, expected 1")
        w, v = eig_hermitian(a)
        if w[0] < -TOL:
            raise InvalidState(f"negative eigenvalue {w[0]:.3e}")
        object.__setattr__(self, "matrix", _frozen(a))
        object.__setattr__(self, "populations", _frozen(np.clip(w, 0.0, 1.0)))
        object.__setattr__(self, "vectors", _frozen(v))

    @classmethod
    def pure(cls, psi) -> DensityMatrix:
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, np.conj(psi)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def expectation(self, op) -> float:
        m = op.matrix if isinstance(op, Hamiltonian) else np.asarray(op)
        return float(np.real(np.trace(self.matrix @ m)))

    def evolve(self, u: UnitaryOperator) -> DensityMatrix:
        return DensityMatrix(u.matrix @ self.matrix @ dagger(u.matrix))


@dataclass(frozen=True, eq=False)
class UnitaryOperator:
    """Unitary matrix; its time-reversal partner is :meth:`dagger`."""

    matrix: np.ndarray

    def __post_init__(self):
        a = as_square_matrix(self.matrix)
        err = float(np.max(np.abs(dagger(a) @ a - np.eye(a.shape[0]))))
        if err > TOL:
            raise NonUnitaryInput(f"matrix is not unitary (max |U^H U - 1| = {err:.3e})")
        object.__setattr__(self, "matrix", _frozen(a))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dagger(self) -> UnitaryOperator:
        return UnitaryOperator(dagger(self.matrix))

    inverse = dagger

    def transition_probabilities(self) -> np.ndarray:
        """``|<m|U|n>|^2`` indexed ``[m, n]`` in the computational basis."""
        return np.abs(self.matrix) ** 2

    @classmethod
    def identity(cls, dim: int) -> UnitaryOperator:
        return cls(np.eye(dim, dtype=complex))


@dataclass(frozen=True)
class BlochVector:
    ax: float
    ay: float
    az: float

    def __post_init__(self):
        if self.norm() > 1.0 + TOL:
            raise InvalidState(f"Bloch vector length {self.norm():.12g} exceeds 1")

    def norm(self) -> float:
        return math.sqrt(self.ax**2 + self.ay**2 + self.az**2)

    def is_pure(self, tol: float = TOL) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.az])


def check_beta(beta) -> float:
    try:
        b = float(beta)
    except (TypeError, ValueError) as exc:
        raise InvalidBeta(f"beta must be a real number, got {beta!r}") from exc
    if not math.isfinite(b) or b < 0:
        raise InvalidBeta(f"beta must be finite and non-negative, got {beta!r}")
    return b


def gibbs_populations(energies: np.ndarray, beta: float) -> np.ndarray:
    """Boltzmann weights ``exp(-beta E_n) / Z``, shifted for overflow safety."""
    beta = check_beta(beta)
    e = np.asarray(energies, dtype=float)
    w = np.exp(-beta * (e - e.min()))
    return w / w.sum()


def thermal_state(h: Hamiltonian, beta: float) -> DensityMatrix:
    """Gibbs state ``exp(-beta H) / Z``, built diagonal in the eigenbasis of ``h``."""
    p = gibbs_populations(h.energies, beta)
    v = h.vectors
    return DensityMatrix((v * p) @ dagger(v))


def partition_function(h: Hamiltonian, beta: float) -> float:
    beta = check_beta(beta)
    return float(np.sum(np.exp(-beta * h.energies)))


def qubit_hamiltonian(e0: float = 0.0, e1: float = 1.0) -> Hamiltonian:
    return Hamiltonian.from_energies([e0, e1])


def beta_from_weights(p0: float, p1: float, gap: float = 1.0) -> float:
    """Inverse temperature encoded by two populations, ``ln(p0/p1) / gap``."""
    return math.log(p0 / p1) / gap


def rotation_unitary(theta: float, phi: float = 0.0) -> UnitaryOperator:
    """``exp(-i sigma_z phi/2) exp(-i sigma_y theta/2)``: y-rotation then z-rotation.

    ``theta`` must lie in ``[0, pi]`` and ``phi`` in ``[0, 2 pi)``.
    """
    if not (-RECON_TOL <= theta <= math.pi + RECON_TOL):
        raise AngleOutOfRange(f"theta={theta!r} outside [0, pi]")
    if not (-RECON_TOL <= phi < 2 * math.pi):
        raise AngleOutOfRange(f"phi={phi!r} outside [0, 2 pi)")
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    em, ep = np.exp(-0.5j * phi), np.exp(0.5j * phi)
    return UnitaryOperator(np.array([[c * em, -s * em], [s * ep, c * ep]]))


def hwp_jones(alpha: float) -> UnitaryOperator:
    """Half-wave plate Jones matrix with its fast axis at ``alpha`` radians.

    At ``alpha = theta/4`` the squared moduli of the entries equal those of
    ``rotation_unitary(theta, .)``, so both give the same TPM statistics.
    """
    a = math.fmod(alpha, math.pi)
    c, s = math.cos(2 * a), math.sin(2 * a)
    return UnitaryOperator(np.array([[c, s], [s, -c]], dtype=complex))


def bloch_vector(rho) -> BlochVector:
    """Bloch vector ``a_i = tr(rho sigma_i)``, so that ``rho = (1 + a.sigma)/2``."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else as_square_matrix(rho)
    if m.shape != (2, 2):
        raise DimensionMismatch(f"Bloch vectors need a qubit state, got dim {m.shape[0]}")
    ax, ay, az = (float(np.real(np.trace(m @ s))) for s in PAULIS)
    return BlochVector(ax, ay, az)


def bloch_to_state(a) -> DensityMatrix:
    if isinstance(a, BlochVector):
        a = a.as_array()
    ax, ay, az = (float(x) for x in a)
    BlochVector(ax, ay, az)
    m = 0.5 * (np.eye(2) + ax * SIGMA_X + ay * SIGMA_Y + az * SIGMA_Z)
    return DensityMatrix(m)


def haar_unitary(dim: int, rng: np.random.Generator) -> UnitaryOperator:
    """Haar-distributed unitary from the QR decomposition of a Ginibre matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return UnitaryOperator(q * (d / np.abs(d)))


def commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a @ b - b @ a)))


# -- serialisation ---------------------------------------------------------


def matrix_to_dict(m) -> dict:
    """Row-major ``[re, im]`` pairs plus ``dim``; exact through :mod:`json`."""
    a = as_square_matrix(getattr(m, "matrix", m))
    entries = [[float(z.real), float(z.imag)] for z in a.ravel()]
    return {"dim": int(a.shape[0]), "entries": entries}


def matrix_from_dict(d: dict) -> np.ndarray:
    try:
        dim = int(d["dim"])
        entries = d["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed matrix record: {exc}") from exc
    if len(entries) != dim * dim:
        raise DimensionMismatch(f"dim={dim} but {len(entries)} entries given")
    flat = np.array([complex(float(re), float(im)) for re, im in entries])
    return flat.reshape(dim, dim)


def dumps_matrix(m) -> str:
    return json.dumps(matrix_to_dict(m))


def loads_matrix(s: str) -> np.ndarray:
    return matrix_from_dict(json.loads(s))
