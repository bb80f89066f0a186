"""Mean coherent energy of qubit rotations and its non-negativity.

For a thermal qubit rotated by ``theta`` about y (then any angle about z) the
mean coherent energy is ``sin^2(theta/2) tanh(beta/2)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import DensityMatrix, Hamiltonian, UnitaryOperator, dagger
from .errors import AngleOutOfRange, DimensionMismatch, InvalidBeta

log = logging.getLogger(__name__)

ARROW_TOL = 1e-10


def mean_c_trace(rho0: DensityMatrix, u: UnitaryOperator, h: Hamiltonian) -> float:
    """``tr[U rho0 U^dagger H] - tr[rho0 H]``."""
    if not rho0.dim == u.dim == h.dim:
        raise DimensionMismatch(f"dims rho0={rho0.dim}, U={u.dim}, H={h.dim}")
    rho_f = u.matrix @ rho0.matrix @ dagger(u.matrix)
    return float(np.real(np.trace(rho_f @ h.matrix)) - np.real(np.trace(rho0.matrix @ h.matrix)))


def mean_c_closed_form(theta, beta):
    """``sin^2(theta/2) tanh(beta/2)``; broadcasts over numpy arrays."""
    th = np.asarray(theta, dtype=float)
    be = np.asarray(beta, dtype=float)
    if np.any(th < 0) or np.any(th > math.pi):
        raise AngleOutOfRange("theta must lie in [0, pi]")
    if not np.all(np.isfinite(be)) or np.any(be < 0):
        raise InvalidBeta("beta must be finite and non-negative")
    out = np.sin(th / 2) ** 2 * np.tanh(be / 2)
    return float(out) if out.ndim == 0 else out


def bloch_z_after(theta: float, az0: float) -> float:
    """z-component of a y-axis rotation by ``theta`` of a vector with only ``az0``."""
    return az0 * math.cos(theta)


@dataclass(frozen=True)
class ArrowSweep:
    thetas: np.ndarray
    betas: np.ndarray
    mean_c: np.ndarray  # shape (len(thetas), len(betas))

    @property
    def min_value(self) -> float:
        return float(self.mean_c.min())

    @property
    def nonnegative(self) -> bool:
        return self.min_value >= -ARROW_TOL

    def rows(self):
        for i, th in enumerate(self.thetas):
            for j, be in enumerate(self.betas):
                yield float(th), float(be), float(self.mean_c[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "beta", "mean_C"])
            for th, be, mc in self.rows():
                w.writerow([repr(th), repr(be), repr(mc)])


def arrow_sweep(thetas, betas) -> ArrowSweep:
    """Tabulate the closed form over a ``(theta, beta)`` grid."""
    th = np.asarray(thetas, dtype=float).ravel()
    be = np.asarray(betas, dtype=float).ravel()
    if th.size == 0 or be.size == 0:
        raise ValueError("empty sweep grid")
    surface = mean_c_closed_form(th[:, None], be[None, :])
    sweep = ArrowSweep(th, be, np.atleast_2d(surface))
    if not sweep.nonnegative:
        log.error("mean coherent energy negative on grid: min=%g", sweep.min_value)
    return sweep
