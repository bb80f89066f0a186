"""Exact two-point-measurement statistics of the coherent energy.

The first projective energy measurement finds level ``n`` with Gibbs weight
``P_n``; after the process ``U`` the second finds ``m`` with probability
``|<m|U|n>|^2``. The coherent energy of that run is ``E_m - E_n``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import (
    DEGENERACY_TOL,
    TOL,
    Hamiltonian,
    UnitaryOperator,
    check_beta,
    dagger,
    gibbs_populations,
    thermal_state,
)
from .errors import DimensionMismatch, MismatchedProtocol, SpectrumChangeWarning

#: rows of a DFT report with either probability below this are undefined
POSITIVITY_FLOOR = 1e-300


@dataclass(frozen=True)
class TPMDistribution:
    """Discrete coherent-energy distribution.

    ``support`` is strictly ascending; ``probs`` are the matching
    probabilities. ``beta`` is the inverse temperature of the initial
    thermal state.
    """

    beta: float
    support: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ValueError("support and probs differ in length")
        if any(p < 0 for p in self.probs):
            raise ValueError("negative probability")
        if any(b - a <= 0 for a, b in zip(self.support, self.support[1:])):
            raise ValueError("support must be strictly ascending")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"probabilities sum to {total!r}")

    def prob(self, c: float, tol: float = DEGENERACY_TOL) -> float:
        """Probability at coherent energy ``c`` (0 when off-support)."""
        for x, p in zip(self.support, self.probs):
            if abs(x - c) < tol:
                return p
        return 0.0

    def as_dict(self) -> dict[float, float]:
        return dict(zip(self.support, self.probs))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["C", "prob"])
            for c, p in zip(self.support, self.probs):
                w.writerow([repr(c), repr(p)])


def bin_transitions(gaps: np.ndarray, weights: np.ndarray, beta: float,
                    tol: float = DEGENERACY_TOL) -> TPMDistribution:
    """Merge transitions whose energy differences agree within ``tol``.

    Bins with exactly zero total probability are dropped, so a process that
    forbids a transition does not leave a spurious support point.
    """
    gaps = np.asarray(gaps, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    order = np.argsort(gaps, kind="stable")
    support, probs = [], []
    start = 0
    while start < len(order):
        stop = start + 1
        while stop < len(order) and gaps[order[stop]] - gaps[order[start]] < tol:
            stop += 1
        idx = order[start:stop]
        p = math.fsum(weights[idx])
        if p > 0.0:
            g = gaps[idx]
            if np.all(g == g[0]):
                c = g[0]
            else:
                c = math.fsum(weights[idx] * g) / p
            if support and c <= support[-1]:
                c = float(np.nextafter(support[-1], np.inf))
            support.append(float(c))
            probs.append(p)
        start = stop
    total = math.fsum(probs)
    probs = [p / total for p in probs]
    return TPMDistribution(beta=float(beta), support=tuple(support), probs=tuple(probs))


def _check_dims(h: Hamiltonian, u: UnitaryOperator) -> None:
    if h.dim != u.dim:
        raise DimensionMismatch(f"Hamiltonian dim {h.dim} != unitary dim {u.dim}")


def transition_matrix(h: Hamiltonian, u: UnitaryOperator,
                      final: Hamiltonian | None = None) -> np.ndarray:
    """``|<m|U|n>|^2`` with ``|n>`` from ``h`` and ``|m>`` from ``final`` (default ``h``)."""
    final = h if final is None else final
    amp = dagger(final.vectors) @ u.matrix @ h.vectors
    return np.abs(amp) ** 2


def tpm_distribution(h: Hamiltonian, beta: float, u: UnitaryOperator, *,
                     final_hamiltonian: Hamiltonian | None = None,
                     spectrum_preserving_check: bool = True) -> TPMDistribution:
    """Coherent-energy distribution of the TPM protocol for a thermal start.

    Parameters
    ----------
    h : Hamiltonian
        Hamiltonian of the first measurement (and of the thermal state).
    beta : float
        Inverse temperature of the initial thermal state.
    u : UnitaryOperator
        The process.
    final_hamiltonian : Hamiltonian, optional
        Hamiltonian of the second measurement. Defaults to ``h``. If its
        spectrum differs from ``h`` the energy difference also contains work,
        and a :class:`SpectrumChangeWarning` is issued when
        ``spectrum_preserving_check`` is on.
    """
    beta = check_beta(beta)
    _check_dims(h, u)
    final = h
    if final_hamiltonian is not None:
        if final_hamiltonian.dim != h.dim:
            raise DimensionMismatch("initial and final Hamiltonians differ in dimension")
        final = final_hamiltonian
        if spectrum_preserving_check and np.max(np.abs(final.energies - h.energies)) > TOL:
            warnings.warn(
                "final Hamiltonian spectrum differs from the initial one; the TPM "
                "energy difference is not purely coherent energy",
                SpectrumChangeWarning,
                stacklevel=2,
            )
    p_n = gibbs_populations(h.energies, beta)
    trans = transition_matrix(h, u, final)  # [m, n]
    weights = trans * p_n[np.newaxis, :]
    gaps = final.energies[:, np.newaxis] - h.energies[np.newaxis, :]
    return bin_transitions(gaps, weights, beta)


def backward_distribution(h: Hamiltonian, beta: float, u: UnitaryOperator,
                          **kwargs) -> TPMDistribution:
    """TPM distribution of the time-reversed protocol (process ``U^dagger``)."""
    return tpm_distribution(h, beta, u.dagger(), **kwargs)


def characteristic_function(dist: TPMDistribution, q: complex) -> complex:
    """``sum_i p_i exp(i q C_i)``."""
    c = np.asarray(dist.support)
    p = np.asarray(dist.probs)
    return complex(np.sum(p * np.exp(1j * q * c)))


def characteristic_function_trace(h: Hamiltonian, beta: float, u: UnitaryOperator,
                                  q: complex) -> complex:
    """``tr{U^dagger exp(iqH) U exp(-iqH) rho_0}`` evaluated with full matrices."""
    _check_dims(h, u)
    rho0 = thermal_state(h, beta).matrix
    um = u.matrix
    m = dagger(um) @ h.exp(1j * q) @ um @ h.exp(-1j * q) @ rho0
    return complex(np.trace(m))


def ift_value(dist: TPMDistribution) -> float:
    """``<exp(-beta C)>``; equals 1 for a thermal start."""
    c = np.asarray(dist.support)
    p = np.asarray(dist.probs)
    return math.fsum(p * np.exp(-dist.beta * c))


def mean_coherent_energy(dist: TPMDistribution) -> float:
    return math.fsum(np.asarray(dist.probs) * np.asarray(dist.support))


@dataclass(frozen=True)
class DFTRow:
    C: float
    P_fwd: float
    P_bwd_neg: float
    log_ratio: float | None
    beta_C: float
    residual: float | None

    @property
    def defined(self) -> bool:
        return self.residual is not None


@dataclass(frozen=True)
class DFTReport:
    beta: float
    rows: tuple[DFTRow, ...]

    def defined_rows(self) -> list[DFTRow]:
        return [r for r in self.rows if r.defined]

    def max_residual(self) -> float:
        res = [abs(r.residual) for r in self.defined_rows()]
        return max(res) if res else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["C", "P_fwd", "P_bwd_neg", "log_ratio", "beta_C", "residual"])
            for r in self.rows:
                w.writerow([repr(r.C), repr(r.P_fwd), repr(r.P_bwd_neg),
                            "" if r.log_ratio is None else repr(r.log_ratio),
                            repr(r.beta_C),
                            "" if r.residual is None else repr(r.residual)])


def dft_report(forward: TPMDistribution, backward: TPMDistribution) -> DFTReport:
    """Compare ``P(C)`` with ``P~(-C)`` for every forward support point."""
    if abs(forward.beta - backward.beta) > TOL:
        raise MismatchedProtocol(
            f"forward beta {forward.beta!r} != backward beta {backward.beta!r}")
    beta = forward.beta
    rows = []
    for c, p in zip(forward.support, forward.probs):
        pb = backward.prob(-c)
        if p > POSITIVITY_FLOOR and pb > POSITIVITY_FLOOR:
            lr = math.log(p) - math.log(pb)
            rows.append(DFTRow(c, p, pb, lr, beta * c, lr - beta * c))
        else:
            rows.append(DFTRow(c, p, pb, None, beta * c, None))
    return DFTReport(beta=beta, rows=tuple(rows))


def distribution_table(dists: Iterable[TPMDistribution]) -> list[tuple[float, float, float]]:
    """Flatten distributions to ``(beta, C, prob)`` triples."""
    return [(d.beta, c, p) for d in dists for c, p in zip(d.support, d.probs)]
