"""Work, heat and coherent energy along a sampled trajectory.

Given ``H(t) = sum_n E_n |n><n|`` and ``rho(t) = sum_k r_k |k><k|`` on a time
grid, with overlaps ``w_nk = |<n|k>|^2``:

* work      ``W = int sum_nk r_k w_nk dE_n/dt``
* heat      ``Q = int sum_nk E_n w_nk dr_k/dt``
* coherent  ``C = int sum_nk E_n r_k dw_nk/dt``

so that ``U(t) - U(0) = W + Q + C`` up to discretisation error. Derivatives use
second-order finite differences and the integrals the trapezoidal rule, so
the closure residual is O(dt^2).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DEGENERACY_TOL,
    DensityMatrix,
    Hamiltonian,
    dagger,
    degenerate_groups,
    matrix_from_dict,
    matrix_to_dict,
    rotation_unitary,
    thermal_state,
)
from .errors import DimensionMismatch, EigenTrackingAmbiguous, InvalidTrajectory

#: a matched eigenbranch pair must have squared overlap at least this large
MIN_TRACKING_OVERLAP = 0.5
BOUND_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    hamiltonians: tuple[Hamiltonian, ...]
    states: tuple[DensityMatrix, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InvalidTrajectory("need at least two grid points")
        if not np.all(np.diff(t) > 0):
            raise InvalidTrajectory("times must be strictly increasing")
        if len(self.hamiltonians) != t.size or len(self.states) != t.size:
            raise InvalidTrajectory("one Hamiltonian and one state per grid point required")
        dims = {h.dim for h in self.hamiltonians} | {s.dim for s in self.states}
        if len(dims) != 1:
            raise DimensionMismatch(f"inconsistent dimensions along trajectory: {sorted(dims)}")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "hamiltonians", tuple(self.hamiltonians))
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def dim(self) -> int:
        return self.states[0].dim

    @property
    def steps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True, eq=False)
class EnergyLedger:
    """Cumulative energy budget on the trajectory grid.

    ``bound`` is an a-posteriori closure bound: the largest change of
    ``W + Q + C`` between the full grid and its every-other-point subgrid.
    For a second-order scheme that change is about three times the fine-grid
    error. It is ``inf`` when the grid is too short to coarsen.
    """

    times: np.ndarray
    internal: np.ndarray
    work: np.ndarray
    heat: np.ndarray
    coherent: np.ndarray
    bound: float

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.internal - self.internal[0] - self.work - self.heat - self.coherent)

    def to_csv(self, path) -> None:
        write_ledger_csv(path, self)


def overlap_weights(h: Hamiltonian, rho: DensityMatrix) -> np.ndarray:
    """Doubly stochastic matrix ``|<n|k>|^2`` (rows: energy levels, columns: state eigenvectors)."""
    if h.dim != rho.dim:
        raise DimensionMismatch(f"Hamiltonian dim {h.dim} != state dim {rho.dim}")
    return np.abs(dagger(h.vectors) @ rho.vectors) ** 2


def _align_degenerate(prev: np.ndarray, vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Rotate bases of degenerate eigenspaces to best match the previous basis."""
    vecs = vecs.copy()
    for group in degenerate_groups(vals, DEGENERACY_TOL):
        if len(group) < 2:
            continue
        sub = vecs[:, group]
        proj = dagger(sub) @ prev  # (g, d)
        weight = np.sum(np.abs(proj) ** 2, axis=0)
        chosen = np.sort(np.argsort(weight)[::-1][: len(group)])
        u, _, vh = np.linalg.svd(proj[:, chosen])
        vecs[:, group] = sub @ (u @ vh)
    return vecs


def _match(prev: np.ndarray, cur: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy maximal-overlap assignment of current columns to previous labels."""
    ov = np.abs(dagger(prev) @ cur) ** 2
    d = ov.shape[0]
    perm = np.full(d, -1)
    taken = np.zeros(d, dtype=bool)
    for flat in np.argsort(ov, axis=None)[::-1]:
        i, j = divmod(int(flat), d)
        if perm[i] < 0 and not taken[j]:
            perm[i] = j
            taken[j] = True
    assert sorted(perm.tolist()) == list(range(d))
    return perm, ov[np.arange(d), perm]


def track_branches(values: list[np.ndarray], vectors: list[np.ndarray],
                   times=None, what: str = "eigen") -> tuple[np.ndarray, np.ndarray]:
    """Relabel per-time eigendecompositions so each label follows one smooth branch.

    Returns ``(vals, vecs)`` with shapes ``(T, d)`` and ``(T, d, d)``.
    Raises :class:`EigenTrackingAmbiguous` if any matched squared overlap
    falls below :data:`MIN_TRACKING_OVERLAP`.
    """
    out_vals = [np.asarray(values[0], dtype=float)]
    out_vecs = [np.asarray(vectors[0])]
    for i in range(1, len(values)):
        prev = out_vecs[-1]
        cur_vals = np.asarray(values[i], dtype=float)
        cur = _align_degenerate(prev, cur_vals, np.asarray(vectors[i]))
        perm, best = _match(prev, cur)
        if best.min() < MIN_TRACKING_OVERLAP:
            where = f"t={times[i]!r}" if times is not None else f"step {i}"
            raise EigenTrackingAmbiguous(
                f"{what} branches cannot be matched at {where} "
                f"(best squared overlap {best.min():.3f}); refine the grid")
        out_vals.append(cur_vals[perm])
        out_vecs.append(cur[:, perm])
    return np.array(out_vals), np.array(out_vecs)


def _cumtrapz(f: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))])


def _spacing(t: np.ndarray):
    """Scalar step for grids uniform to rounding (constant data then differentiates to 0)."""
    dt = np.diff(t)
    h = (t[-1] - t[0]) / (len(t) - 1)
    return h if np.allclose(dt, h, rtol=1e-12, atol=0) else t


def _integrate(t, energies, h_vecs, pops, r_vecs):
    edge = 2 if len(t) >= 3 else 1
    dx = _spacing(t)
    w = np.abs(np.einsum("tin,tik->tnk", np.conj(h_vecs), r_vecs)) ** 2
    d_e = np.gradient(energies, dx, axis=0, edge_order=edge)
    d_r = np.gradient(pops, dx, axis=0, edge_order=edge)
    d_w = np.gradient(w, dx, axis=0, edge_order=edge)
    f_work = np.einsum("tk,tnk,tn->t", pops, w, d_e)
    f_heat = np.einsum("tn,tnk,tk->t", energies, w, d_r)
    f_coh = np.einsum("tn,tk,tnk->t", energies, pops, d_w)
    return _cumtrapz(f_work, t), _cumtrapz(f_heat, t), _cumtrapz(f_coh, t)


def decompose_spectral(times, energies, h_vectors, populations, rho_vectors) -> EnergyLedger:
    """Energy budget from already-tracked spectral data.

    Parameters
    ----------
    times : (T,) array
    energies : (T, d) array
        Tracked Hamiltonian eigenvalues.
    h_vectors : (T, d, d) array
        Hamiltonian eigenvectors as columns, labels consistent with ``energies``.
    populations : (T, d) array
        Tracked eigenvalues of the state.
    rho_vectors : (T, d, d) array
        State eigenvectors as columns.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    r = np.asarray(populations, dtype=float)
    hv = np.asarray(h_vectors)
    rv = np.asarray(rho_vectors)
    w_all = np.abs(np.einsum("tin,tik->tnk", np.conj(hv), rv)) ** 2
    internal = np.einsum("tn,tnk,tk->t", e, w_all, r)
    work, heat, coh = _integrate(t, e, hv, r, rv)

    bound = math.inf
    if len(t) >= 3:
        idx = list(range(0, len(t), 2))
        if idx[-1] != len(t) - 1:
            idx.append(len(t) - 1)
        cw, ch, cc = _integrate(t[idx], e[idx], hv[idx], r[idx], rv[idx])
        diff = np.abs((work + heat + coh)[idx] - (cw + ch + cc))
        scale = max(1.0, float(np.max(np.abs(e))))
        bound = float(diff.max()) + BOUND_FLOOR * scale
    return EnergyLedger(times=t, internal=internal, work=work, heat=heat,
                        coherent=coh, bound=bound)


def decompose(traj: Trajectory) -> EnergyLedger:
    """Split the internal-energy change along ``traj`` into W, Q and C."""
    e, hv = track_branches([h.energies for h in traj.hamiltonians],
                           [h.vectors for h in traj.hamiltonians], traj.times, "Hamiltonian")
    r, rv = track_branches([s.populations for s in traj.states],
                           [s.vectors for s in traj.states], traj.times, "state")
    ledger = decompose_spectral(traj.times, e, hv, r, rv)
    # internal energy straight from the operators, independent of the tracking
    u = np.array([s.expectation(h) for h, s in zip(traj.hamiltonians, traj.states)])
    return EnergyLedger(times=ledger.times, internal=u, work=ledger.work, heat=ledger.heat,
                        coherent=ledger.coherent, bound=ledger.bound)


def closure_report(ledger: EnergyLedger) -> float:
    """``max_t |U(t) - U(0) - W(t) - Q(t) - C(t)|``."""
    return float(np.max(ledger.residual))


def rotation_trajectory(beta: float, steps: int, tau: float = 1.0, phi: float = 0.0,
                        energies=(0.0, 1.0)) -> Trajectory:
    """Thermal qubit rotated about y by ``theta(t) = pi t / tau`` at fixed spectrum."""
    h = Hamiltonian.from_energies(energies)
    rho0 = thermal_state(h, beta)
    times = np.linspace(0.0, tau, steps + 1)
    states = [rho0.evolve(rotation_unitary(min(math.pi * t / tau, math.pi), phi)) for t in times]
    return Trajectory(times, tuple(h for _ in times), tuple(states))


# -- file formats ----------------------------------------------------------


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "dim": traj.dim,
        "M": traj.steps,
        "steps": [
            {"time": float(t), "H": matrix_to_dict(h.matrix), "rho": matrix_to_dict(s.matrix)}
            for t, h, s in zip(traj.times, traj.hamiltonians, traj.states)
        ],
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    try:
        dim, m, steps = int(d["dim"]), int(d["M"]), d["steps"]
        if len(steps) != m + 1:
            raise InvalidTrajectory(f"header says M={m} but {len(steps)} blocks follow")
        times = [float(b["time"]) for b in steps]
        hs = tuple(Hamiltonian(matrix_from_dict(b["H"])) for b in steps)
        rhos = tuple(DensityMatrix(matrix_from_dict(b["rho"])) for b in steps)
    except (KeyError, TypeError) as exc:
        raise InvalidTrajectory(f"malformed trajectory record: {exc!r}") from exc
    traj = Trajectory(np.array(times), hs, rhos)
    if traj.dim != dim:
        raise DimensionMismatch(f"header dim {dim} != matrix dim {traj.dim}")
    return traj


def save_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trajectory_to_dict(traj), fh)
        fh.write("\n")


def load_trajectory(path) -> Trajectory:
    with open(path, encoding="utf-8") as fh:
        return trajectory_from_dict(json.load(fh))


LEDGER_COLUMNS = ("time", "U", "W", "Q", "C", "residual")


def ledger_rows(ledger: EnergyLedger):
    for row in zip(ledger.times, ledger.internal, ledger.work, ledger.heat,
                   ledger.coherent, ledger.residual):
        yield tuple(float(x) for x in row)


def write_ledger_csv(path, ledger: EnergyLedger) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for row in ledger_rows(ledger):
            w.writerow([repr(x) for x in row])
