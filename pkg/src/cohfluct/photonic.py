"""Monte-Carlo emulation of the entangled-photon TPM experiment.

The idler photon ``i`` and signal photon ``s`` share
``|psi0> = sqrt(p0)|00> + sqrt(p1)|11>``. Projecting ``i`` onto ``|k>``
heralds ``s`` in ``|k>`` before the wave plate, which stands in for the first
energy measurement; projecting ``s`` onto ``|j>`` afterwards is the second.
A coincidence at ``(k, j)`` therefore records coherent energy ``j - k``.

Counts per joint outcome are independent Poisson variables with mean
``N p(k, j) + b``; ``N`` is the expected number of coincidences, not a fixed
total.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DensityMatrix,
    UnitaryOperator,
    check_beta,
    hwp_jones,
)
from .errors import DimensionMismatch, EmptyRecord, InvalidExposure
from .tpm import TPMDistribution, bin_transitions

#: coherent energy recorded by outcome (k, j): j - k
OUTCOME_C = np.array([[0.0, 1.0], [-1.0, 0.0]])
SUPPORT = (-1.0, 0.0, 1.0)
MIN_RESAMPLES = 100


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``seed`` and a spawn key such as ``(beta_index, replicate)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class SourceState:
    p0: float
    p1: float

    def __post_init__(self):
        if self.p0 < 0 or self.p1 < 0 or abs(self.p0 + self.p1 - 1.0) > 1e-12:
            raise ValueError(f"Schmidt weights must be non-negative and sum to 1: {self.p0}, {self.p1}")

    @classmethod
    def from_beta(cls, beta: float, gap: float = 1.0) -> SourceState:
        beta = check_beta(beta)
        x = math.exp(-beta * gap)
        return cls(1.0 / (1.0 + x), x / (1.0 + x))

    @property
    def beta(self) -> float:
        return math.log(self.p0 / self.p1) if self.p1 > 0 else math.inf

    @property
    def amplitudes(self) -> np.ndarray:
        """Amplitudes on ``|k_i j_s>`` with index ``2k + j``."""
        return np.array([math.sqrt(self.p0), 0.0, 0.0, math.sqrt(self.p1)], dtype=complex)

    def signal_state(self) -> DensityMatrix:
        """Reduced state of the signal mode (partial trace over the idler)."""
        psi = self.amplitudes.reshape(2, 2)
        return DensityMatrix(np.einsum("kj,kl->jl", psi, np.conj(psi)))


@dataclass(frozen=True)
class MeasurementSetting:
    idler: int
    signal: int
    process: UnitaryOperator

    def __post_init__(self):
        if self.idler not in (0, 1) or self.signal not in (0, 1):
            raise ValueError("projection labels must be 0 or 1")
        if self.process.dim != 2:
            raise DimensionMismatch("the signal process acts on a qubit")

    @property
    def coherent_energy(self) -> int:
        return self.signal - self.idler


def projection_probability(src: SourceState, setting: MeasurementSetting) -> float:
    """``|(<k|_i (x) <j|_s U) |psi0>|^2`` for one setting."""
    psi = src.amplitudes.reshape(2, 2)
    amp = setting.process.matrix[setting.signal, :] @ psi[setting.idler, :]
    return float(abs(amp) ** 2)


def joint_probabilities(src: SourceState, u: UnitaryOperator) -> np.ndarray:
    """All four coincidence probabilities as a ``[k, j]`` array."""
    if u.dim != 2:
        raise DimensionMismatch("the signal process acts on a qubit")
    psi = src.amplitudes.reshape(2, 2)
    out = psi @ u.matrix.T  # out[k, j] = sum_s U[j, s] psi[k, s]
    return np.abs(out) ** 2


def joint_to_distribution(joint: np.ndarray, beta: float) -> TPMDistribution:
    """Collapse ``p(k, j)`` onto coherent energies ``j - k``."""
    return bin_transitions(OUTCOME_C, np.asarray(joint, dtype=float), beta)


@dataclass(frozen=True)
class NoiseConfig:
    """Wave-plate misalignment (Gaussian jitter, radians) and flat background counts."""

    misalignment: float = 0.0
    background: float = 0.0
    use_misalignment: bool = True
    use_background: bool = True

    def __post_init__(self):
        if not (self.misalignment >= 0 and self.background >= 0):
            raise ValueError("noise parameters must be non-negative")

    @classmethod
    def off(cls) -> NoiseConfig:
        return cls()

    @property
    def sigma(self) -> float:
        return self.misalignment if self.use_misalignment else 0.0

    @property
    def b(self) -> float:
        return self.background if self.use_background else 0.0

    @property
    def active(self) -> bool:
        return self.sigma > 0 or self.b > 0


@dataclass(frozen=True)
class CountRecord:
    """Integer coincidence counts ``counts[k][j]`` from one batch."""

    counts: tuple[tuple[int, int], tuple[int, int]]
    exposure: float
    seed: int | None = None
    stream: tuple[int, ...] = ()
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (2, 2) or np.any(c < 0):
            raise ValueError("counts must be a 2x2 table of non-negative integers")
        object.__setattr__(self, "counts", tuple(tuple(int(x) for x in row) for row in c))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())


def _check_exposure(exposure) -> float:
    try:
        n = float(exposure)
    except (TypeError, ValueError) as exc:
        raise InvalidExposure(f"exposure must be a number, got {exposure!r}") from exc
    if not (math.isfinite(n) and n > 0):
        raise InvalidExposure(f"exposure must be positive and finite, got {exposure!r}")
    return n


def sample_counts(probs, exposure, noise: NoiseConfig | None = None, seed: int = 0, *,
                  stream: tuple[int, ...] = (), source: SourceState | None = None,
                  hwp_alpha: float | None = None) -> CountRecord:
    """Draw one batch of Poisson coincidence counts.

    With misalignment active the wave-plate angle is jittered once for the
    batch and the probabilities are recomputed, which needs ``source`` and
    ``hwp_alpha``; ``probs`` is ignored in that case.
    """
    n = _check_exposure(exposure)
    noise = noise or NoiseConfig.off()
    rng = rng_stream(seed, *stream)
    p = np.asarray(probs, dtype=float).reshape(2, 2)
    if noise.sigma > 0:
        if source is None or hwp_alpha is None:
            raise ValueError("misalignment noise needs the source and the wave-plate angle")
        p = joint_probabilities(source, hwp_jones(hwp_alpha + rng.normal(0.0, noise.sigma)))
    counts = rng.poisson(n * p + noise.b)
    return CountRecord(counts=counts, exposure=n, seed=seed, stream=tuple(stream), noise=noise)


def _statistics(counts: np.ndarray, beta: float) -> np.ndarray:
    """P(-1), P(0), P(+1), <C>, IFT for counts shaped ``(..., 2, 2)``."""
    c = np.asarray(counts, dtype=float)
    total = c.sum(axis=(-1, -2))
    with np.errstate(invalid="ignore", divide="ignore"):
        pm = c[..., 1, 0] / total
        p0 = (c[..., 0, 0] + c[..., 1, 1]) / total
        pp = c[..., 0, 1] / total
    mean_c = pp - pm
    with np.errstate(invalid="ignore", divide="ignore"):
        ift = (c[..., 0, 0] + c[..., 1, 1] + c[..., 0, 1] * math.exp(-beta)
               + c[..., 1, 0] * math.exp(beta)) / total
    return np.stack([pm, p0, pp, mean_c, ift], axis=-1)


@dataclass(frozen=True)
class BootstrapErrors:
    probs: dict[float, float]
    mean_c: float
    ift: float


def bootstrap_errorbars(rec: CountRecord, beta: float, resamples: int = 1000,
                        seed: int = 0) -> BootstrapErrors:
    """Poisson parametric bootstrap: resample each outcome as Poisson(observed count)."""
    if resamples < MIN_RESAMPLES:
        raise ValueError(f"need at least {MIN_RESAMPLES} resamples, got {resamples}")
    if rec.total <= 0:
        raise EmptyRecord("record has no counts")
    beta = check_beta(beta)
    rng = rng_stream(seed, *rec.stream, 1)
    synth = rng.poisson(rec.array, size=(resamples, 2, 2))
    stats = _statistics(synth, beta)
    stats = stats[synth.sum(axis=(1, 2)) > 0]
    sd = np.std(stats, axis=0, ddof=1) if len(stats) > 1 else np.zeros(5)
    return BootstrapErrors(probs=dict(zip(SUPPORT, (float(x) for x in sd[:3]))),
                           mean_c=float(sd[3]), ift=float(sd[4]))


def estimate_distribution(rec: CountRecord, beta_nominal: float, resamples: int = 1000,
                          seed: int | None = None) -> tuple[TPMDistribution, dict[float, float]]:
    """Count-ratio estimate of ``P(C)`` with bootstrap standard errors.

    The estimate always carries the full support ``(-1, 0, 1)``.
    """
    if rec.total <= 0:
        raise EmptyRecord("record has no counts")
    beta = check_beta(beta_nominal)
    pm, p0, pp = (float(x) for x in _statistics(rec.array, beta)[:3])
    dist = TPMDistribution(beta=beta, support=SUPPORT, probs=(pm, p0, pp))
    boot_seed = rec.seed if seed is None else seed
    errs = bootstrap_errorbars(rec, beta, resamples, 0 if boot_seed is None else boot_seed)
    return dist, errs.probs


def ift_estimate(rec: CountRecord, beta: float) -> float:
    """``P(0) + P(1) exp(-beta) + P(-1) exp(beta)`` from the counts."""
    if rec.total <= 0:
        raise EmptyRecord("record has no counts")
    return float(_statistics(rec.array, beta)[4])


# -- analytic error model ---------------------------------------------------

def _ift_weights(beta: float) -> np.ndarray:
    return np.array([[1.0, math.exp(-beta)], [math.exp(beta), 1.0]])


def ift_delta_sd(probs, beta: float, exposure: float, background: float = 0.0) -> float:
    """Delta-method standard deviation of the IFT estimator under Poisson counts."""
    lam = exposure * np.asarray(probs, dtype=float).reshape(2, 2) + background
    w = _ift_weights(beta)
    total = lam.sum()
    f = float((w * lam).sum() / total)
    return float(math.sqrt(((w - f) ** 2 * lam).sum()) / total)


def ift_background_bias(probs, beta: float, exposure: float, background: float) -> float:
    """First-order IFT bias added by ``background`` accidental counts per outcome."""
    lam = exposure * np.asarray(probs, dtype=float).reshape(2, 2) + background
    w = _ift_weights(beta)
    return float((w * lam).sum() / lam.sum()) - float((w * np.asarray(probs).reshape(2, 2)).sum())


def calibrate_exposure(probs, beta: float, target_sd: float) -> float:
    """Exposure ``N`` whose noise-free delta-method IFT spread equals ``target_sd``."""
    return ift_delta_sd(probs, beta, 1.0) ** 2 / target_sd**2


def calibrate_background(beta: float, exposure: float, target_bias: float) -> float:
    """Background per outcome giving an IFT bias of ``target_bias`` (first order in b/N)."""
    return target_bias * exposure / (math.exp(beta) + math.exp(-beta) - 2.0)


# -- experiment pipeline ----------------------------------------------------


@dataclass(frozen=True)
class IFTPoint:
    beta: float
    replicate: int
    estimate: float
    stderr: float
    exact: float
    record: CountRecord
    distribution: TPMDistribution
    prob_stderr: dict[float, float]
    mean_c_stderr: float


def run_point(beta: float, hwp_alpha: float, exposure: float, noise: NoiseConfig, seed: int,
              stream: tuple[int, ...], resamples: int = 1000) -> IFTPoint:
    """Source, wave plate, counting and estimation for one ``(beta, replicate)`` stream."""
    src = SourceState.from_beta(beta)
    u = hwp_jones(hwp_alpha)
    joint = joint_probabilities(src, u)
    rec = sample_counts(joint, exposure, noise, seed, stream=stream, source=src, hwp_alpha=hwp_alpha)
    if rec.total == 0:
        raise EmptyRecord(f"no coincidences recorded at beta={beta}")
    errs = bootstrap_errorbars(rec, beta, resamples, seed)
    pm, p0, pp, _, ift = (float(x) for x in _statistics(rec.array, beta))
    exact = joint_to_distribution(joint, beta)
    exact_ift = math.fsum(p * math.exp(-beta * c) for c, p in zip(exact.support, exact.probs))
    return IFTPoint(beta=float(beta), replicate=stream[-1] if stream else 0, estimate=ift,
                    stderr=errs.ift, exact=exact_ift, record=rec,
                    distribution=TPMDistribution(beta, SUPPORT, (pm, p0, pp)),
                    prob_stderr=errs.probs, mean_c_stderr=errs.mean_c)


def ift_experiment(betas, theta: float | None = None, exposure: float = 1e5,
                   noise: NoiseConfig | None = None, seed: int = 0, *,
                   hwp_alpha: float | None = None, replicates: int = 1,
                   resamples: int = 1000, workers: int = 1) -> list[IFTPoint]:
    """IFT estimate with bootstrap error bar for each ``(beta, replicate)``.

    The process is a half-wave plate at ``hwp_alpha`` (default ``theta / 4``).
    Each point draws from its own stream keyed by ``(beta_index, replicate)``;
    results are ordered by beta index, then replicate.
    """
    if hwp_alpha is None:
        if theta is None:
            raise ValueError("give either theta or hwp_alpha")
        hwp_alpha = theta / 4
    betas = [check_beta(b) for b in betas]
    if not betas:
        raise ValueError("empty beta grid")
    _check_exposure(exposure)
    noise = noise or NoiseConfig.off()
    jobs = [(b, i, r) for i, b in enumerate(betas) for r in range(replicates)]

    def work(job):
        b, i, r = job
        return run_point(b, hwp_alpha, exposure, noise, seed, (i, r), resamples)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, jobs))
    return [work(j) for j in jobs]


def backward_alpha(hwp_alpha: float) -> float:
    """Wave-plate angle of the time-reversed protocol: the axis turned by 90 degrees."""
    return hwp_alpha + math.pi / 2
