"""Command-line front end: one YAML scenario file in, CSV tables out.

Subcommands map onto scenario modes::

    tpm        tpm-exact    exact distributions over a beta grid
    sample     tpm-sample   emulated counts, estimates and bootstrap errors
    ift        ift-sweep    emulated integral-FT estimates (optionally replicated)
    dft        dft-sweep    forward/backward log-ratios (exact or emulated)
    arrow      arrow-sweep  mean coherent energy over a (theta, beta) grid
    decompose  decompose    work/heat/coherent-energy ledger of a trajectory

Angles in configs are in degrees. Only ``--seed`` and ``--out`` override the
file, so the config alone records how an output was produced.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .arrow import arrow_sweep
from .core import (
    Hamiltonian,
    UnitaryOperator,
    haar_unitary,
    hwp_jones,
    matrix_from_dict,
    rotation_unitary,
)
from .energy import decompose, load_trajectory, rotation_trajectory, ledger_rows, LEDGER_COLUMNS
from .errors import CohFluctError, ConfigParse, IOFailure, MissingField
from .photonic import (
    NoiseConfig,
    SourceState,
    backward_alpha,
    estimate_distribution,
    ift_experiment,
    joint_probabilities,
    sample_counts,
)
from .tpm import (
    backward_distribution,
    dft_report,
    ift_value,
    mean_coherent_energy,
    tpm_distribution,
)

log = logging.getLogger("cohfluct")

MODES = {
    "tpm": "tpm-exact",
    "sample": "tpm-sample",
    "ift": "ift-sweep",
    "dft": "dft-sweep",
    "arrow": "arrow-sweep",
    "decompose": "decompose",
}
LOG_ENV = "COHFLUCT_LOG_LEVEL"

DIST_COLUMNS = ("scenario_id", "beta", "C", "estimate", "stderr", "exact")
SERIES_COLUMNS = ("scenario_id", "series", "beta", "replicate", "estimate", "exact", "stderr")
DFT_COLUMNS = ("scenario_id", "beta", "C", "P_fwd", "P_bwd_neg", "log_ratio", "beta_C", "residual")
ARROW_COLUMNS = ("theta", "beta", "mean_C")


# -- config ----------------------------------------------------------------


def parse_grid(grid: Any, name: str) -> list[float]:
    """A grid is a list, a scalar, or ``{start, stop, step}`` / ``{start, stop, num}``."""
    if grid is None:
        raise MissingField(f"missing grid '{name}'")
    if isinstance(grid, (int, float)) and not isinstance(grid, bool):
        values = [float(grid)]
    elif isinstance(grid, list):
        try:
            values = [float(x) for x in grid]
        except (TypeError, ValueError) as exc:
            raise ConfigParse(f"grid '{name}' has non-numeric entries") from exc
    elif isinstance(grid, dict):
        try:
            start, stop = float(grid["start"]), float(grid["stop"])
            if "step" in grid:
                step = float(grid["step"])
                if step <= 0:
                    raise ConfigParse(f"grid '{name}' step must be positive")
                n = int(math.floor((stop - start) / step + 1e-9)) + 1
                values = [start + i * step for i in range(max(n, 0))]
            else:
                values = np.linspace(start, stop, int(grid["num"])).tolist()
        except KeyError as exc:
            raise MissingField(f"grid '{name}' needs start, stop and step or num") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigParse(f"grid '{name}' is malformed: {exc}") from exc
    else:
        raise ConfigParse(f"grid '{name}' must be a list, number or mapping")
    if not values:
        raise ConfigParse(f"grid '{name}' is empty")
    if not all(math.isfinite(v) for v in values):
        raise ConfigParse(f"grid '{name}' has non-finite values")
    return values


@dataclass
class ScenarioConfig:
    mode: str
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)
    seed_override: int | None = None

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def require(self, key):
        if key not in self.raw or self.raw[key] is None:
            raise MissingField(f"mode {self.mode} requires '{key}'")
        return self.raw[key]

    @property
    def scenario_id(self) -> str:
        return str(self.raw.get("scenario_id", self.mode))

    @property
    def sampling(self) -> dict:
        s = self.raw.get("sampling") or {}
        if not isinstance(s, dict):
            raise ConfigParse("'sampling' must be a mapping")
        return s

    @property
    def seed(self) -> int:
        if self.seed_override is not None:
            return self.seed_override
        return int(self.sampling.get("seed", 0))

    def path(self, key: str) -> Path:
        p = Path(str(self.require(key)))
        p = p if p.is_absolute() else self.base_dir / p
        if not p.exists():
            raise ConfigParse(f"file referenced by '{key}' does not exist: {p}")
        return p

    def canonical(self) -> dict:
        """Resolved config used for hashing; output location is excluded."""
        d = {k: v for k, v in self.raw.items() if k != "output"}
        d["mode"] = self.mode
        d["seed"] = self.seed
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_config(path, mode: str | None = None, seed: int | None = None) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(f"cannot read config {p}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParse(f"invalid YAML in {p}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigParse("config must be a mapping at top level")
    file_mode = raw.get("mode")
    if mode is None and file_mode is None:
        raise MissingField("no mode given in config or on the command line")
    if mode is not None and file_mode is not None and file_mode != mode:
        raise ConfigParse(f"config mode '{file_mode}' does not match subcommand mode '{mode}'")
    resolved = mode or file_mode
    if resolved not in MODES.values():
        raise ConfigParse(f"unknown mode '{resolved}'")
    return ScenarioConfig(mode=resolved, raw=raw, base_dir=p.parent.resolve(), seed_override=seed)


def _angle(cfg: ScenarioConfig, key: str, default=None) -> float | None:
    v = cfg.get(key, default)
    return None if v is None else math.radians(float(v))


def _hamiltonian(cfg: ScenarioConfig) -> Hamiltonian:
    if cfg.get("hamiltonian_file"):
        return Hamiltonian(matrix_from_dict(json.loads(cfg.path("hamiltonian_file").read_text())))
    energies = cfg.get("energies")
    if energies is None:
        dim = int(cfg.get("dimension", 2))
        energies = list(range(dim))
    return Hamiltonian.from_energies(energies)


def _process(cfg: ScenarioConfig, dim: int) -> tuple[UnitaryOperator, float | None]:
    """Process unitary and, for qubits, the equivalent wave-plate angle."""
    if cfg.get("unitary_file"):
        u = UnitaryOperator(matrix_from_dict(json.loads(cfg.path("unitary_file").read_text())))
        return u, None
    if cfg.get("haar_seed") is not None:
        return haar_unitary(dim, np.random.default_rng(int(cfg.get("haar_seed")))), None
    if cfg.get("hwp_alpha_deg") is not None:
        alpha = _angle(cfg, "hwp_alpha_deg")
        return hwp_jones(alpha), alpha
    if cfg.get("theta_deg") is None:
        raise MissingField("process needs theta_deg, hwp_alpha_deg, unitary_file or haar_seed")
    theta = _angle(cfg, "theta_deg")
    return rotation_unitary(theta, _angle(cfg, "phi_deg", 0.0)), theta / 4


def _noise(cfg: ScenarioConfig) -> NoiseConfig:
    n = cfg.sampling.get("noise") or {}
    return NoiseConfig(misalignment=math.radians(float(n.get("misalignment_deg", 0.0))),
                       background=float(n.get("background", 0.0)),
                       use_misalignment=bool(n.get("use_misalignment", True)),
                       use_background=bool(n.get("use_background", True)))


def _wave_plate(cfg: ScenarioConfig) -> float:
    if cfg.get("hwp_alpha_deg") is not None:
        return _angle(cfg, "hwp_alpha_deg")
    if cfg.get("theta_deg") is not None:
        return _angle(cfg, "theta_deg") / 4
    raise MissingField("emulated modes need theta_deg or hwp_alpha_deg")


# -- modes -----------------------------------------------------------------


@dataclass
class RunResult:
    tables: dict[str, tuple[tuple[str, ...], list[tuple]]] = field(default_factory=dict)


def _exact_tables(cfg: ScenarioConfig) -> RunResult:
    h = _hamiltonian(cfg)
    u, _ = _process(cfg, h.dim)
    sid = cfg.scenario_id
    dist_rows, series = [], []
    for beta in parse_grid(cfg.require("beta"), "beta"):
        d = tpm_distribution(h, beta, u)
        for c, p in zip(d.support, d.probs):
            dist_rows.append((sid, beta, c, p, 0.0, p))
            series.append((sid, f"P(C={_fmt_c(c)})", beta, 0, p, p, 0.0))
        mc, ift = mean_coherent_energy(d), ift_value(d)
        series.append((sid, "mean_C", beta, 0, mc, mc, 0.0))
        series.append((sid, "IFT", beta, 0, ift, 1.0, 0.0))
    return RunResult({"distribution.csv": (DIST_COLUMNS, dist_rows),
                      "series.csv": (SERIES_COLUMNS, series)})


def _fmt_c(c: float) -> str:
    return f"{c:+g}" if c else "0"


def _emulated_tables(cfg: ScenarioConfig) -> RunResult:
    alpha = _wave_plate(cfg)
    s = cfg.sampling
    if "exposure" not in s:
        raise MissingField(f"mode {cfg.mode} requires sampling.exposure")
    points = ift_experiment(
        parse_grid(cfg.require("beta"), "beta"), hwp_alpha=alpha,
        exposure=float(s["exposure"]), noise=_noise(cfg), seed=cfg.seed,
        replicates=int(s.get("replicates", 1)), resamples=int(s.get("resamples", 1000)),
        workers=int(cfg.get("workers", 1)))
    h = Hamiltonian.from_energies([0.0, 1.0])
    u = hwp_jones(alpha)
    sid = cfg.scenario_id
    dist_rows, series = [], []
    for pt in points:
        exact = tpm_distribution(h, pt.beta, u)
        for c, p in zip(pt.distribution.support, pt.distribution.probs):
            dist_rows.append((sid, pt.beta, c, p, pt.prob_stderr[c], exact.prob(c)))
            series.append((sid, f"P(C={_fmt_c(c)})", pt.beta, pt.replicate, p,
                           exact.prob(c), pt.prob_stderr[c]))
        series.append((sid, "mean_C", pt.beta, pt.replicate, mean_coherent_energy(pt.distribution),
                       mean_coherent_energy(exact), pt.mean_c_stderr))
        # a thermal start satisfies the identity exactly
        series.append((sid, "IFT", pt.beta, pt.replicate, pt.estimate, 1.0, pt.stderr))
    if cfg.mode == "ift-sweep":
        series = [r for r in series if r[1] == "IFT"]
    return RunResult({"distribution.csv": (DIST_COLUMNS, dist_rows),
                      "series.csv": (SERIES_COLUMNS, series)})


DFT_SERIES = {1.0: "ln P(1)/P~(-1)", 0.0: "ln P(0)/P~(0)", -1.0: "ln P(-1)/P~(1)"}


def _dft_tables(cfg: ScenarioConfig) -> RunResult:
    sid = cfg.scenario_id
    betas = parse_grid(cfg.require("beta"), "beta")
    h = _hamiltonian(cfg)
    rows, series = [], []
    sampled = "exposure" in cfg.sampling
    if sampled:
        alpha = _wave_plate(cfg)
        s = cfg.sampling
        exposure, resamples = float(s["exposure"]), int(s.get("resamples", 1000))
        noise = _noise(cfg)
    else:
        u, _ = _process(cfg, h.dim)
    for i, beta in enumerate(betas):
        if sampled:
            src = SourceState.from_beta(beta)
            fwd_rec = sample_counts(joint_probabilities(src, hwp_jones(alpha)), exposure, noise,
                                    cfg.seed, stream=(i, 0), source=src, hwp_alpha=alpha)
            b_alpha = backward_alpha(alpha)
            bwd_rec = sample_counts(joint_probabilities(src, hwp_jones(b_alpha)), exposure, noise,
                                    cfg.seed, stream=(i, 1), source=src, hwp_alpha=b_alpha)
            fwd, fwd_err = estimate_distribution(fwd_rec, beta, resamples)
            bwd, bwd_err = estimate_distribution(bwd_rec, beta, resamples)
        else:
            fwd = tpm_distribution(h, beta, u)
            bwd = backward_distribution(h, beta, u)
            fwd_err = bwd_err = None
        rep = dft_report(fwd, bwd)
        for r in rep.rows:
            rows.append((sid, beta, r.C, r.P_fwd, r.P_bwd_neg,
                         math.nan if r.log_ratio is None else r.log_ratio,
                         r.beta_C, math.nan if r.residual is None else r.residual))
            if r.C in DFT_SERIES:
                if fwd_err is not None and r.log_ratio is not None:
                    # delta method on ln P - ln P~
                    err = math.hypot(fwd_err[r.C] / r.P_fwd, bwd_err[-r.C] / r.P_bwd_neg)
                else:
                    err = 0.0 if fwd_err is None else math.nan
                series.append((sid, DFT_SERIES[r.C], beta, 0,
                               math.nan if r.log_ratio is None else r.log_ratio, r.beta_C, err))
    return RunResult({"dft.csv": (DFT_COLUMNS, rows), "series.csv": (SERIES_COLUMNS, series)})


def _arrow_tables(cfg: ScenarioConfig) -> RunResult:
    thetas_deg = parse_grid(cfg.require("theta_deg"), "theta_deg")
    betas = parse_grid(cfg.require("beta"), "beta")
    sweep = arrow_sweep(np.radians(thetas_deg), betas)
    rows = [(t_deg, be, float(sweep.mean_c[i, j]))
            for i, t_deg in enumerate(thetas_deg) for j, be in enumerate(betas)]
    log.info("arrow sweep minimum mean_C = %r", sweep.min_value)
    return RunResult({"arrow.csv": (ARROW_COLUMNS, rows)})


def _decompose_tables(cfg: ScenarioConfig) -> RunResult:
    if cfg.get("trajectory_file"):
        traj = load_trajectory(cfg.path("trajectory_file"))
    else:
        rot = cfg.get("rotation")
        if not isinstance(rot, dict):
            raise MissingField("decompose needs trajectory_file or a rotation mapping")
        traj = rotation_trajectory(float(rot.get("beta", 1.0)), int(rot.get("steps", 100)),
                                   float(rot.get("tau", 1.0)),
                                   math.radians(float(rot.get("phi_deg", 0.0))))
    ledger = decompose(traj)
    return RunResult({"ledger.csv": (LEDGER_COLUMNS, list(ledger_rows(ledger)))})


RUNNERS = {
    "tpm-exact": _exact_tables,
    "tpm-sample": _emulated_tables,
    "ift-sweep": _emulated_tables,
    "dft-sweep": _dft_tables,
    "arrow-sweep": _arrow_tables,
    "decompose": _decompose_tables,
}


def run(cfg: ScenarioConfig) -> RunResult:
    log.debug("running %s (%s)", cfg.mode, cfg.scenario_id)
    return RUNNERS[cfg.mode](cfg)


# -- output ----------------------------------------------------------------


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_table(path: Path, columns, rows, cfg: ScenarioConfig) -> None:
    """CSV with provenance comment lines (tool version, config hash) before the header."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# tool: cohfluct {__version__}\n")
            fh.write(f"# config_sha256: {cfg.digest()}\n")
            fh.write(f"# mode: {cfg.mode}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_cell(x) for x in r])
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def read_table(path) -> tuple[dict[str, str], list[dict[str, Any]]]:
    """Parse a table written by :func:`write_table`; numeric cells come back as floats."""
    meta: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        elif line:
            body.append(line)
    reader = csv.DictReader(body)
    rows = []
    for rec in reader:
        out: dict[str, Any] = {}
        for k, v in rec.items():
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
        rows.append(out)
    return meta, rows


def emit_plot_data(result: RunResult, out_dir, cfg: ScenarioConfig) -> list[Path]:
    """Write every table of ``result`` to ``out_dir`` (plus JSON if ``output.json``)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {out}: {exc}") from exc
    written = []
    for name, (columns, rows) in result.tables.items():
        path = out / name
        write_table(path, columns, rows, cfg)
        written.append(path)
    if (cfg.get("output") or {}).get("json"):
        payload = {
            "tool": f"cohfluct {__version__}",
            "config_sha256": cfg.digest(),
            "mode": cfg.mode,
            "tables": {n: [dict(zip(c, r)) for r in rows] for n, (c, rows) in result.tables.items()},
        }
        path = out / "results.json"
        try:
            path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def _error_report(exc: BaseException) -> dict:
    code = getattr(exc, "code", None) if isinstance(exc, CohFluctError) else type(exc).__name__
    return {"status": "error", "error": code, "message": str(exc)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohfluct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cohfluct {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, mode in MODES.items():
        p = sub.add_parser(name, help=f"run a {mode} scenario")
        p.add_argument("--config", required=True, help="YAML scenario file")
        p.add_argument("--seed", type=int, default=None, help="override sampling.seed")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigParse("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, MODES[args.command], args.seed)
        out_dir = args.out or (cfg.get("output") or {}).get("dir") or "."
        result = run(cfg)
        for path in emit_plot_data(result, out_dir, cfg):
            log.info("wrote %s", path)
    except (CohFluctError, ValueError, OSError) as exc:
        print(json.dumps(_error_report(exc)), file=sys.stderr)
        return 2 if isinstance(exc, ConfigParse) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
