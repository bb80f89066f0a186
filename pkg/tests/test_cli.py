import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from cohfluct import __version__
from cohfluct.cli import (
    ARROW_COLUMNS,
    DFT_COLUMNS,
    DIST_COLUMNS,
    SERIES_COLUMNS,
    load_config,
    main,
    parse_grid,
    read_table,
    run,
)
from cohfluct.core import matrix_to_dict, rotation_unitary
from cohfluct.energy import LEDGER_COLUMNS
from cohfluct.errors import ConfigParse, MissingField

THETA_DEG = 86.6


def write_cfg(tmp_path, body, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(body), encoding="utf-8")
    return path


def run_cli(tmp_path, cmd, body, out="out", extra=()):
    cfg = write_cfg(tmp_path, body)
    out_dir = tmp_path / out
    code = main([cmd, "--config", str(cfg), "--out", str(out_dir), *extra])
    return code, out_dir


def header(path):
    return [l for l in path.read_text().split("\n") if not l.startswith("#")][0]


class TestGrid:
    def test_step(self):
        assert parse_grid({"start": 0, "stop": 5, "step": 0.25}, "beta") == [i * 0.25 for i in range(21)]

    def test_num(self):
        assert parse_grid({"start": 0, "stop": 1, "num": 3}, "beta") == [0.0, 0.5, 1.0]

    def test_scalar_and_list(self):
        assert parse_grid(2, "beta") == [2.0]
        assert parse_grid([1, 2], "beta") == [1.0, 2.0]

    @pytest.mark.parametrize("bad", [[], {"start": 1, "stop": 0, "step": 0.5}, "abc", ["x"],
                                     {"start": 0, "stop": 1, "step": 0}])
    def test_rejects(self, bad):
        with pytest.raises(ConfigParse):
            parse_grid(bad, "beta")

    def test_missing(self):
        with pytest.raises(MissingField):
            parse_grid(None, "beta")


class TestConfig:
    def test_mode_conflict(self, tmp_path):
        p = write_cfg(tmp_path, {"mode": "arrow-sweep", "beta": [1]})
        with pytest.raises(ConfigParse):
            load_config(p, "tpm-exact")

    def test_unknown_mode(self, tmp_path):
        with pytest.raises(ConfigParse):
            load_config(write_cfg(tmp_path, {"mode": "nope"}))

    def test_not_mapping(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigParse):
            load_config(p, "tpm-exact")

    def test_missing_file_reference(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, {"beta": [1], "unitary_file": "nope.json"}), "tpm-exact")
        with pytest.raises(ConfigParse):
            run(cfg)

    def test_digest_ignores_output(self, tmp_path):
        a = load_config(write_cfg(tmp_path, {"beta": [1], "theta_deg": 30, "output": {"dir": "a"}}, "a.yaml"),
                        "tpm-exact")
        b = load_config(write_cfg(tmp_path, {"beta": [1], "theta_deg": 30, "output": {"dir": "b"}}, "b.yaml"),
                        "tpm-exact")
        c = load_config(tmp_path / "b.yaml", "tpm-exact", seed=5)
        assert a.digest() == b.digest() != c.digest()


class TestGolden:
    """Header rows and column order are part of the output contract."""

    def test_column_constants(self):
        assert DIST_COLUMNS == ("scenario_id", "beta", "C", "estimate", "stderr", "exact")
        assert SERIES_COLUMNS == ("scenario_id", "series", "beta", "replicate", "estimate", "exact",
                                  "stderr")
        assert DFT_COLUMNS == ("scenario_id", "beta", "C", "P_fwd", "P_bwd_neg", "log_ratio",
                               "beta_C", "residual")
        assert ARROW_COLUMNS == ("theta", "beta", "mean_C")

    def test_provenance_lines(self, tmp_path):
        code, out = run_cli(tmp_path, "tpm", {"beta": [1.0], "theta_deg": THETA_DEG})
        assert code == 0
        lines = (out / "distribution.csv").read_text().split("\n")
        cfg = load_config(tmp_path / "cfg.yaml", "tpm-exact")
        assert lines[0] == f"# tool: cohfluct {__version__}"
        assert lines[1] == f"# config_sha256: {cfg.digest()}"
        assert lines[2] == "# mode: tpm-exact"
        assert lines[3] == "scenario_id,beta,C,estimate,stderr,exact"

    def test_all_headers(self, tmp_path):
        run_cli(tmp_path, "dft", {"beta": [1.0], "theta_deg": THETA_DEG}, "d")
        run_cli(tmp_path, "arrow", {"beta": [1.0], "theta_deg": [0, 90]}, "a")
        run_cli(tmp_path, "decompose", {"rotation": {"beta": 1.0, "steps": 20}}, "e")
        assert header(tmp_path / "d" / "dft.csv") == ",".join(DFT_COLUMNS)
        assert header(tmp_path / "d" / "series.csv") == ",".join(SERIES_COLUMNS)
        assert header(tmp_path / "a" / "arrow.csv") == "theta,beta,mean_C"
        assert header(tmp_path / "e" / "ledger.csv") == ",".join(LEDGER_COLUMNS)

    def test_lf_utf8(self, tmp_path):
        _, out = run_cli(tmp_path, "tpm", {"beta": [1.0], "theta_deg": THETA_DEG})
        raw = (out / "series.csv").read_bytes()
        assert b"\r" not in raw
        raw.decode("utf-8")


class TestModes:
    def test_tpm_exact_closed_forms(self, tmp_path):
        code, out = run_cli(tmp_path, "tpm", {"scenario_id": "beta-sweep", "theta_deg": THETA_DEG,
                                               "beta": {"start": 0, "stop": 5, "step": 0.25}})
        assert code == 0
        _, rows = read_table(out / "distribution.csv")
        theta = math.radians(THETA_DEG)
        s2, c2 = math.sin(theta / 2) ** 2, math.cos(theta / 2) ** 2
        betas = sorted({r["beta"] for r in rows})
        assert len(betas) == 21
        for r in rows:
            b = r["beta"]
            p0, p1 = 1 / (1 + math.exp(-b)), math.exp(-b) / (1 + math.exp(-b))
            expected = {1.0: p0 * s2, 0.0: c2, -1.0: p1 * s2}[r["C"]]
            assert r["exact"] == pytest.approx(expected, abs=1e-12)
            assert r["stderr"] == 0.0
            assert r["scenario_id"] == "beta-sweep"

    def test_dft_slopes(self, tmp_path):
        code, out = run_cli(tmp_path, "dft", {"theta_deg": THETA_DEG, "beta": [0.5, 1, 2, 3, 4]})
        assert code == 0
        _, rows = read_table(out / "series.csv")
        for name, slope in (("ln P(1)/P~(-1)", 1.0), ("ln P(0)/P~(0)", 0.0), ("ln P(-1)/P~(1)", -1.0)):
            pts = [(r["beta"], r["estimate"]) for r in rows if r["series"] == name]
            assert len(pts) == 5
            fit = np.polyfit(*zip(*pts), 1)
            assert fit[0] == pytest.approx(slope, abs=1e-9)
            assert fit[1] == pytest.approx(0, abs=1e-9)

    def test_dft_sampled(self, tmp_path):
        code, out = run_cli(tmp_path, "dft", {"theta_deg": THETA_DEG, "beta": [1, 2],
                                               "sampling": {"exposure": 1e5, "resamples": 100}})
        assert code == 0
        _, rows = read_table(out / "series.csv")
        for r in rows:
            if r["series"] == "ln P(1)/P~(-1)":
                assert abs(r["estimate"] - r["exact"]) <= 4 * r["stderr"]

    def test_ift_noise_off_exact_is_one(self, tmp_path):
        code, out = run_cli(tmp_path, "ift", {"theta_deg": THETA_DEG, "beta": [0, 1, 2, 3],
                                               "sampling": {"exposure": 1e5, "resamples": 100,
                                                            "seed": 3}})
        assert code == 0
        _, rows = read_table(out / "series.csv")
        assert {r["series"] for r in rows} == {"IFT"}
        assert all(r["exact"] == 1.0 for r in rows)
        assert all(abs(r["estimate"] - 1) < 5 * r["stderr"] for r in rows if r["beta"] > 0)

    def test_sample_mode(self, tmp_path):
        code, out = run_cli(tmp_path, "sample", {"theta_deg": THETA_DEG, "beta": [1.0],
                                                  "sampling": {"exposure": 1e4, "resamples": 100,
                                                               "replicates": 2}})
        assert code == 0
        _, rows = read_table(out / "distribution.csv")
        assert len(rows) == 6
        _, series = read_table(out / "series.csv")
        assert {r["series"] for r in series} == {"P(C=-1)", "P(C=0)", "P(C=+1)", "mean_C", "IFT"}

    def test_arrow_nonnegative(self, tmp_path):
        code, out = run_cli(tmp_path, "arrow", {"theta_deg": {"start": 0, "stop": 180, "num": 25},
                                                 "beta": {"start": 0, "stop": 5, "num": 25}})
        assert code == 0
        _, rows = read_table(out / "arrow.csv")
        assert len(rows) == 625
        assert min(r["mean_C"] for r in rows) >= 0

    def test_decompose(self, tmp_path):
        code, out = run_cli(tmp_path, "decompose", {"rotation": {"beta": 2.0, "steps": 100}})
        assert code == 0
        _, rows = read_table(out / "ledger.csv")
        assert rows[-1]["C"] == pytest.approx(math.tanh(1.0), abs=1e-3)

    def test_explicit_unitary_file(self, tmp_path):
        u = rotation_unitary(math.radians(THETA_DEG)).matrix
        (tmp_path / "u.json").write_text(json.dumps(matrix_to_dict(u)))
        _, a = run_cli(tmp_path, "tpm", {"beta": [1.0], "unitary_file": "u.json"}, "a")
        _, b = run_cli(tmp_path, "tpm", {"beta": [1.0], "theta_deg": THETA_DEG}, "b")
        ra = read_table(a / "distribution.csv")[1]
        rb = read_table(b / "distribution.csv")[1]
        for x, y in zip(ra, rb):
            assert x["exact"] == pytest.approx(y["exact"], abs=1e-15)

    def test_haar_process(self, tmp_path):
        code, out = run_cli(tmp_path, "tpm", {"beta": [1.0], "dimension": 4, "haar_seed": 3})
        assert code == 0
        _, rows = read_table(out / "series.csv")
        ift = [r for r in rows if r["series"] == "IFT"][0]
        assert ift["estimate"] == pytest.approx(1, abs=1e-9)

    def test_json_output(self, tmp_path):
        _, out = run_cli(tmp_path, "arrow", {"theta_deg": [90], "beta": [1],
                                             "output": {"json": True}})
        payload = json.loads((out / "results.json").read_text())
        assert payload["mode"] == "arrow-sweep"
        assert payload["tables"]["arrow.csv"][0]["mean_C"] == pytest.approx(0.5 * math.tanh(0.5))


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        body = {"theta_deg": THETA_DEG, "beta": {"start": 0, "stop": 5, "step": 0.25},
                "sampling": {"exposure": 1e4, "resamples": 100}}
        cfg_path = write_cfg(tmp_path, body)
        cfg = load_config(cfg_path, "tpm-sample")
        result = run(cfg)
        assert main(["sample", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
        for name, (columns, rows) in result.tables.items():
            _, parsed = read_table(tmp_path / "o" / name)
            assert len(parsed) == len(rows)
            for mem, disk in zip(rows, parsed):
                for col, v in zip(columns, mem):
                    if isinstance(v, float) and math.isnan(v):
                        assert math.isnan(disk[col])
                    else:
                        assert disk[col] == v


class TestErrors:
    def test_empty_grid(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "tpm", {"beta": [], "theta_deg": 30})
        assert code != 0
        report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert report["status"] == "error"
        assert report["error"] == "ConfigParse"

    def test_missing_field(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "sample", {"beta": [1.0], "theta_deg": 30})
        assert code != 0
        report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert report["error"] == "MissingField"

    def test_downstream_error(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "tpm", {"beta": [-1.0], "theta_deg": 30})
        assert code == 1
        report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert report["error"] == "InvalidBeta"

    def test_unreadable_config(self, tmp_path, capsys):
        assert main(["tpm", "--config", str(tmp_path / "absent.yaml")]) == 2


class TestDeterminism:
    BODY = {"theta_deg": THETA_DEG, "beta": [0.5, 2.0, 4.0],
            "sampling": {"exposure": 5e3, "replicates": 3, "resamples": 200, "seed": 11,
                         "noise": {"misalignment_deg": 1.0, "background": 3.0}},
            "workers": 3}

    def test_byte_identical(self, tmp_path):
        _, a = run_cli(tmp_path, "ift", self.BODY, "a")
        _, b = run_cli(tmp_path, "ift", self.BODY, "b")
        for name in ("distribution.csv", "series.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_flag_changes_output(self, tmp_path):
        _, a = run_cli(tmp_path, "ift", self.BODY, "a")
        _, b = run_cli(tmp_path, "ift", self.BODY, "b", extra=("--seed", "12"))
        assert (a / "series.csv").read_bytes() != (b / "series.csv").read_bytes()

    def test_module_entry_point(self, tmp_path):
        cfg = write_cfg(tmp_path, {"theta_deg": [45], "beta": [1]})
        proc = subprocess.run([sys.executable, "-m", "cohfluct", "arrow", "--config", str(cfg),
                               "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "o" / "arrow.csv").exists()
