import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

import confint as c
from confint import cli


def run_cli(args, **env_overrides):
    env = dict(os.environ)
    env.update(env_overrides)
    old_env = os.environ
    try:
        os.environ = env
        return cli.main(args)
    finally:
        os.environ = old_env


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    header, rows = None, []
    comments = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append(line.split(","))
    return comments, header, rows


class TestConfig:
    def test_defaults(self):
        config = cli.load_config(None)
        assert config.model == "particle-harmonic"
        assert config.kind == "M" and config.ell == 2
        assert config.h == 0.25 and config.steps == 200
        assert config.initial == (0.0, 0.0, 1.0, 1.0)
        assert config.cloud.radius == 0.01 and config.cloud.shape == "cell600"
        assert config.mc_samples == 1_000_000

    def test_canonical_round_trip(self):
        config = cli.load_config(None)
        data = json.loads(config.canonical())
        assert data["kind"] == "M"
        assert data == json.loads(config.canonical())

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"stepsize": 0.1})
        with pytest.raises(cli.ConfigError):
            cli.load_config(path)

    def test_invalid_values_rejected(self, tmp_path):
        for bad in ({"kind": "X"}, {"ell": 7}, {"h": -1.0}, {"model": "pendulum"},
                    {"cloud": {"shape": "torus"}}):
            with pytest.raises(cli.ConfigError):
                cli.load_config(write_config(tmp_path, bad, name="bad.json"))

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(cli.ConfigError):
            cli.load_config(str(path))


class TestSimulate:
    def test_single_row_defaults(self, tmp_path):
        path = write_config(tmp_path, {"steps": 0})
        assert run_cli(["simulate", "--config", path, "--out", str(tmp_path)]) == 0
        comments, header, rows = read_csv(tmp_path / "simulate.csv")
        assert header == ["step", "t", "x", "y", "px", "py", "H", "K_E", "Kmod", "Emod", "err_norm"]
        assert len(rows) == 1
        row = dict(zip(header, rows[0]))
        assert float(row["t"]) == 0.0
        assert float(row["H"]) == pytest.approx(1.0, abs=1e-15)
        assert float(row["K_E"]) == pytest.approx(0.0, abs=1e-15)
        assert float(row["Emod"]) == pytest.approx(0.9921875, abs=1e-12)
        assert float(row["err_norm"]) == 0.0

    def test_config_echo_first_line(self, tmp_path):
        path = write_config(tmp_path, {"steps": 2, "substeps": 50})
        run_cli(["simulate", "--config", path, "--out", str(tmp_path)])
        first = (tmp_path / "simulate.csv").read_text().splitlines()[0]
        assert first.startswith("# config: ")
        echoed = json.loads(first[len("# config: "):])
        assert echoed["steps"] == 2 and echoed["h"] == 0.25

    def test_time_column_exact(self, tmp_path):
        path = write_config(tmp_path, {"steps": 8, "substeps": 20})
        run_cli(["simulate", "--config", path, "--out", str(tmp_path)])
        _, header, rows = read_csv(tmp_path / "simulate.csv")
        for i, row in enumerate(rows):
            assert float(row[header.index("t")]) == i * 0.25

    def test_round_trip_bit_identical(self, tmp_path):
        path = write_config(tmp_path, {"steps": 10, "substeps": 50})
        run_cli(["simulate", "--config", path, "--out", str(tmp_path)])
        _, header, rows = read_csv(tmp_path / "simulate.csv")
        table = c.series_table("harmonic", "M")
        state0 = c.PhaseState([0.0, 0.0], [1.0, 1.0])
        energy = c.modified_conformal_hamiltonian(table, 2, state0, 0.25)
        traj = c.trajectory(
            c.DiscreteLagrangianKind.M, table.model, state0, c.StepperConfig(h=0.25), energy, 10
        )
        for row, state in zip(rows, traj):
            assert float(row[header.index("x")]) == state.q[0]
            assert float(row[header.index("y")]) == state.q[1]
            assert float(row[header.index("px")]) == state.p[0]
            assert float(row[header.index("py")]) == state.p[1]

    def test_free_zeroth_order_kmod_value(self, tmp_path):
        path = write_config(tmp_path, {"model": "particle-free", "ell": 0, "steps": 1, "substeps": 20})
        run_cli(["simulate", "--config", path, "--out", str(tmp_path)])
        _, header, rows = read_csv(tmp_path / "simulate.csv")
        kmod0 = float(rows[0][header.index("Kmod")])
        assert kmod0 == pytest.approx(-0.25**2 / 24.0, abs=1e-14)

    def test_solver_failure_exits_nonzero_without_files(self, tmp_path, capsys):
        path = write_config(tmp_path, {"h": 100.0, "ell": 0, "steps": 5, "substeps": 10})
        assert run_cli(["simulate", "--config", path, "--out", str(tmp_path / "out")]) == 1
        err = capsys.readouterr().err
        assert "solver failure" in err and "step 0" in err
        assert not (tmp_path / "out" / "simulate.csv").exists()


class TestCloud:
    def test_outputs_and_headers(self, tmp_path):
        path = write_config(
            tmp_path,
            {"steps": 4, "record_every": 2, "mc_samples": 10000, "cloud_substeps": 16},
        )
        assert run_cli(["cloud", "--config", path, "--out", str(tmp_path)]) == 0
        comments, header, rows = read_csv(tmp_path / "cloud.csv")
        assert header == ["step", "t", "vol_mu0", "se_mu0", "vol_mumod2", "se_mumod2"]
        assert [int(r[0]) for r in rows] == [0, 2, 4]
        _, ref_header, ref_rows = read_csv(tmp_path / "cloud_reference.csv")
        assert ref_header == header and len(ref_rows) == 3
        _, pts_header, pts_rows = read_csv(tmp_path / "cloud_points.csv")
        assert pts_header == ["step", "t", "index", "x", "y", "px", "py"]
        assert len(pts_rows) == 3 * 120

    def test_thread_cap_does_not_change_results(self, tmp_path):
        cfg = {"steps": 2, "record_every": 1, "mc_samples": 10000, "cloud_substeps": 8}
        path = write_config(tmp_path, cfg)
        for threads, sub in (("1", "a"), ("4", "b")):
            out = tmp_path / sub
            assert run_cli(["cloud", "--config", path, "--out", str(out)], CONFINT_THREADS=threads) == 0
        assert (tmp_path / "a" / "cloud.csv").read_text() == (tmp_path / "b" / "cloud.csv").read_text()

    def test_bad_thread_env_rejected(self, tmp_path):
        path = write_config(tmp_path, {"steps": 1, "record_every": 1, "mc_samples": 10000})
        assert run_cli(["cloud", "--config", path, "--out", str(tmp_path)], CONFINT_THREADS="many") == 1


class TestCompare:
    def test_columns_and_ordering(self, tmp_path):
        path = write_config(tmp_path, {"model": "particle-free", "steps": 40, "substeps": 100})
        assert run_cli(["compare", "--config", path, "--out", str(tmp_path)]) == 0
        _, header, rows = read_csv(tmp_path / "compare.csv")
        assert header == ["step", "t", "Hdrift_ell0", "Hdrift_ell2", "err_ell0", "err_ell2"]
        assert len(rows) == 41
        last = dict(zip(header, rows[-1]))
        assert abs(float(last["Hdrift_ell2"])) < abs(float(last["Hdrift_ell0"]))


class TestBea:
    def test_document_keys_and_oracle(self, tmp_path):
        path = write_config(tmp_path, {"bea": {"base_h": 0.02, "levels": 8}})
        assert run_cli(["bea", "--config", path, "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "bea.json").read_text())
        for key in ("config", "d1", "d2", "d3", "f0", "f1", "f2", "oracle_f2"):
            assert key in doc
        assert len(doc["f2"]) == 4
        f2 = np.array(doc["f2"])
        oracle = np.array(doc["oracle_f2"])
        assert np.linalg.norm(doc["f1"]) <= 1e-4
        assert np.linalg.norm(f2 - oracle) <= 1e-3 * np.linalg.norm(oracle)


class TestPlot:
    def test_svg_from_simulate(self, tmp_path):
        path = write_config(tmp_path, {"steps": 8, "substeps": 20})
        run_cli(["simulate", "--config", path, "--out", str(tmp_path)])
        plot_cfg = write_config(
            tmp_path,
            {"steps": 8, "substeps": 20, "plot": {"csv": "simulate.csv", "x": "t", "y": ["H", "Emod"]}},
            name="plot.json",
        )
        assert run_cli(["plot", "--config", plot_cfg, "--out", str(tmp_path)]) == 0
        svg = (tmp_path / "plot.svg").read_text()
        assert svg.lstrip().startswith("<!-- config:")
        assert "<svg" in svg and "</svg>" in svg
        assert ">H<" in svg and ">Emod<" in svg and ">t<" in svg

    def test_missing_column_fails(self, tmp_path):
        path = write_config(tmp_path, {"steps": 2, "substeps": 20})
        run_cli(["simulate", "--config", path, "--out", str(tmp_path)])
        plot_cfg = write_config(
            tmp_path, {"plot": {"csv": "simulate.csv", "x": "t", "y": ["nope"]}}, name="p.json"
        )
        assert run_cli(["plot", "--config", plot_cfg, "--out", str(tmp_path)]) == 1
        assert not (tmp_path / "plot.svg").exists()


class TestOutputTracker:
    def test_discard_removes_written_files(self, tmp_path):
        tracker = cli.OutputTracker(tmp_path)
        tracker.write_text("a.txt", "hello")
        tracker.write_text("b.txt", "world")
        assert (tmp_path / "a.txt").exists()
        tracker.discard_all()
        assert not (tmp_path / "a.txt").exists()
        assert not (tmp_path / "b.txt").exists()

    def test_no_temp_files_left_behind(self, tmp_path):
        tracker = cli.OutputTracker(tmp_path)
        tracker.write_text("a.txt", "hello")
        leftovers = [p for p in tmp_path.iterdir() if p.name != "a.txt"]
        assert leftovers == []


class TestEntryPoint:
    def test_console_script_runs(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"steps": 1, "substeps": 10}))
        proc = subprocess.run(
            [sys.executable, "-m", "confint.cli", "simulate", "--config", str(config), "--out", str(tmp_path)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "simulate.csv").exists()

    def test_unknown_config_path(self, tmp_path):
        assert run_cli(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
