import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from kcoherence.cli import main
from kcoherence.pipeline import PipelineConfig, run_pipeline, sweep_windows


@pytest.fixture()
def runner():
    return CliRunner()


def circle_config(tmp_path, n_samples=400, n_delays=1, **overrides):
    cfg = {
        "source": {"kind": "circle", "freq": 1.0},
        "dt": 2 * np.pi / 400,
        "n_delays": n_delays,
        "n_samples": n_samples,
        "knn": 40,
        "n_eigenpairs": 6,
        "lags": 60,
        "seed": 0,
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestStageCommands:
    def test_full_stagewise_run(self, runner, tmp_path):
        traj = tmp_path / "traj.bin"
        graph = tmp_path / "graph.bin"
        kern = tmp_path / "kernel.npz"
        eig = tmp_path / "eigs.npz"

        r = runner.invoke(main, ["generate", "--system", "circle",
                                 "--freq", "1.0", "--dt", str(2 * np.pi / 400),
                                 "--samples", "400", "--out", str(traj)])
        assert r.exit_code == 0, r.output
        r = runner.invoke(main, ["embed", "--traj", str(traj), "--delays", "1",
                                 "--knn", "40", "--out", str(graph)])
        assert r.exit_code == 0, r.output
        r = runner.invoke(main, ["kernel", "--graph", str(graph),
                                 "--out", str(kern),
                                 "--tuning-out", str(tmp_path / "tuning.json")])
        assert r.exit_code == 0, r.output
        r = runner.invoke(main, ["eigs", "--graph", str(graph),
                                 "--kernel", str(kern), "--num-eigs", "6",
                                 "--out", str(eig),
                                 "--csv", str(tmp_path / "eigenvalues.csv")])
        assert r.exit_code == 0, r.output
        r = runner.invoke(main, ["analyze", "--traj", str(traj),
                                 "--graph", str(graph), "--kernel", str(kern),
                                 "--eigs", str(eig), "--lags", "60",
                                 "--out-dir", str(tmp_path / "analysis")])
        assert r.exit_code == 0, r.output

        summary = json.loads((tmp_path / "analysis" / "coherence.json").read_text())
        assert abs(summary["frequency"] - 1.0) < 0.02
        tuning = json.loads((tmp_path / "tuning.json").read_text())
        assert {"grid", "sums", "slopes", "sigma_star", "m_est"} <= set(tuning["base"])

    def test_stagewise_matches_full_run_bit_for_bit(self, runner, tmp_path):
        cfg = circle_config(tmp_path)
        config = PipelineConfig.from_dict(cfg)
        bundle = run_pipeline(config)

        # re-run the downstream stages from the cached artifacts
        out = bundle.out_dir
        r = runner.invoke(main, ["eigs", "--graph", str(out / "graph.bin"),
                                 "--kernel", str(out / "kernel.npz"),
                                 "--num-eigs", "6", "--seed", "0",
                                 "--out", str(tmp_path / "eigs2.npz"),
                                 "--csv", str(tmp_path / "eig2.csv")])
        assert r.exit_code == 0, r.output
        a = (out / "eigenvalues.csv").read_bytes()
        b = (tmp_path / "eig2.csv").read_bytes()
        assert a == b

        r = runner.invoke(main, ["analyze", "--traj", str(out / "trajectory.traj"),
                                 "--graph", str(out / "graph.bin"),
                                 "--kernel", str(out / "kernel.npz"),
                                 "--eigs", str(tmp_path / "eigs2.npz"),
                                 "--lags", "60", "--source-kind", "circle",
                                 "--out-dir", str(tmp_path / "analysis2")])
        assert r.exit_code == 0, r.output
        assert ((tmp_path / "analysis2" / "coherence.csv").read_bytes()
                == (out / "coherence.csv").read_bytes())

    def test_extend_command(self, runner, tmp_path):
        cfg = circle_config(tmp_path)
        bundle = run_pipeline(PipelineConfig.from_dict(cfg))
        query = tmp_path / "query.csv"
        theta = 0.7
        query.write_text(f"{np.cos(theta)},{np.sin(theta)}\n")
        r = runner.invoke(main, ["extend",
                                 "--model", str(bundle.out_dir / "model.json"),
                                 "--query", str(query)])
        assert r.exit_code == 0, r.output
        payload = json.loads(r.output)
        assert set(payload) == {"re", "im", "abs", "arg"}
        assert 0.5 < payload["abs"] < 2.0


class TestReportCommand:
    def test_report_runs_and_is_deterministic(self, runner, tmp_path):
        cfg = circle_config(tmp_path)
        path = write_config(tmp_path, cfg)
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        r1 = runner.invoke(main, ["report", "--config", str(path),
                                  "--out-dir", str(out1)])
        assert r1.exit_code == 0, r1.output
        r2 = runner.invoke(main, ["report", "--config", str(path),
                                  "--out-dir", str(out2)])
        assert r2.exit_code == 0, r2.output

        for name in ("coherence.csv", "eigenvalues.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        b1 = json.loads((out1 / "bundle.json").read_text())
        b2 = json.loads((out2 / "bundle.json").read_text())
        assert b1["files"] == b2["files"]

    def test_manifest_hashes_match_files(self, runner, tmp_path):
        import hashlib
        cfg = circle_config(tmp_path)
        bundle = run_pipeline(PipelineConfig.from_dict(cfg))
        manifest = json.loads((bundle.out_dir / "bundle.json").read_text())
        for name, digest in manifest["files"].items():
            got = hashlib.sha256((bundle.out_dir / name).read_bytes()).hexdigest()
            assert got == digest, name

    def test_config_error_exit_code(self, runner, tmp_path):
        path = write_config(tmp_path, {"source": {"kind": "nope"}, "dt": 0.1,
                                       "n_delays": 1})
        r = runner.invoke(main, ["report", "--config", str(path)])
        assert r.exit_code == 2

    def test_io_error_exit_code(self, runner, tmp_path):
        cfg = circle_config(tmp_path)
        cfg["source"] = {"kind": "file", "path": str(tmp_path / "missing.traj")}
        del cfg["n_samples"]
        path = write_config(tmp_path, cfg)
        r = runner.invoke(main, ["report", "--config", str(path)])
        assert r.exit_code == 4


class TestSweep:
    def test_sweep_command(self, runner, tmp_path):
        cfg = circle_config(tmp_path, n_samples=300, knn=30, lags=20)
        cfg["dt"] = 0.05
        path = write_config(tmp_path, cfg)
        out = tmp_path / "sweep.csv"
        r = runner.invoke(main, ["sweep", "--config", str(path),
                                 "--windows", "0,0.25,0.5", "--out", str(out)])
        assert r.exit_code == 0, r.output
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("T,lambda,gamma,delta,delta_over_gamma,delta_rel,eta")
        assert len(lines) == 4

    def test_single_window_matches_pipeline_gaps(self, tmp_path):
        cfg = circle_config(tmp_path, n_samples=300, knn=30, lags=20)
        cfg["dt"] = 0.05
        cfg["n_delays"] = 10
        config = PipelineConfig.from_dict(cfg)
        rows = sweep_windows(config, [0.5])
        bundle = run_pipeline(config)
        gaps = json.loads((bundle.out_dir / "gaps.json").read_text())
        assert rows[0]["status"] == "ok"
        assert rows[0]["lambda"] == pytest.approx(gaps["lambda"], rel=1e-12)
        assert rows[0]["gamma"] == pytest.approx(gaps["gamma"], rel=1e-12)
        assert rows[0]["eta"] == pytest.approx(gaps["eta"], rel=1e-12)

    def test_sweep_zero_window_uses_single_delay(self, tmp_path):
        cfg = circle_config(tmp_path, n_samples=200, knn=25, lags=20)
        cfg["dt"] = 0.05
        config = PipelineConfig.from_dict(cfg)
        rows = sweep_windows(config, [0.0])
        assert rows[0]["n_delays"] == 1
        assert rows[0]["eta"] == 0.0

    def test_sweep_records_failures_and_continues(self, tmp_path):
        # a file source has fixed length: a window that leaves fewer
        # embedded samples than neighbors fails, the rest proceed
        from kcoherence.trajectory import circle_flow, save_trajectory
        traj = circle_flow(1.0, 0.05, 260)
        path = tmp_path / "t.traj"
        save_trajectory(traj, path)
        cfg = {
            "source": {"kind": "file", "path": str(path)},
            "dt": 0.05, "n_delays": 1, "knn": 25, "n_eigenpairs": 6,
            "lags": 20, "out_dir": str(tmp_path / "out"),
        }
        config = PipelineConfig.from_dict(cfg)
        rows = sweep_windows(config, [0.5, 12.0])
        assert rows[0]["status"] == "ok"
        assert rows[1]["status"].startswith("failed")


def test_failed_stage_removes_partial_outputs(tmp_path):
    cfg = circle_config(tmp_path, n_samples=120, knn=150)  # knn > n fails embed
    config = PipelineConfig.from_dict(cfg)
    from kcoherence.errors import ConfigurationError
    with pytest.raises(ConfigurationError) as err:
        run_pipeline(config)
    assert getattr(err.value, "stage", None) == "delay"
    out = Path(cfg["out_dir"])
    assert (out / "trajectory.traj").exists()  # completed stage kept
    assert not (out / "graph.bin").exists()


def test_window_config_round_trip():
    cfg = PipelineConfig.from_dict({
        "source": {"kind": "circle"}, "dt": 0.01, "window": 8.0,
        "n_samples": 100})
    assert cfg.n_delays == 800
    assert cfg.window == pytest.approx(8.0)
