"""Command-line interface: outputs, manifests, exit codes."""

import json

import numpy as np
import pytest

from gridobs import cli, experiments


def run(argv):
    return cli.main(argv)


@pytest.fixture()
def fig3_config(tmp_path):
    cfg = experiments.load_experiment("fig3")
    cfg["sim"]["replicas"] = 8
    cfg["sim"]["K"] = 12
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


class TestLinearize:
    @pytest.mark.parametrize("name,entry,value", [
        ("two_bus", (1, 0), -197.7372),
        ("ieee5", (1, 0), 7.7926),
        ("ieee33", (3, 2), -4.4785),
    ])
    def test_builtin_grids(self, tmp_path, name, entry, value):
        assert run(["linearize", "--grid", name, "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "linearized.json").read_text())
        A = np.array(doc["A"])
        assert abs(A[entry] - value) / abs(value) < 5e-2
        assert (tmp_path / "manifest.json").exists()

    def test_unknown_grid_exit_code(self, tmp_path, capsys):
        assert run(["linearize", "--grid", "nope", "--out", str(tmp_path)]) == 2
        assert "unknown builtin" in capsys.readouterr().err

    def test_missing_grid_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["linearize"])
        assert exc.value.code == 2   # argparse's usage-error exit


class TestAnalyze:
    def test_fig3_report(self, tmp_path, fig3_config, capsys):
        assert run(["analyze", "--config", str(fig3_config),
                    "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "analysis.json").read_text())
        conv = doc["convergence"]
        assert conv["gamma_exact"] < 1.0
        assert abs(conv["tau_max"] - 0.7365) / 0.7365 < 0.05
        assert doc["steady_state"]["mu_state"] > 0


class TestDesign:
    def test_fig3_design_lists_gains(self, tmp_path, fig3_config):
        assert run(["design", "--config", str(fig3_config),
                    "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "design.json").read_text())
        assert doc["combined_rank"] == 4
        by_index = {s["index"]: s for s in doc["scenarios"]}
        assert by_index[1]["n_i"] == 4
        assert by_index[4]["L"] is None
        poles = by_index[1]["closed_loop_poles"]
        assert np.allclose(sorted(poles), [-4.8, -4.4, -4.0, -3.6], atol=1e-6)


class TestSimulate:
    def test_trajectory_csv_and_manifest(self, tmp_path, fig3_config):
        assert run(["simulate", "--config", str(fig3_config),
                    "--out", str(tmp_path), "--seed", "77"]) == 0
        lines = (tmp_path / "trajectory.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        assert header[:4] == ["k", "t_seconds", "mean_err_sq", "var_err_sq"]
        assert header[4:] == ["mean_e1", "mean_e2", "mean_e3", "mean_e4"]
        assert len(lines) == 1 + 13   # K+1 rows
        first = lines[1].split(",")
        assert float(first[2]) == pytest.approx(5.0)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["sim"]["seed"] == 77
        assert len(manifest["switching_paths"]) == 8

    def test_seed_override_changes_paths(self, tmp_path, fig3_config):
        run(["simulate", "--config", str(fig3_config), "--out",
             str(tmp_path / "a"), "--seed", "1"])
        run(["simulate", "--config", str(fig3_config), "--out",
             str(tmp_path / "b"), "--seed", "1"])
        a = (tmp_path / "a" / "trajectory.csv").read_text()
        b = (tmp_path / "b" / "trajectory.csv").read_text()
        assert a == b


class TestReproduce:
    def test_fig3_small_run_passes(self, tmp_path, capsys):
        rc = run(["reproduce", "fig3", "--out", str(tmp_path),
                  "--replicas", "40"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "pass" in out
        assert (tmp_path / "fig3.csv").exists()
        manifest = json.loads((tmp_path / "fig3_manifest.json").read_text())
        assert manifest["result"]["checks"]["gamma_below_one"] is True

    def test_failing_check_exit_code(self, tmp_path, monkeypatch):
        def fake(name, workers=1, seed=None, replicas=None):
            return {"name": name, "config": {}, "checks": {"x": False},
                    "passed": False}
        monkeypatch.setattr(experiments, "run_experiment", fake)
        assert run(["reproduce", "fig3", "--out", str(tmp_path)]) == 3

    def test_unknown_experiment_rejected(self):
        with pytest.raises(SystemExit):
            run(["reproduce", "fig99"])
