import json

import pytest

from reflectsim.cli import main
from reflectsim.config import load_config
from reflectsim.errors import ConfigError

BALL_CFG = """
[domain]
kind = "interval"
lo = 0.0
hi = 10.0

[force]
kind = "constant_gravity"
g = [-1.0]

[initial]
positions = [[1.0]]
velocities = [[0.0]]

[run]
horizon = 5.0
solver = "exact"
seed = 0

[analysis]
energy_windows = [[0.0, 4.0]]
measure = true
weak_form = true
"""

SWEEP_CFG = """
[domain]
kind = "interval"
lo = 0.0
hi = 10.0

[force]
kind = "constant_gravity"
g = [-1.0]

[initial]
positions = [[1.0]]
velocities = [[0.0]]

[run]
horizon = 3.0
solver = "penalty"
k_list = [1e2, 1e3, 1e4]
seed = 0
"""


@pytest.fixture
def ball_config(tmp_path):
    p = tmp_path / "ball.toml"
    p.write_text(BALL_CFG)
    return p


class TestLoadConfig:
    def test_parses(self, ball_config):
        cfg = load_config(ball_config)
        assert cfg.domain.kind == "interval"
        assert cfg.horizon == 5.0
        assert cfg.initial.n == 1

    def test_missing_section(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[domain]\nkind = 'interval'\nlo = 0.0\nhi = 1.0\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_inadmissible_initial(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text(BALL_CFG.replace("[[1.0]]", "[[-1.0]]", 1))
        with pytest.raises(ConfigError):
            load_config(p)

    def test_unknown_solver_option(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text(BALL_CFG + "\n[solver_options]\nbogus = 1.0\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_dimension_mismatch(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text(BALL_CFG.replace("[[1.0]]", "[[1.0, 2.0]]", 1))
        with pytest.raises(ConfigError):
            load_config(p)


class TestSimulate:
    def test_artifacts_and_exit(self, tmp_path, ball_config):
        out = tmp_path / "out"
        rc = main(["simulate", "--config", str(ball_config),
                   "--out", str(out), "--quiet"])
        assert rc == 0
        assert (out / "trajectory_exact.csv").exists()
        assert (out / "events_exact.json").exists()
        assert (out / "energy_exact.json").exists()
        assert (out / "weak_form_exact.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ok"] is True
        events = json.loads((out / "events_exact.json").read_text())
        assert len(events["events"]) == 2  # bounces at sqrt2, 3 sqrt2 in [0,5]

    def test_usage_error_exit_2(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[domain]\nkind='nope'\n[initial]\n[run]\n")
        out = tmp_path / "out"
        rc = main(["simulate", "--config", str(bad), "--out", str(out),
                   "--quiet"])
        assert rc == 2
        summary = json.loads((out / "summary.json").read_text())
        assert summary["error"] == "config"

    def test_missing_file_exit_2(self, tmp_path):
        rc = main(["simulate", "--config", str(tmp_path / "nope.toml"),
                   "--out", str(tmp_path / "o"), "--quiet"])
        assert rc == 2


class TestPenaltySweep:
    def test_sweep_artifacts(self, tmp_path):
        cfgp = tmp_path / "sweep.toml"
        cfgp.write_text(SWEEP_CFG)
        out = tmp_path / "out"
        rc = main(["penalty-sweep", "--config", str(cfgp), "--out", str(out),
                   "--quiet"])
        assert rc == 0
        assert (out / "sweep.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert -0.6 < summary["penetration_slope"] < -0.4


class TestCounterexample:
    def test_certificate(self, tmp_path):
        out = tmp_path / "out"
        rc = main(["counterexample", "--L", "2", "--n-max", "5",
                   "--out", str(out), "--quiet"])
        assert rc == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["passed"] is True
        assert (out / "profile.csv").exists()


class TestValidate:
    def test_valid_scenario(self, tmp_path, ball_config):
        out = tmp_path / "out"
        rc = main(["validate", "--config", str(ball_config),
                   "--out", str(out), "--quiet"])
        assert rc == 0
        rep = json.loads((out / "geometry_report.json").read_text())
        assert rep["passed"] is True


class TestCompare:
    def test_gap_artifacts(self, tmp_path):
        cfgp = tmp_path / "cmp.toml"
        cfgp.write_text(BALL_CFG.replace('solver = "exact"',
                                         'solver = "both"\nk = 1e4')
                        .replace("horizon = 5.0", "horizon = 3.0"))
        out = tmp_path / "out"
        rc = main(["compare", "--config", str(cfgp), "--out", str(out),
                   "--quiet"])
        assert rc == 0
        data = json.loads((out / "comparison.json").read_text())
        assert data["sup_pos_gap"] < 0.2


class TestDeterminism:
    @pytest.mark.parametrize("command,cfg_text", [
        ("simulate", BALL_CFG),
        ("penalty-sweep", SWEEP_CFG),
    ])
    def test_byte_identical_artifacts(self, tmp_path, command, cfg_text):
        cfgp = tmp_path / "cfg.toml"
        cfgp.write_text(cfg_text)
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            rc = main([command, "--config", str(cfgp), "--out", str(out),
                       "--quiet"])
            assert rc == 0
            outs.append(out)
        files_a = sorted(p.name for p in outs[0].iterdir())
        files_b = sorted(p.name for p in outs[1].iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_counterexample_deterministic(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            rc = main(["counterexample", "--n-max", "4", "--out", str(out),
                       "--quiet"])
            assert rc == 0
            outs.append(out)
        for name in ("certificate.json", "profile.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestWorkerPool:
    def test_thread_cap_changes_nothing(self, tmp_path, monkeypatch):
        cfgp = tmp_path / "sweep.toml"
        cfgp.write_text(SWEEP_CFG)
        out_serial = tmp_path / "serial"
        assert main(["penalty-sweep", "--config", str(cfgp),
                     "--out", str(out_serial), "--quiet"]) == 0
        monkeypatch.setenv("REFLECTSIM_THREADS", "3")
        out_pool = tmp_path / "pool"
        assert main(["penalty-sweep", "--config", str(cfgp),
                     "--out", str(out_pool), "--quiet"]) == 0
        for name in ("sweep.csv", "sweep.json", "summary.json"):
            assert (out_serial / name).read_bytes() == \
                (out_pool / name).read_bytes()


class TestRuntimeFailureSummary:
    def test_exit_1_with_summary(self, tmp_path):
        # stiffness far below the admissible minimum: typed runtime failure
        cfgp = tmp_path / "bad_k.toml"
        cfgp.write_text(BALL_CFG.replace('solver = "exact"',
                                         'solver = "penalty"\nk = 1e-3'))
        out = tmp_path / "out"
        rc = main(["simulate", "--config", str(cfgp), "--out", str(out),
                   "--quiet"])
        assert rc == 1
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ok"] is False
        assert summary["error"] == "StiffnessError"


class TestCounterexampleArgs:
    def test_bad_n_max_is_usage_error(self, tmp_path):
        out = tmp_path / "out"
        rc = main(["counterexample", "--n-max", "0", "--out", str(out),
                   "--quiet"])
        assert rc == 2
