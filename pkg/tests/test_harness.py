import json
import os

import numpy as np
import pytest

from sigfbsde import cli, harness, solver


class TestLoadConfig:
    def test_lookback_defaults_follow_reference_settings(self):
        cfg = harness.load_config(overrides={"experiment": "lookback"})
        spec = cfg.spec
        assert spec.grid.n_fine == 2000
        assert spec.grid.n_coarse == 20
        assert spec.depth == 3
        assert spec.batch_size == 100
        assert spec.model.x0 == (10.0,)
        assert spec.feature == "signature"
        assert spec.driver.rate == 0.01

    def test_method_switch_changes_batch_default(self):
        cfg = harness.load_config(overrides={"experiment": "lookback",
                                             "method": "backward"})
        assert cfg.spec.batch_size == 1000

    def test_indivisible_grid_rejected(self):
        with pytest.raises(harness.ConfigError, match="divide"):
            harness.load_config(overrides={"experiment": "lookback",
                                           "n_fine": 2001})

    def test_unknown_keys_listed(self):
        with pytest.raises(harness.ConfigError, match="swoosh"):
            harness.load_config(overrides={"experiment": "lookback",
                                           "swoosh": 1, "n_fine": 100})

    def test_unknown_experiment_rejected(self):
        with pytest.raises(harness.ConfigError, match="vanilla"):
            harness.load_config(overrides={"experiment": "vanilla"})

    def test_high_dimension_enables_embedding(self):
        cfg = harness.load_config(overrides={"experiment": "amerasian",
                                             "d": 100})
        assert cfg.spec.embed_dim == 5

    def test_moderate_dimension_keeps_plain_features(self):
        cfg = harness.load_config(overrides={"experiment": "amerasian",
                                             "d": 5})
        assert cfg.spec.embed_dim is None

    def test_file_and_overrides_compose(self, tmp_path):
        doc = {"experiment": "quadratic", "d": 4, "iterations": 7}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        cfg = harness.load_config(str(path), overrides={"iterations": 9})
        assert cfg.spec.model.dim == 4
        assert cfg.spec.iterations == 9

    def test_string_values_coerced(self):
        cfg = harness.load_config(overrides={"experiment": "quadratic",
                                             "d": "6", "lr": "0.01",
                                             "embed_dim": "none"})
        assert cfg.spec.model.dim == 6
        assert cfg.spec.learning_rate == 0.01
        assert cfg.spec.embed_dim is None

    def test_round_trip(self):
        cfg = harness.load_config(overrides={
            "experiment": "amerasian", "profile": "desk", "d": 2,
            "iterations": 11, "seed": 99, "out": "/tmp/somewhere"})
        again = harness.load_config(overrides=harness.config_document(cfg))
        assert again == cfg

    def test_per_run_seeds_distinct_and_reproducible(self):
        seeds_a = [solver.derive_seed(7, 6, r) for r in range(20)]
        seeds_b = [solver.derive_seed(7, 6, r) for r in range(20)]
        assert seeds_a == seeds_b
        assert len(set(seeds_a)) == 20


def tiny_quadratic_overrides(**extra):
    doc = {"experiment": "quadratic", "profile": "desk", "d": 2,
           "n_fine": 20, "n_coarse": 5, "batch": 16, "iterations": 6,
           "runs": 2, "seed": 5}
    doc.update(extra)
    return doc


class TestRunExperiment:
    def test_quadratic_summary_and_files(self, tmp_path):
        out = str(tmp_path / "results")
        cfg = harness.load_config(overrides=tiny_quadratic_overrides(out=out))
        table = harness.run_experiment(cfg)
        assert len(table.rows) == 2
        assert abs(table.summary["reference"] - 2.0 / 3.0) < 1e-12
        # summary mean recomputable from the rows
        assert abs(table.summary["mean"]
                   - np.mean([row[1] for row in table.rows])) < 1e-12
        for name in ("curve_run0.csv", "curve_run1.csv", "summary.csv",
                     "report.json"):
            assert os.path.exists(os.path.join(out, name))
        report = json.loads((tmp_path / "results" / "report.json").read_text())
        assert report["runs"] == 2
        assert "rel_error" in report

    def test_zero_isquared_iterations_still_emit(self, tmp_path):
        out = str(tmp_path / "zero")
        cfg = harness.load_config(overrides=tiny_quadratic_overrides(
            out=out, iterations=0, runs=1))
        table = harness.run_experiment(cfg)
        assert len(table.rows) == 1
        curve = (tmp_path / "zero" / "curve_run0.csv").read_text()
        assert curve == "iteration,loss,y0_estimate,elapsed_s\n"

    def test_emission_is_deterministic(self, tmp_path):
        cfg = harness.load_config(overrides=tiny_quadratic_overrides(runs=1))
        table = harness.run_experiment(cfg)
        d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
        harness.emit_outputs(table, table.reports, d1)
        harness.emit_outputs(table, table.reports, d2)
        for name in ("curve_run0.csv", "summary.csv", "report.json"):
            with open(os.path.join(d1, name), "rb") as fa, \
                 open(os.path.join(d2, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_amerasian_summary_includes_bound(self):
        cfg = harness.load_config(overrides={
            "experiment": "amerasian", "profile": "desk", "d": 1,
            "n_fine": 40, "n_coarse": 10, "batch": 32, "iterations": 2,
            "runs": 1, "reference_paths": 2000, "seed": 1})
        table = harness.run_experiment(cfg)
        assert abs(table.summary["jensen_bound"] - 2.418) < 1e-3
        assert table.summary["european_se"] > 0.0


class TestCli:
    def test_run_exit_zero(self, tmp_path, capsys):
        out = str(tmp_path / "cli")
        code = cli.main(["run", "--experiment", "quadratic",
                         "--profile", "desk", "--seed", "3", "--out", out,
                         "--set", "d=2", "--set", "n_fine=20",
                         "--set", "n_coarse=5", "--set", "batch=16",
                         "--set", "iterations=4"])
        assert code == 0
        assert "quadratic" in capsys.readouterr().out
        assert os.path.exists(os.path.join(out, "report.json"))

    def test_validation_error_exit_two(self, capsys):
        code = cli.main(["run", "--experiment", "lookback",
                         "--set", "n_fine=2001"])
        assert code == 2
        assert "divide" in capsys.readouterr().err

    def test_numerical_abort_exit_three(self, capsys):
        code = cli.main(["run", "--experiment", "quadratic",
                         "--profile", "desk",
                         "--set", "d=2", "--set", "n_fine=20",
                         "--set", "n_coarse=5", "--set", "batch=8",
                         "--set", "iterations=3", "--set", "y0_init=1e200"])
        assert code == 3

    def test_oracle_command(self, capsys):
        code = cli.main(["oracle", "--experiment", "quadratic"])
        assert code == 0
        assert "6.666" in capsys.readouterr().out

    def test_selftest_passes(self, capsys):
        assert cli.main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "PASS" in out
