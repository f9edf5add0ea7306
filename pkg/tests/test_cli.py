"""Command-line interface: artifacts, determinism, and failure reporting."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from blockcca.cli import main
from blockcca.estimators import BlockCCA
from blockcca.io import load_matrix, parse_table, write_table
from blockcca.simgen import SimConfig, generate_views

FIT_FILES = ["Z1.csv", "Z2.csv", "T1.csv", "T2.csv", "summary.json"]


@pytest.fixture(scope="module")
def views(tmp_path_factory):
    root = tmp_path_factory.mktemp("views")
    inst = generate_views(SimConfig(n=25, p=20, sigma=0.05, seed=11))
    x1, x2 = root / "x1.csv", root / "x2.csv"
    write_table(x1, inst.x1.data, inst.x1.feature_names)
    write_table(x2, inst.x2.data, inst.x2.feature_names)
    return x1, x2, inst


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def run_ok(*args):
    result = run(*args)
    assert result.exit_code == 0, result.output + result.stderr
    assert result.stdout == ""
    return result


class TestFit:
    def test_writes_all_artifacts(self, views, tmp_path):
        x1, x2, _ = views
        out = tmp_path / "out"
        run_ok("fit", "--x1", x1, "--x2", x2, "--gamma1", "0.1",
               "--gamma2", "0.1", "--d", "2", "--out", out)
        for name in FIT_FILES:
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["command"] == "fit"
        assert len(summary["canonical_correlations"]) == 2
        assert summary["config"]["gamma1"] == [0.1, 0.1]
        assert set(summary["orthonormality"]) == {"Z1", "Z2"}
        assert summary["stage1"]["converged"] == [True, True]
        assert summary["stage2"]["stop"] in ("tol", "max_iters")
        assert summary["dead_directions"] == []

    def test_rerun_reproduces_identical_bytes(self, views, tmp_path):
        x1, x2, _ = views
        args = ["fit", "--x1", x1, "--x2", x2, "--gamma1", "0.1",
                "--gamma2", "0.1", "--d", "2", "--seed", "5"]
        a, b = tmp_path / "a", tmp_path / "b"
        run_ok(*args, "--out", a)
        run_ok(*args, "--out", b)
        for name in FIT_FILES:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_outputs_match_library_fit_exactly(self, views, tmp_path):
        x1, x2, inst = views
        out = tmp_path / "out"
        run_ok("fit", "--x1", x1, "--x2", x2, "--gamma1", "0.1",
               "--gamma2", "0.1", "--d", "2", "--out", out)
        est = BlockCCA(d=2, gamma1=0.1, gamma2=0.1).fit(
            inst.x1.data, inst.x2.data
        )
        z1 = load_matrix(out / "Z1.csv", standardize=False)
        np.testing.assert_array_equal(z1.data, est.directions_[0])
        assert list(z1.feature_names) == ["d1", "d2"]
        _, mask1, labels = parse_table(out / "T1.csv")
        np.testing.assert_array_equal(
            mask1, est.patterns_[0].mask.astype(np.float64)
        )
        assert labels == list(inst.x1.feature_names)

    def test_masks_gate_directions(self, views, tmp_path):
        x1, x2, _ = views
        out = tmp_path / "out"
        run_ok("fit", "--x1", x1, "--x2", x2, "--gamma1", "0.2",
               "--gamma2", "0.2", "--out", out)
        _, z, _ = parse_table(out / "Z1.csv")
        _, mask, _ = parse_table(out / "T1.csv")
        assert not z[mask == 0.0].any()

    def test_overwhelming_threshold_reports_collapse(self, views, tmp_path):
        x1, x2, _ = views
        result = run("fit", "--x1", x1, "--x2", x2, "--gamma1", "1000",
                     "--gamma2", "1000", "--out", tmp_path / "out")
        assert result.exit_code == 1
        assert result.stderr.startswith("DeadGradient:")

    def test_no_standardize_flag(self, views, tmp_path):
        x1, x2, inst = views
        out = tmp_path / "out"
        run_ok("fit", "--x1", x1, "--x2", x2, "--gamma1", "0.5",
               "--gamma2", "0.5", "--no-standardize", "--out", out)
        est = BlockCCA(d=1, gamma1=0.5, gamma2=0.5, standardize=False).fit(
            inst.x1.data, inst.x2.data
        )
        z1 = load_matrix(out / "Z1.csv", standardize=False)
        np.testing.assert_array_equal(z1.data, est.directions_[0])


class TestFitMulti:
    def test_two_view_fit(self, views, tmp_path):
        x1, x2, _ = views
        out = tmp_path / "out"
        run_ok("fit-multi", "--views", f"{x1},{x2}", "--gamma", "0.05",
               "--out", out)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["command"] == "fit-multi"
        assert set(summary["pairwise_correlations"]) == {"1,2"}
        assert (out / "Z2.csv").exists()

    def test_single_view_rejected(self, views, tmp_path):
        x1, _, _ = views
        result = run("fit-multi", "--views", str(x1), "--out", tmp_path / "o")
        assert result.exit_code == 1
        assert result.stderr.startswith("ConfigError:")


class TestFitDirected:
    def test_writes_artifacts_with_pull(self, views, tmp_path):
        x1, x2, inst = views
        y = tmp_path / "y.csv"
        write_table(
            y, np.random.default_rng(12).standard_normal((25, 1)), ["y1"]
        )
        out = tmp_path / "out"
        run_ok("fit-directed", "--x1", x1, "--x2", x2, "--y", y,
               "--gamma1", "0.05", "--gamma2", "0.05", "--eps1", "0.5",
               "--eps2", "0.5", "--out", out)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["command"] == "fit-directed"
        assert summary["config"]["eps1"] == [0.5]
        assert (out / "Z1.csv").exists()

    def test_zero_pull_matches_plain_fit_bytes(self, views, tmp_path):
        x1, x2, _ = views
        y = tmp_path / "y.csv"
        write_table(
            y, np.random.default_rng(13).standard_normal((25, 1)), ["y1"]
        )
        plain, pulled = tmp_path / "plain", tmp_path / "pulled"
        run_ok("fit", "--x1", x1, "--x2", x2, "--gamma1", "0.1",
               "--gamma2", "0.1", "--seed", "2", "--out", plain)
        run_ok("fit-directed", "--x1", x1, "--x2", x2, "--y", y,
               "--gamma1", "0.1", "--gamma2", "0.1", "--eps1", "0",
               "--eps2", "0", "--seed", "2", "--out", pulled)
        for name in ["Z1.csv", "Z2.csv", "T1.csv", "T2.csv"]:
            assert (plain / name).read_bytes() == (pulled / name).read_bytes()


class TestTune:
    def test_grid_table_and_selection(self, views, tmp_path):
        x1, x2, _ = views
        out = tmp_path / "out"
        run_ok("tune", "--x1", x1, "--x2", x2,
               "--gamma-grid", "0.05:0.05,0.1:0.1", "--perms", "5",
               "--out", out)
        names, table, _ = parse_table(out / "table.csv")
        assert names == ["gamma1", "gamma2", "p_value", "rho_observed",
                         "n_failures", "failed"]
        assert table.shape == (2, 6)
        assert np.all(table[:, 5] == 0.0)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["selected_gamma"] in ([0.05, 0.05], [0.1, 0.1])
        assert 0.0 <= summary["selected_p_value"] <= 1.0
        assert summary["cell_errors"] == {}

    def test_failed_cell_reported_in_summary(self, views, tmp_path):
        x1, x2, _ = views
        out = tmp_path / "out"
        run_ok("tune", "--x1", x1, "--x2", x2,
               "--gamma-grid", "0.05:0.05,1000:1000", "--perms", "3",
               "--out", out)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["selected_gamma"] == [0.05, 0.05]
        assert summary["cell_errors"]["1"].startswith("DeadGradient")

    def test_malformed_grid_rejected(self, views, tmp_path):
        x1, x2, _ = views
        result = run("tune", "--x1", x1, "--x2", x2, "--gamma-grid", "0.1",
                     "--out", tmp_path / "o")
        assert result.exit_code == 1
        assert result.stderr.startswith("ConfigError:")


class TestSimulate:
    def test_writes_instance(self, tmp_path):
        out = tmp_path / "out"
        run_ok("simulate", "--n", "12", "--p", "30", "--sigma", "0.1",
               "--seed", "4", "--out", out)
        _, x1, _ = parse_table(out / "X1.csv")
        assert x1.shape == (12, 30)
        names, truth, labels = parse_table(out / "truth.csv")
        assert names == ["v11", "v12", "v21", "v22"]
        assert labels == [f"f{i + 1}" for i in range(30)]
        assert truth.shape == (30, 4)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["planted_block"] == 3
        assert summary["sigma_ratio"] > 0

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["simulate", "--n", "10", "--p", "20", "--sigma", "0.2",
                "--seed", "7"]
        run_ok(*args, "--out", a)
        run_ok(*args, "--out", b)
        for name in ["X1.csv", "X2.csv", "truth.csv", "summary.json"]:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_invalid_p_rejected(self, tmp_path):
        result = run("simulate", "--n", "10", "--p", "15", "--sigma", "0.1",
                     "--out", tmp_path / "o")
        assert result.exit_code == 1
        assert result.stderr.startswith("ConfigError:")

    def test_simulated_instance_feeds_fit(self, tmp_path):
        sim, out = tmp_path / "sim", tmp_path / "fit"
        run_ok("simulate", "--n", "30", "--p", "20", "--sigma", "0.05",
               "--seed", "9", "--out", sim)
        run_ok("fit", "--x1", sim / "X1.csv", "--x2", sim / "X2.csv",
               "--gamma1", "0.1", "--gamma2", "0.1", "--d", "2", "--out", out)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["canonical_correlations"][0] > 0.8


class TestSweep:
    def test_desk_scale_sweep(self, tmp_path):
        out = tmp_path / "out"
        run_ok("sweep", "--n", "10", "--p", "50",
               "--sigma-grid", "0.01:0.5:2", "--reps", "2", "--seed", "1",
               "--out", out)
        names, raw, _ = parse_table(out / "raw.csv")
        assert names[:2] == ["sigma_index", "rep"]
        assert raw.shape == (4, 7)
        _, medians, _ = parse_table(out / "running_median.csv")
        assert medians.shape == (4, 4)
        assert np.all(np.diff(medians[:, 0]) >= 0)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["rows"] == 4
        assert summary["failures"] == []
        assert summary["config"]["sigma_grid"] == [0.01, 0.5]

    def test_malformed_sigma_grid(self, tmp_path):
        for bad in ["1:2", "0:1:3", "a:b:c"]:
            result = run("sweep", "--n", "10", "--p", "20",
                         "--sigma-grid", bad, "--out", tmp_path / "o")
            assert result.exit_code == 1
            assert result.stderr.startswith("ConfigError:")


class TestInputErrors:
    def test_ragged_input(self, tmp_path):
        x1 = tmp_path / "x1.csv"
        x1.write_text("a,b\n1,2\n3\n")
        x2 = tmp_path / "x2.csv"
        x2.write_text("a,b\n1,2\n3,4\n")
        result = run("fit", "--x1", x1, "--x2", x2, "--out", tmp_path / "o")
        assert result.exit_code == 1
        assert result.stderr.startswith("RaggedRows:")

    def test_non_finite_input(self, tmp_path):
        x1 = tmp_path / "x1.csv"
        x1.write_text("a,b\n1,nan\n3,4\n")
        x2 = tmp_path / "x2.csv"
        x2.write_text("a,b\n1,2\n3,4\n")
        result = run("fit", "--x1", x1, "--x2", x2, "--out", tmp_path / "o")
        assert result.exit_code == 1
        assert result.stderr.startswith("NonFinite:")

    def test_missing_file(self, tmp_path):
        result = run("fit", "--x1", tmp_path / "absent.csv",
                     "--x2", tmp_path / "absent.csv", "--out", tmp_path / "o")
        assert result.exit_code == 1
        assert result.stderr.startswith("ParseError:")

    def test_bad_mu_string(self, views, tmp_path):
        x1, x2, _ = views
        result = run("fit", "--x1", x1, "--x2", x2, "--mu", "a,b",
                     "--out", tmp_path / "o")
        assert result.exit_code == 1
        assert result.stderr.startswith("ConfigError:")
