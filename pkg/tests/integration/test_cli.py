#!/usr/bin/env python3
"""
End-to-end CLI tests: every command through main(), JSON output and exit codes

Run:
    pytest tests/integration/test_cli.py -v
"""
import json
import shutil
import sys
import tempfile
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import probscale.config as config
from probscale.cli import (
    EXIT_CONTRACT,
    EXIT_OK,
    EXIT_USAGE,
    main,
)
from probscale.io import read_dataset_csv, write_dataset_csv
from probscale.models import ExampleConfig
from probscale.services.synthetic import sample_example


@pytest.fixture
def setup_test_env():
    """Temporary output directory, ledger disabled"""
    original_output = config.OUTPUT_DIR
    original_db = config.AUDIT_DB_PATH

    temp_dir = Path(tempfile.mkdtemp())
    config.OUTPUT_DIR = temp_dir / "out"
    config.AUDIT_DB_PATH = None

    yield temp_dir

    shutil.rmtree(temp_dir)
    config.OUTPUT_DIR = original_output
    config.AUDIT_DB_PATH = original_db


def run_json(capsys, *argv):
    """main([..., '--json']) -> (exit code, parsed report)"""
    code = main([*argv, "--json"])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


class TestSampleSize:
    """sample-size command"""

    def test_running_example(self, setup_test_env, capsys):
        code, report = run_json(capsys, "sample-size", "--epsilon", "0.05", "--delta", "1e-6")
        assert code == EXIT_OK
        assert (report["n_samples"], report["discard_rank"]) == (2065, 51)
        assert report["binomial_tail"] <= 1e-6

    def test_family_exact_constant(self, setup_test_env, capsys):
        code, report = run_json(
            capsys, "sample-size", "--epsilon", "0.05", "--delta", "1e-6", "--n-family", "10", "--constant", "exact"
        )
        assert code == EXIT_OK
        assert (report["n_samples"], report["discard_rank"]) == (2407, 60)
        assert report["binomial_tail"] <= 1e-7

    def test_exact_flag(self, setup_test_env, capsys):
        code, report = run_json(capsys, "sample-size", "--epsilon", "0.05", "--delta", "1e-6", "--exact")
        assert code == EXIT_OK
        assert report["exact_n_samples"] <= 2065
        assert report["exact_binomial_tail"] <= 1e-6

    def test_max_rule(self, setup_test_env, capsys):
        code, report = run_json(capsys, "sample-size", "--epsilon", "0.05", "--delta", "1e-6", "--rule", "max")
        assert (report["n_samples"], report["discard_rank"]) == (277, 1)

    def test_explicit_rule_needs_r(self, setup_test_env, capsys):
        assert main(["sample-size", "--rule", "explicit"]) == EXIT_USAGE

    def test_table(self, setup_test_env, capsys):
        code, report = run_json(capsys, "sample-size", "--epsilon", "0.05", "--delta", "1e-6", "--table", "3")
        assert [row["r"] for row in report["table"]] == [1, 2, 3]
        assert report["table"][0]["n_exact"] == 270

    def test_epsilon_out_of_range(self, setup_test_env):
        with pytest.raises(SystemExit) as excinfo:
            main(["sample-size", "--epsilon", "2"])
        assert excinfo.value.code == EXIT_USAGE

    def test_constant_too_small(self, setup_test_env, capsys):
        assert main(["sample-size", "--constant", "7.0"]) == EXIT_USAGE
        assert "below" in capsys.readouterr().err

    def test_human_output(self, setup_test_env, capsys):
        assert main(["sample-size", "--epsilon", "0.05", "--delta", "1e-6"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "2065" in out and "51" in out

    def test_config_file(self, setup_test_env, capsys):
        cfg = setup_test_env / "exp.json"
        cfg.write_text(json.dumps({"epsilon": 0.05, "delta": 1e-6, "constant": "exact"}))
        code, report = run_json(capsys, "sample-size", "--config", str(cfg))
        assert report["n_samples"] == 2063
        code, report = run_json(capsys, "sample-size", "--config", str(cfg), "--constant", "rounded")
        assert report["n_samples"] == 2065

    def test_config_file_rejects_unknown_key(self, setup_test_env, capsys):
        cfg = setup_test_env / "exp.json"
        cfg.write_text(json.dumps({"epsilon": 0.05, "eps": 0.1}))
        assert main(["sample-size", "--config", str(cfg)]) == EXIT_USAGE


class TestCalibrateAndValidate:
    """calibrate -> validate round trip"""

    def test_oracle_fixed_then_conditioned(self, setup_test_env, capsys):
        code, fixed = run_json(capsys, "calibrate", "--seed", "1", "--predictor", "oracle")
        assert code == EXIT_OK
        assert fixed["mode"] == "fixed"
        assert (fixed["n_samples"], fixed["discard_rank"]) == (2065, 51)
        assert fixed["calibration_source"] == "synthetic:seed=1:stream=calibration"
        assert (config.OUTPUT_DIR / "calibration.json").exists()

        code, unit = run_json(capsys, "calibrate", "--seed", "1", "--sigma", "constant:1")
        assert unit["mode"] == "conditioned"
        assert unit["gamma_bar"] == fixed["rho"]
        assert unit["config_hash"] != fixed["config_hash"]

    def test_validate_fixed(self, setup_test_env, capsys):
        report_path = setup_test_env / "cal.json"
        run_json(capsys, "calibrate", "--seed", "2", "--output", str(report_path))
        code, report = run_json(capsys, "validate", "--report", str(report_path), "--validation-size", "5000")
        assert code == EXIT_OK
        assert report["total"] == 5000
        assert report["validation_source"] == "synthetic:seed=2:stream=validation"
        assert report["violation_ratio"] == report["violations"] / 5000
        assert report["violation_ratio"] < 0.065

    def test_validate_with_comparisons_and_bounds(self, setup_test_env, capsys):
        report_path = setup_test_env / "cal.json"
        bounds = setup_test_env / "bounds.csv"
        run_json(capsys, "calibrate", "--seed", "3", "--sigma", "exact", "--output", str(report_path))
        code, report = run_json(
            capsys, "validate", "--report", str(report_path), "--validation-size", "2000",
            "--compare-exact", "--compare-markov", "--emit-bounds", str(bounds),
        )
        assert code == EXIT_OK
        comps = report["comparisons"]
        assert comps["markov"]["mean_bound_width"] > comps["exact"]["mean_bound_width"]
        assert comps["markov"]["violation_ratio"] <= comps["exact"]["violation_ratio"]
        lines = bounds.read_text().splitlines()
        assert lines[0] == "x,y,bound_lo,bound_hi,method"
        assert len(lines) == 1 + 3 * 2000

    def test_calibrate_emit_grid(self, setup_test_env, capsys):
        bounds = setup_test_env / "grid.csv"
        code, _ = run_json(capsys, "calibrate", "--seed", "1", "--emit-bounds", str(bounds), "--grid-points", "11")
        assert code == EXIT_OK
        assert len(bounds.read_text().splitlines()) == 12

    def test_csv_size_mismatch(self, setup_test_env, capsys):
        path = write_dataset_csv(setup_test_env / "c.csv", sample_example(100, ExampleConfig(seed=1)))
        assert main(["calibrate", "--data", str(path)]) == EXIT_CONTRACT
        err = capsys.readouterr().err
        assert "100" in err and "2065" in err

    def test_malformed_csv(self, setup_test_env, capsys):
        path = setup_test_env / "bad.csv"
        path.write_text("x1,x2\n1,2\n")
        assert main(["calibrate", "--data", str(path)]) == EXIT_CONTRACT
        assert "line 1" in capsys.readouterr().err

    def test_csv_round_trip_and_overlap_refused(self, setup_test_env, capsys):
        calib = write_dataset_csv(setup_test_env / "calib.csv", sample_example(100, ExampleConfig(seed=4)))
        valid = write_dataset_csv(
            setup_test_env / "valid.csv", sample_example(300, ExampleConfig(seed=4), stream="validation")
        )
        report_path = setup_test_env / "cal.json"
        code, cal = run_json(
            capsys, "calibrate", "--data", str(calib), "--epsilon", "0.1", "--delta", "0.2",
            "--n-samples", "100", "--r", "3", "--output", str(report_path),
        )
        assert code == EXIT_OK
        assert cal["rule"] == "manual"

        code, report = run_json(capsys, "validate", "--report", str(report_path), "--data", str(valid))
        assert code == EXIT_OK
        assert report["total"] == 300

        assert main(["validate", "--report", str(report_path), "--data", str(calib)]) == EXIT_CONTRACT

    def test_manual_spec_must_hold(self, setup_test_env, capsys):
        assert main(["calibrate", "--n-samples", "100", "--r", "10"]) == EXIT_CONTRACT

    def test_predictor_hash_mismatch_refused(self, setup_test_env, capsys):
        report_path = setup_test_env / "cal.json"
        run_json(capsys, "calibrate", "--seed", "5", "--output", str(report_path))
        code = main(["validate", "--report", str(report_path), "--sigma", "exact", "--validation-size", "1000"])
        assert code == EXIT_CONTRACT
        assert "hash" in capsys.readouterr().err

    def test_tampered_report_refused(self, setup_test_env, capsys):
        report_path = setup_test_env / "cal.json"
        run_json(capsys, "calibrate", "--seed", "5", "--output", str(report_path))
        saved = json.loads(report_path.read_text())
        saved["sigma_config"] = {"kind": "exact"}
        report_path.write_text(json.dumps(saved))
        assert main(["validate", "--report", str(report_path)]) == EXIT_CONTRACT

    def test_infinite_bound_has_zero_ratio(self, setup_test_env, capsys):
        report_path = setup_test_env / "cal.json"
        run_json(capsys, "calibrate", "--seed", "6", "--output", str(report_path))
        saved = json.loads(report_path.read_text())
        saved["rho"] = float("inf")
        report_path.write_text(json.dumps(saved))
        code, report = run_json(capsys, "validate", "--report", str(report_path), "--validation-size", "1000")
        assert code == EXIT_OK
        assert report["violation_ratio"] == 0.0

    def test_empty_validation_csv(self, setup_test_env, capsys):
        report_path = setup_test_env / "cal.json"
        run_json(capsys, "calibrate", "--seed", "6", "--output", str(report_path))
        empty = setup_test_env / "empty.csv"
        empty.write_text("x1,y\n")
        assert main(["validate", "--report", str(report_path), "--data", str(empty)]) == EXIT_CONTRACT

    def test_parzen_needs_kernel(self, setup_test_env, capsys):
        assert main(["calibrate", "--sigma", "parzen"]) == EXIT_USAGE


class TestFamily:
    """family command on a small configuration"""

    ARGS = [
        "--epsilon", "0.1", "--delta", "0.1", "--seed", "3",
        "--training-size", "200", "--truncation", "40",
    ]

    def test_family_then_validate(self, setup_test_env, capsys):
        report_path = setup_test_env / "family.json"
        code, fam = run_json(capsys, "family", *self.ARGS, "--lambdas", "1,2", "--output", str(report_path))
        assert code == EXIT_OK
        assert fam["n_family"] == 2
        assert (fam["n_samples"], fam["discard_rank"]) == (224, 11)
        assert len(fam["gamma_bars"]) == 2
        best = min(fam["criterion_values"])
        assert fam["selected_index"] == fam["criterion_values"].index(best)
        assert fam["selected_lambda"] == [1.0, 2.0][fam["selected_index"]]
        assert fam["gamma_bar"] == fam["gamma_bars"][fam["selected_index"]]

        code, report = run_json(capsys, "validate", "--report", str(report_path), "--validation-size", "300")
        assert code == EXIT_OK
        assert report["method"] == "family"
        assert report["total"] == 300

    def test_single_lambda_matches_calibrate(self, setup_test_env, capsys):
        _, fam = run_json(capsys, "family", *self.ARGS, "--lambdas", "1")
        _, cal = run_json(
            capsys, "calibrate", *self.ARGS, "--predictor", "kernel", "--sigma", "parzen", "--lambda", "1",
        )
        assert (fam["n_samples"], fam["discard_rank"]) == (cal["n_samples"], cal["discard_rank"])
        assert fam["gamma_bars"] == [cal["gamma_bar"]]
        assert fam["config_hash"] == cal["config_hash"]

    def test_duplicate_lambda(self, setup_test_env, capsys):
        assert main(["family", *self.ARGS, "--lambdas", "1,1"]) == EXIT_USAGE

    def test_family_spec_must_split_delta(self, setup_test_env, capsys):
        code = main(["family", *self.ARGS, "--lambdas", "1,2,3", "--n-samples", "40", "--r", "3"])
        assert code == EXIT_CONTRACT


class TestCoverageAndData:
    """coverage, synth-data and audit-stats"""

    def test_coverage_passes(self, setup_test_env, capsys):
        argv = ["coverage", "--epsilon", "0.1", "--delta", "0.2", "--reps", "20", "--validation-size", "1000"]
        code, report = run_json(capsys, *argv)
        assert code == EXIT_OK
        assert report["failure_fraction"] <= 0.3
        assert report["passed"]
        _, again = run_json(capsys, *argv)
        assert again == report

    def test_single_repetition(self, setup_test_env, capsys):
        code, report = run_json(
            capsys, "coverage", "--epsilon", "0.1", "--delta", "0.2", "--reps", "1", "--validation-size", "1000"
        )
        assert report["failure_fraction"] in (0.0, 1.0)
        assert code in (0, 1)

    def test_validation_size_floor(self, setup_test_env, capsys):
        assert main(["coverage", "--validation-size", "10", "--epsilon", "0.1", "--delta", "0.2"]) == EXIT_USAGE

    def test_synth_data(self, setup_test_env, capsys):
        out = setup_test_env / "train.csv"
        code, report = run_json(capsys, "synth-data", "--count", "50", "--stream", "training", "--seed", "7",
                                "--output", str(out))
        assert code == EXIT_OK
        data = read_dataset_csv(out)
        assert len(data) == 50
        assert report["source"] == "synthetic:seed=7:stream=training"

    def test_audit_stats(self, setup_test_env, capsys):
        ledger = setup_test_env / "runs.sqlite"
        main(["sample-size", "--audit-db", str(ledger), "--json"])
        main(["sample-size", "--constant", "7.0", "--audit-db", str(ledger)])
        capsys.readouterr()
        code, stats = run_json(capsys, "audit-stats", "--audit-db", str(ledger))
        assert code == EXIT_OK
        assert stats["total_operations"] == 2
        assert stats["failed"] == 1

    def test_audit_stats_disabled(self, setup_test_env, capsys):
        assert main(["audit-stats"]) == EXIT_USAGE
