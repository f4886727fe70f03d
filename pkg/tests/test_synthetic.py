#!/usr/bin/env python3
"""Tests for the running example, its random streams and the coverage experiment"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from probscale.config import LEMMA_CONSTANT
from probscale.models import CoverageConfig, ExampleConfig, ProbabilityLevels, SampleSpec
from probscale.services.synthetic import (
    coverage_margin,
    exact_bound,
    exact_bound_fn,
    exact_sigma,
    make_rng,
    oracle_predictor,
    run_coverage_experiment,
    sample_example,
    stream_id,
)


class TestStreams:
    """Deterministic, independent named streams"""

    def test_same_seed_same_data(self):
        a = sample_example(100, ExampleConfig(seed=3))
        b = sample_example(100, ExampleConfig(seed=3))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_streams_are_disjoint(self):
        cfg = ExampleConfig(seed=3)
        train = sample_example(500, cfg, stream="training")
        calib = sample_example(500, cfg, stream="calibration")
        valid = sample_example(500, cfg, stream="validation")
        assert not set(train.X[:, 0]) & set(calib.X[:, 0])
        assert not set(calib.X[:, 0]) & set(valid.X[:, 0])

    def test_seeds_differ(self):
        a = sample_example(50, ExampleConfig(seed=1))
        b = sample_example(50, ExampleConfig(seed=2))
        assert not np.array_equal(a.X, b.X)

    def test_prefix_stable(self):
        """x values of a shorter draw are a prefix of a longer one"""
        short = sample_example(10, ExampleConfig(seed=4))
        long = sample_example(20, ExampleConfig(seed=4))
        assert np.array_equal(short.X[:, 0], long.X[:10, 0])

    def test_source_records_provenance(self):
        data = sample_example(5, ExampleConfig(seed=8), stream="validation")
        assert data.source == "synthetic:seed=8:stream=validation"

    def test_stream_ids(self):
        assert stream_id("training") == 0
        assert stream_id("calibration") == 1
        assert stream_id("validation") == 2
        assert stream_id(105) == 105
        with pytest.raises(ValueError):
            stream_id("holdout")

    def test_generator_is_philox(self):
        assert type(make_rng(0, "training").bit_generator).__name__ == "Philox"

    def test_count_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_example(0)


class TestGenerativeModel:
    """y = (10 + n1) x + 10 sin(4x) + 5 + n2"""

    def test_inputs_in_range(self):
        data = sample_example(2000, ExampleConfig(seed=1))
        assert np.all(data.X > -2.5) and np.all(data.X < 2.5)

    def test_oracle_values(self):
        T = oracle_predictor()
        assert T(np.array([[0.0]]))[0] == pytest.approx(5.0)
        x = math.pi / 8
        assert T(np.array([[x]]))[0] == pytest.approx(10 * x + 15.0)

    def test_exact_sigma(self):
        assert exact_sigma(0.0) == pytest.approx(math.sqrt(3.0))
        assert exact_sigma(1.0) == pytest.approx(math.sqrt(10.0))
        np.testing.assert_allclose(exact_sigma(np.array([0.0, 2.0])), np.sqrt([3.0, 31.0]))

    def test_exact_bound(self):
        assert exact_bound(0.0, 0.05) == pytest.approx(1.959964 * math.sqrt(3.0), rel=1e-6)
        handle = exact_bound_fn(0.05)
        assert handle(np.array([[1.0]]))[0] == pytest.approx(1.959964 * math.sqrt(10.0), rel=1e-6)

    def test_normalized_residuals_are_standard_normal(self):
        data = sample_example(20_000, ExampleConfig(seed=12))
        z = (data.y - oracle_predictor()(data.X)) / exact_sigma(data.X[:, 0])
        assert abs(np.mean(z)) < 0.03
        assert abs(np.std(z) - 1.0) < 0.03
        assert abs(np.mean(np.abs(z) > 1.959964) - 0.05) < 0.01

    def test_exact_bound_violation_rate(self):
        data = sample_example(20_000, ExampleConfig(seed=13), stream="validation")
        residuals = np.abs(data.y - oracle_predictor()(data.X))
        ratio = np.mean(residuals > exact_bound_fn(0.05)(data.X))
        assert abs(ratio - 0.05) < 0.01

    def test_input_mean_over_a_million_draws(self):
        data = sample_example(1_000_000, ExampleConfig(seed=21))
        # standard error of the mean is 5 / sqrt(12e6)
        assert abs(float(np.mean(data.X))) < 5e-3

    def test_conditional_variance_near_two(self):
        data = sample_example(1_000_000, ExampleConfig(seed=22))
        x = data.X[:, 0]
        near = np.abs(x - 2.0) < 0.02
        residuals = data.y[near] - oracle_predictor()(data.X[near])
        assert near.sum() > 5000
        assert float(np.mean(residuals ** 2)) == pytest.approx(31.0, abs=2.0)

    def test_exact_bound_ratio_on_a_million_draws(self):
        data = sample_example(1_000_000, ExampleConfig(seed=23), stream="validation")
        ratio = np.mean(np.abs(data.y - oracle_predictor()(data.X)) > exact_bound_fn(0.05)(data.X))
        assert abs(ratio - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / 1_000_000)


class TestCoverageExperiment:
    """Repeated calibrations on fresh streams"""

    @pytest.fixture
    def levels(self):
        return ProbabilityLevels(epsilon=0.1, delta=0.2)

    def test_default_constant_follows_config(self, levels):
        assert CoverageConfig(levels=levels).constant == LEMMA_CONSTANT

    def test_margin(self):
        assert coverage_margin(0.05, 10_000) == pytest.approx(3 * math.sqrt(0.05 / 10_000))

    def test_report_shape(self, levels):
        report = run_coverage_experiment(CoverageConfig(repetitions=3, levels=levels, validation_size=1000))
        assert (report.n_samples, report.discard_rank) == (121, 6)
        assert len(report.violation_ratios) == 3
        assert len(report.calibrated_values) == 3
        assert report.threshold == pytest.approx(0.1 + 3 * math.sqrt(0.1 / 1000))
        assert report.failures == sum(r > report.threshold for r in report.violation_ratios)

    def test_single_repetition(self, levels):
        report = run_coverage_experiment(CoverageConfig(repetitions=1, levels=levels, validation_size=1000))
        assert report.failure_fraction in (0.0, 1.0)

    def test_deterministic(self, levels):
        cfg = CoverageConfig(repetitions=4, levels=levels, validation_size=1000, example=ExampleConfig(seed=6))
        assert run_coverage_experiment(cfg) == run_coverage_experiment(cfg)

    def test_explicit_spec_and_conditioned(self, levels):
        spec = SampleSpec(n_samples=200, discard_rank=5)
        report = run_coverage_experiment(
            CoverageConfig(repetitions=2, levels=levels, validation_size=1000, spec=spec, conditioned=True)
        )
        assert (report.n_samples, report.discard_rank) == (200, 5)
        assert report.conditioned
        # gamma_bar of |N(0,1)| scores at rank 5 of 200 sits near the 97.5% quantile
        assert all(1.5 < g < 3.5 for g in report.calibrated_values)
