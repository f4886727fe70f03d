#!/usr/bin/env python3
"""
Tests for the sample-size rules and the binomial tail

Run:
    pytest tests/test_sample_complexity.py -v
"""
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import binom

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from probscale.config import EXACT_LEMMA_CONSTANT
from probscale.errors import DomainError, InfeasibleSpecError
from probscale.models import ProbabilityLevels, SampleSpec
from probscale.services.sample_complexity import (
    binomial_tail,
    exact_spec,
    explicit_spec,
    max_spec,
    min_samples_exact,
    min_samples_explicit,
    min_samples_family,
    min_samples_lemma,
    min_samples_max,
    sample_size_table,
    validate_spec,
)


def exact_tail(k, n, p):
    """B(k; n, p) in exact rational arithmetic"""
    p = Fraction(p)
    q = 1 - p
    return float(sum(math.comb(n, i) * p ** i * q ** (n - i) for i in range(k + 1)))


@pytest.fixture
def levels():
    return ProbabilityLevels(epsilon=0.05, delta=1e-6)


class TestBinomialTail:
    """B(k; n, p) against exact summation"""

    def test_hand_value(self):
        """B(2; 5, 0.3) = 0.83692"""
        assert binomial_tail(2, 5, 0.3) == pytest.approx(0.83692, abs=1e-10)

    def test_k_equals_n_is_one(self):
        assert binomial_tail(7, 7, 0.4) == 1.0

    def test_zero_trials(self):
        assert binomial_tail(0, 0, 0.3) == 1.0

    def test_k_zero_is_exact_power(self):
        assert binomial_tail(0, 2, 0.5) == 0.25

    def test_matches_rational_summation(self):
        """Relative error <= 1e-10 for every n <= 60"""
        for p in (0.05, 0.3, 0.5, 0.9):
            for n in range(1, 61, 3):
                for k in range(0, n + 1):
                    expected = exact_tail(k, n, p)
                    assert binomial_tail(k, n, p) == pytest.approx(expected, rel=1e-10), (k, n, p)

    def test_tiny_tails_stay_accurate(self):
        """Far tails at n ~ 1e4 keep 6 significant digits"""
        expected = binom.cdf(380, 10_000, 0.05)
        assert expected < 1e-6
        assert binomial_tail(380, 10_000, 0.05) == pytest.approx(expected, rel=1e-6)

    def test_monotone_in_n_and_k(self):
        tails_n = [binomial_tail(5, n, 0.1) for n in range(5, 200)]
        assert all(a >= b for a, b in zip(tails_n, tails_n[1:]))
        tails_k = [binomial_tail(k, 50, 0.1) for k in range(0, 16)]
        assert all(a <= b for a, b in zip(tails_k, tails_k[1:]))

    def test_nonincreasing_in_p(self):
        for k, n in ((0, 20), (5, 50), (60, 2407)):
            tails = [binomial_tail(k, n, p) for p in np.linspace(0.0, 1.0, 201)]
            assert all(a >= b * (1.0 - 1e-12) for a, b in zip(tails, tails[1:])), (k, n)
            assert tails[0] == 1.0 and tails[-1] == 0.0

    def test_degenerate_p(self):
        assert binomial_tail(3, 10, 0.0) == 1.0
        assert binomial_tail(3, 10, 1.0) == 0.0

    @pytest.mark.parametrize("k,n,p", [(3, 2, 0.5), (-1, 5, 0.5), (1, 5, 1.5), (1, 5, -0.1)])
    def test_out_of_domain(self, k, n, p):
        with pytest.raises(DomainError):
            binomial_tail(k, n, p)


class TestProbabilityLevels:
    """Construction-time validation"""

    @pytest.mark.parametrize("epsilon,delta", [(0.0, 0.1), (1.0, 0.1), (0.1, 0.0), (0.1, 1.0), (2.0, 0.1)])
    def test_rejects_out_of_range(self, epsilon, delta):
        with pytest.raises(ValidationError):
            ProbabilityLevels(epsilon=epsilon, delta=delta)

    def test_spec_rank_within_samples(self):
        with pytest.raises(ValidationError):
            SampleSpec(n_samples=5, discard_rank=6)


class TestSampleSizeRules:
    """Published (N, r) values and rule properties"""

    def test_lemma_running_example(self, levels):
        """eps=0.05, delta=1e-6 with the printed constant 7.47: N=2065, r=51"""
        spec = min_samples_lemma(levels)
        assert (spec.n_samples, spec.discard_rank) == (2065, 51)
        assert spec.rule == "explicit-constant"
        assert validate_spec(spec, levels)

    def test_lemma_exact_constant(self, levels):
        spec = min_samples_lemma(levels, EXACT_LEMMA_CONSTANT)
        assert (spec.n_samples, spec.discard_rank) == (2063, 51)

    def test_family_exact_constant(self, levels):
        """n_F = 10 with (1+sqrt(3))^2: N=2407, r=60"""
        spec = min_samples_family(levels, 10, EXACT_LEMMA_CONSTANT)
        assert (spec.n_samples, spec.discard_rank) == (2407, 60)
        assert spec.rule == "family"
        assert validate_spec(spec, levels, n_family=10)

    def test_family_printed_constant(self, levels):
        spec = min_samples_family(levels, 10)
        assert (spec.n_samples, spec.discard_rank) == (2409, 60)

    def test_family_of_one_is_lemma(self, levels):
        assert min_samples_family(levels, 1) == min_samples_lemma(levels)

    def test_discard_fraction_below_epsilon(self, levels):
        for n_family in (1, 2, 10, 100):
            spec = min_samples_family(levels, n_family)
            assert (spec.discard_rank - 1) / spec.n_samples < levels.epsilon

    def test_constant_below_exact_rejected(self, levels):
        with pytest.raises(DomainError):
            min_samples_lemma(levels, 7.0)

    def test_infeasible_levels(self):
        with pytest.raises(InfeasibleSpecError):
            min_samples_lemma(ProbabilityLevels(epsilon=0.9, delta=0.9))

    def test_max_rule(self, levels):
        assert min_samples_max(levels) == 277
        assert min_samples_max(ProbabilityLevels(epsilon=0.1, delta=0.01)) == 47
        spec = max_spec(levels)
        assert (spec.n_samples, spec.discard_rank) == (277, 1)
        assert validate_spec(spec, levels)

    def test_exact_max_rule(self, levels):
        """0.95^N <= 1e-6 first holds at N = 270"""
        assert min_samples_exact(levels, 1) == 270

    def test_exact_is_minimal(self, levels):
        for r in range(1, 21):
            n = min_samples_exact(levels, r)
            assert binomial_tail(r - 1, n, levels.epsilon) <= levels.delta
            if n > r:
                assert binomial_tail(r - 1, n - 1, levels.epsilon) > levels.delta

    def test_explicit_dominates_exact(self, levels):
        for r in (1, 5, 20, 51):
            n_explicit = min_samples_explicit(levels, r)
            assert n_explicit >= min_samples_exact(levels, r)
            assert binomial_tail(r - 1, n_explicit, levels.epsilon) <= levels.delta

    def test_exact_at_lemma_rank_needs_fewer_samples(self, levels):
        spec = min_samples_lemma(levels)
        assert min_samples_exact(levels, spec.discard_rank) <= spec.n_samples

    def test_split_specs_validate_against_family(self, levels):
        for builder in (lambda: exact_spec(levels, 30, 10), lambda: explicit_spec(levels, 30, 10)):
            spec = builder()
            assert spec.n_family == 10
            assert validate_spec(spec, levels, 10)

    def test_rank_must_be_positive(self, levels):
        with pytest.raises(DomainError):
            min_samples_exact(levels, 0)
        with pytest.raises(DomainError):
            min_samples_explicit(levels, 0)

    def test_validate_spec_rejects_small_n(self, levels):
        spec = SampleSpec(n_samples=100, discard_rank=10)
        assert not validate_spec(spec, levels)


class TestSampleSizeTable:
    """Larger r needs larger N"""

    def test_rows(self, levels):
        rows = sample_size_table(levels, 10)
        assert [row["r"] for row in rows] == list(range(1, 11))
        assert rows[0]["n_exact"] == 270
        for row in rows:
            assert row["n_exact"] <= row["n_explicit"]
            assert row["tail_exact"] <= levels.delta
        n_exact = [row["n_exact"] for row in rows]
        assert n_exact == sorted(n_exact)
