import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knnsampler.uncertainty import (
    InfeasibleLevelError,
    PredictionInterval,
    conditional_probability,
    conditional_std,
    coverage_probability,
    interval_rank,
    prediction_interval,
)

from oracles import mass_in_open_interval, two_pass_std

supports = st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=300)


class TestConditionalProbability:
    def test_direct_count(self):
        assert conditional_probability([1, 2, 3, 4], 1.5, 3.5) == 0.5

    def test_total_mass(self):
        assert conditional_probability([1, 2, 3, 4]) == 1.0

    @given(supports, st.floats(-1e3, 1e3), st.floats(1e-3, 500))
    def test_enumeration_oracle(self, values, lo, width):
        assert conditional_probability(values, lo, lo + width) == mass_in_open_interval(values, lo, lo + width)


class TestPredictionInterval:
    def test_worked_ranks(self):
        y = np.arange(1.0, 201.0)
        np.random.default_rng(0).shuffle(y)
        iv = prediction_interval(y, 0.05)
        assert interval_rank(200, 0.05) == 5
        assert (iv.lower, iv.upper) == (5.0, 196.0)

    def test_extreme_order_statistics(self):
        iv = prediction_interval(np.arange(1.0, 11.0), 0.2)
        assert (iv.lower, iv.upper, iv.nominal) == (1.0, 10.0, pytest.approx(0.8))

    def test_infeasible(self):
        with pytest.raises(InfeasibleLevelError):
            prediction_interval([1.0], 0.05)

    def test_open_interval(self):
        assert not PredictionInterval(0.0, 1.0, 0.9).contains(1.0)
        assert PredictionInterval(0.0, 1.0, 0.9).contains(0.5)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=300, unique=True), st.floats(0.01, 0.5))
    def test_strict_interior_mass(self, values, alpha):
        k = len(values)
        if 2 * interval_rank(k, alpha) > k:
            return
        iv = prediction_interval(values, alpha)
        assert mass_in_open_interval(values, iv.lower, iv.upper) >= 1 - alpha - 2 / k - 1e-12
        outside = 1 - conditional_probability(values, iv.lower, iv.upper)
        assert outside <= alpha + 2 / k + 1e-12

    @given(st.lists(st.floats(-1e3, 1e3), min_size=40, max_size=200), st.floats(0.05, 0.4), st.floats(0.05, 0.4))
    def test_monotone_in_alpha(self, values, a1, a2):
        small, large = sorted((a1, a2))
        wide, narrow = prediction_interval(values, small), prediction_interval(values, large)
        assert wide.lower <= narrow.lower and wide.upper >= narrow.upper


class TestStd:
    def test_constant(self):
        assert conditional_std([0.0, 0.0, 0.0]) == 0.0

    def test_denominator_k(self):
        assert conditional_std([0.0, 2.0]) == 1.0

    @given(supports)
    def test_two_pass_oracle(self, values):
        assert conditional_std(values) == pytest.approx(two_pass_std(values), rel=1e-12, abs=1e-14 * max(1.0, max(map(abs, values))))

    @given(supports, st.floats(-100, 100), st.floats(0.1, 10))
    def test_affine_equivariance(self, values, shift, scale):
        base = conditional_std(values)
        moved = conditional_std([scale * v + shift for v in values])
        assert moved == pytest.approx(scale * base, rel=1e-7, abs=1e-6)


class TestCoverage:
    ivs = [PredictionInterval(0.0, 1.0, 0.9), PredictionInterval(2.0, 3.0, 0.9)]

    def test_all_inside(self):
        assert coverage_probability(self.ivs, [0.5, 2.5]) == 1.0

    def test_none_inside(self):
        assert coverage_probability(self.ivs, [5.0, -1.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            coverage_probability(self.ivs, [0.5])


def test_interval_rank_is_ceiling():
    assert [interval_rank(k, 0.1) for k in (10, 11, 19, 20, 21)] == [1, 1, 1, 1, 2]
    assert interval_rank(30, 0.2) == math.ceil(3.0)
