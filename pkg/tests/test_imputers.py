import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from knnsampler.core import ConfigurationError, Dataset, Method, MethodConfig, RngStream
from knnsampler.datagen import MaskSpec, make_dataset
from knnsampler.imputers import (
    EmpiricalConditional,
    SingularFitError,
    fit_linear,
    impute_all,
    impute_knn_kde,
    impute_knn_mean,
    impute_sampler,
    knn_conditional,
    knn_kde_draw,
)
from knnsampler.neighbors import build_index

from oracles import knn_responses_brute, normal_equations


def conditional(values):
    v = np.asarray(values, float)
    return EmpiricalConditional(v, np.arange(v.shape[0]), np.zeros(v.shape[0]))


@pytest.fixture(scope="module")
def ring():
    return make_dataset("ring", 1500, MaskSpec("mar_window", 100), RngStream(21))


class TestConditional:
    def test_forced_support(self):
        c = knn_conditional(build_index([0.0, 1.0, 2.0]), [10.0, 20.0, 30.0], [0.9], 2, RngStream(0))
        assert c.support.tolist() == [20.0, 10.0]

    def test_k_equals_n_is_all_responses(self):
        y = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        c = knn_conditional(build_index(np.arange(5.0)), y, [1.7], 5, RngStream(0))
        assert sorted(c.support) == sorted(y)
        assert np.allclose(c.mass, 0.2)

    def test_brute_force_oracle(self):
        gen = RngStream(31).generator()
        for _ in range(500):
            n = int(gen.integers(1, 50))
            p = int(gen.integers(1, 4))
            x, y, q = gen.normal(size=(n, p)), gen.normal(size=n), gen.normal(size=p)
            k = int(gen.integers(1, n + 1))
            c = knn_conditional(build_index(x), y, q, k, RngStream(1))
            assert sorted(c.support.tolist()) == sorted(knn_responses_brute(x, y, q, k))


class TestSampler:
    def test_degenerate(self):
        assert {impute_sampler(conditional([7.0]), RngStream(0, i)) for i in range(50)} == {7.0}

    def test_uniform_frequencies(self):
        c = conditional([1.0, 2.0, 3.0, 4.0])
        draws = np.array([impute_sampler(c, RngStream(2, i)) for i in range(10_000)])
        freq = np.array([np.mean(draws == v) for v in (1.0, 2.0, 3.0, 4.0)])
        assert np.all(np.abs(freq - 0.25) <= 0.02)

    def test_closure(self):
        gen = np.random.default_rng(0)
        for _ in range(100):
            support = gen.normal(size=int(gen.integers(1, 30)))
            c = conditional(support)
            draws = [impute_sampler(c, gen) for _ in range(1000)]
            assert set(draws) <= set(support.tolist())

    def test_mean_matches_long_run_average(self):
        c = conditional([0.5, 2.0, 7.5, -1.0, 3.0])
        gen = RngStream(4).generator()
        draws = np.array([impute_sampler(c, gen) for _ in range(100_000)])
        se = draws.std() / np.sqrt(draws.shape[0])
        assert abs(draws.mean() - impute_knn_mean(c)) <= 3 * se


class TestMean:
    def test_simple(self):
        assert impute_knn_mean(conditional([1.0, 2.0, 3.0])) == 2.0
        assert impute_knn_mean(conditional([5.0])) == 5.0

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
    def test_equals_sampler_expectation(self, values):
        c = conditional(values)
        expectation = float(np.sum(c.mass * c.support))
        assert impute_knn_mean(c) == pytest.approx(expectation, rel=1e-12, abs=1e-9)


class TestLinear:
    def test_exact_line(self):
        x = np.array([0.0, 1.0, 2.0, 5.0])
        model = fit_linear(x, 2 * x + 1)
        assert model.coefficients == pytest.approx([2.0]) and model.intercept == pytest.approx(1.0)
        assert model.predict([[3.0]])[0] == pytest.approx(7.0)

    def test_normal_equations_oracle(self):
        gen = np.random.default_rng(5)
        for _ in range(50):
            n, p = int(gen.integers(10, 60)), int(gen.integers(1, 4))
            x = gen.normal(size=(n, p))
            y = x @ gen.normal(size=p) + gen.normal(size=n)
            model = fit_linear(x, y)
            ref = normal_equations(x.tolist(), y.tolist())
            assert model.intercept == pytest.approx(ref[0], abs=1e-10)
            assert np.allclose(model.coefficients, ref[1:], atol=1e-10, rtol=0)

    def test_singular(self):
        with pytest.raises(SingularFitError):
            fit_linear(np.ones((5, 1)), np.arange(5.0))
        with pytest.raises(SingularFitError):
            fit_linear(np.ones((1, 1)), [1.0])


class TestKde:
    def setup_method(self):
        self.x = np.array([0.0, 0.3, 0.7, 1.6, 2.0])
        self.y = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
        self.index = build_index(self.x)

    def test_zero_bandwidth_returns_a_neighbor_response(self):
        draws = {impute_knn_kde(self.index, self.y, [0.5], 5, 50.0, 0.0, RngStream(1, i)) for i in range(300)}
        assert draws <= set(self.y.tolist())

    def test_large_tau_picks_nearest(self):
        draws = np.array([impute_knn_kde(self.index, self.y, [0.35], 5, 1e9, 0.0, RngStream(2, i)) for i in range(10_000)])
        assert np.mean(draws == 20.0) >= 0.999

    def test_tau_zero_is_uniform(self):
        c = knn_conditional(self.index, self.y, [0.5], 4, None)
        gen = RngStream(3).generator()
        draws = np.array([knn_kde_draw(c, 0.0, 0.0, gen) for _ in range(10_000)])
        counts = np.array([np.sum(draws == v) for v in c.support])
        assert stats.chisquare(counts).pvalue > 0.001

    def test_bandwidth_adds_gaussian_jitter(self):
        c = conditional([3.0])
        gen = RngStream(4).generator()
        draws = np.array([knn_kde_draw(c, 50.0, 0.5, gen) for _ in range(20_000)])
        assert abs(draws.mean() - 3.0) < 0.02 and abs(draws.std() - 0.5) < 0.01


class TestImputeAll:
    def test_empty_missing(self):
        d = Dataset([[0.0], [1.0]], [1.0, 2.0], np.empty((0, 1)))
        assert impute_all(d, MethodConfig(Method.KNN_SAMPLER, 1)).values.shape == (0,)

    def test_deterministic(self, ring):
        cfg = MethodConfig(Method.KNN_SAMPLER, 40)
        assert impute_all(ring, cfg, 9, 3).same_values(impute_all(ring, cfg, 9, 3))

    def test_replicates_differ(self, ring):
        cfg = MethodConfig(Method.KNN_SAMPLER, 40)
        assert not impute_all(ring, cfg, 9, 0).same_values(impute_all(ring, cfg, 9, 1))

    @pytest.mark.parametrize("method,k", [("knn_sampler", "auto"), ("knn_kde", None), ("knn_imputer", 5)])
    def test_worker_count_irrelevant(self, ring, method, k):
        cfg = MethodConfig(method, k)
        assert impute_all(ring, cfg, 1, 0, workers=1).same_values(impute_all(ring, cfg, 1, 0, workers=8))

    def test_sampler_closure(self, ring):
        run = impute_all(ring, MethodConfig(Method.KNN_SAMPLER, 25), 0)
        assert set(run.values.tolist()) <= set(ring.y_obs.tolist())

    def test_k_equal_n_draws_from_marginal(self, ring):
        run = impute_all(ring, MethodConfig(Method.KNN_SAMPLER, ring.n), 0)
        assert set(run.values.tolist()) <= set(ring.y_obs.tolist())
        assert run.k == ring.n

    def test_imputer_spot_check(self, ring):
        run = impute_all(ring, MethodConfig(Method.KNN_IMPUTER, 5), 0)
        for i in (0, 17, 63):
            c = knn_conditional(build_index(ring.x_obs), ring.y_obs, ring.x_miss[i], 5, None)
            assert run.values[i] == pytest.approx(impute_knn_mean(c), rel=1e-12)

    def test_linear_matches_fit(self, ring):
        run = impute_all(ring, MethodConfig(Method.LINEAR, None), 0)
        assert np.allclose(run.values, fit_linear(ring.x_obs, ring.y_obs).predict(ring.x_miss))

    def test_auto_records_selection(self, ring):
        run = impute_all(ring, MethodConfig(Method.KNN_SAMPLER, "auto"), 0)
        assert run.selection is not None and run.k == run.selection.k_star

    def test_k_too_large(self, ring):
        with pytest.raises(ConfigurationError):
            impute_all(ring, MethodConfig(Method.KNN_SAMPLER, ring.n + 1), 0)

    def test_kde_needs_k_only_when_other(self, ring):
        with pytest.raises(ConfigurationError):
            impute_all(ring, MethodConfig(Method.KNN_IMPUTER, None), 0)
