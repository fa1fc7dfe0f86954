import numpy as np
import pytest
from scipy import stats

from knnsampler.core import ConfigurationError, EmptyObservedError, RngStream
from knnsampler.datagen import (
    InfeasibleMaskError,
    MaskSpec,
    Mechanism,
    Setup,
    apply_mask,
    gen_linear_chisq,
    gen_noisy_ring,
    generate,
    make_dataset,
)
from knnsampler.evaluation import joint_sample, permutation_pvalue
from knnsampler.imputers import impute_all
from knnsampler.core import MethodConfig


class TestLinear:
    def test_support(self):
        x, y = gen_linear_chisq(50_000, RngStream(0).generator())
        assert x.min() >= -2 and x.max() <= 2 and np.all(y - x[:, 0] > 0)

    def test_noise_moments(self):
        x, y = gen_linear_chisq(100_000, RngStream(1).generator())
        e = y - x[:, 0]
        assert abs(e.mean() - 2.0) <= 0.05
        assert abs(e.var() - 4.0) <= 0.2

    def test_noise_ks(self):
        x, y = gen_linear_chisq(100_000, RngStream(2).generator())
        assert stats.kstest(y - x[:, 0], stats.chi2(2).cdf).pvalue > 0.001


class TestRing:
    def test_radius_moments(self):
        x, y = gen_noisy_ring(100_000, RngStream(3).generator())
        r = np.hypot(x[:, 0], y)
        assert abs(r.mean() - 1.0) <= 0.01
        assert abs(r.var() - 0.1) <= 0.01
        assert abs(x.mean()) <= 0.02 and abs(y.mean()) <= 0.02

    def test_std_convention_flag(self):
        x, y = gen_noisy_ring(100_000, RngStream(3).generator(), noise=0.1, noise_is_std=True)
        assert abs(np.hypot(x[:, 0], y).var() - 0.01) <= 0.001

    def test_deterministic(self):
        a = generate("ring", 1000, RngStream(5))
        b = generate(Setup.NOISY_RING, 1000, RngStream(5))
        assert all(np.array_equal(u, v) for u, v in zip(a, b))


class TestMask:
    def test_window(self):
        ds = make_dataset("linear", 2800, MaskSpec(Mechanism.MAR_WINDOW, 200), RngStream(6))
        assert ds.m == 200 and ds.n == 2800
        assert np.all((ds.x_miss >= 0.5) & (ds.x_miss <= 1.5))

    def test_mcar_all_missing(self):
        pairs = gen_linear_chisq(50, RngStream(0).generator())
        ds = apply_mask(pairs, MaskSpec("mcar", 50), RngStream(1))
        assert ds.n == 0
        with pytest.raises(EmptyObservedError):
            impute_all(ds, MethodConfig("knn_sampler", 1))

    def test_infeasible(self):
        pairs = gen_linear_chisq(100, RngStream(0).generator())
        with pytest.raises(InfeasibleMaskError):
            apply_mask(pairs, MaskSpec("mar", 90), RngStream(1))

    def test_same_indices_every_time(self):
        spec = MaskSpec("mar_window", 200)
        a = make_dataset("ring", 5000, spec, RngStream(8))
        b = make_dataset("ring", 5000, spec, RngStream(8))
        assert np.array_equal(a.missing_rows, b.missing_rows)

    def test_bad_spec(self):
        with pytest.raises(ConfigurationError):
            MaskSpec("sometimes", 3)
        with pytest.raises(ConfigurationError):
            MaskSpec("mcar", 3, window=(1.0, 1.0))

    @pytest.mark.slow
    def test_mar_keeps_conditional_law(self):
        ps = []
        for t in range(50):
            ds = make_dataset("linear", 2800, MaskSpec("mar_window", 200), RngStream(60, t))
            inside = np.flatnonzero((ds.x_obs[:, 0] >= 0.5) & (ds.x_obs[:, 0] <= 1.5))[:200]
            observed = joint_sample(ds.x_obs[inside], ds.y_obs[inside])
            masked = joint_sample(ds.x_miss, ds.truth)
            ps.append(permutation_pvalue(observed, masked, 99, RngStream(61, t)))
        assert 0.3 <= np.mean(ps) <= 0.7
