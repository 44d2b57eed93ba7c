import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from lgpolymer.stats import (
    Welford,
    ols_slope,
    summarize,
    two_sample_ks,
    ks_test,
    welford_accumulate,
    z_score,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def central_sums(x):
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    return (d**2).sum(), (d**3).sum(), (d**4).sum()


class TestWelford:
    def test_small_example(self):
        acc = welford_accumulate([1.0, 2.0, 3.0])
        assert acc.n == 3 and acc.mean == 2.0 and acc.variance == 1.0
        s = acc.summary()
        assert s.stderr_mean == pytest.approx(math.sqrt(1 / 3))
        # population mu2 = 2/3, mu4 = 2/3 -> sqrt((2/3 - 4/9) / 3)
        assert s.stderr_variance == pytest.approx(math.sqrt((2 / 3 - 4 / 9) / 3))

    @settings(max_examples=60)
    @given(st.lists(finite, min_size=2, max_size=80))
    def test_moments_match_two_pass(self, xs):
        acc = welford_accumulate(xs)
        m2, m3, m4 = central_sums(xs)
        scale = 1 + max(abs(v) for v in xs)
        assert acc.mean == pytest.approx(np.mean(xs), abs=1e-9 * scale)
        assert acc.m2 == pytest.approx(m2, rel=1e-7, abs=1e-7 * scale**2)
        assert acc.m3 == pytest.approx(m3, rel=1e-6, abs=1e-6 * scale**3)
        assert acc.m4 == pytest.approx(m4, rel=1e-6, abs=1e-6 * scale**4)

    @settings(max_examples=60)
    @given(st.lists(finite, min_size=1, max_size=40), st.lists(finite, min_size=1, max_size=40))
    def test_merge_equals_concatenation(self, a, b):
        merged = welford_accumulate(a).merge(welford_accumulate(b))
        full = welford_accumulate(a + b)
        scale = 1 + max(abs(v) for v in a + b)
        assert merged.n == full.n
        assert merged.mean == pytest.approx(full.mean, abs=1e-9 * scale)
        for k, p in (("m2", 2), ("m3", 3), ("m4", 4)):
            assert getattr(merged, k) == pytest.approx(getattr(full, k), rel=1e-6, abs=1e-6 * scale**p)

    def test_merge_empty(self):
        acc = welford_accumulate([1.0, 5.0])
        assert acc.merge(Welford()).mean == 3.0 and Welford().merge(acc).variance == 8.0

    def test_too_few(self):
        with pytest.raises(ValueError):
            welford_accumulate([1.0]).summary()
        with pytest.raises(ValueError):
            summarize([2.0])


class TestSummarize:
    def test_agrees_with_streaming(self):
        x = np.random.default_rng(3).normal(size=500)
        a, b = summarize(x), welford_accumulate(x).summary()
        for key, val in a.to_dict().items():
            assert val == pytest.approx(getattr(b, key), rel=1e-9)

    def test_variance_stderr_normal(self):
        # for normal data Var(sample variance) ~ 2 sigma^4 / n
        x = np.random.default_rng(4).normal(scale=2.0, size=200000)
        s = summarize(x)
        assert s.stderr_variance == pytest.approx(math.sqrt(2 * 16 / x.size), rel=0.02)


def test_z_score():
    assert z_score(1.5, 1.0, 0.25) == 2.0
    assert z_score(1.0, 1.0, 0.0) == 0.0 and z_score(1.1, 1.0, 0.0) == math.inf


class TestKs:
    def test_matches_scipy(self):
        x = np.random.default_rng(5).normal(size=300)
        stat, p = ks_test(x, sps.norm.cdf)
        ref = sps.kstest(x, "norm", method="asymp")
        assert stat == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue)

    def test_detects_shift(self):
        x = np.random.default_rng(6).normal(0.5, size=2000)
        assert ks_test(x, sps.norm.cdf)[1] < 1e-6

    def test_two_sample(self):
        rng = np.random.default_rng(7)
        assert two_sample_ks(rng.normal(size=2000), rng.normal(size=2000))[1] > 1e-3
        assert two_sample_ks(rng.normal(size=2000), rng.normal(0.3, size=2000))[1] < 1e-6

    def test_empty(self):
        with pytest.raises(ValueError):
            ks_test([], sps.norm.cdf)
        with pytest.raises(ValueError):
            two_sample_ks([1.0], [])


class TestSlope:
    def test_exact_line(self):
        xs = np.log([64, 128, 256, 512])
        fit = ols_slope(xs, 2 / 3 * xs + 0.1)
        assert fit.slope == pytest.approx(2 / 3) and fit.intercept == pytest.approx(0.1)
        assert fit.slope_stderr == pytest.approx(0.0, abs=1e-12)
        assert fit.to_dict()["slope"] == fit.slope

    def test_stderr_by_hand(self):
        xs, ys = [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]
        fit = ols_slope(xs, ys)
        # intercept 1/2, residuals -1/2, 1, -1/2: s^2 = 1.5 / 1, Sxx = 2
        assert fit.slope == pytest.approx(0.5) and fit.intercept == pytest.approx(0.5)
        assert fit.slope_stderr == pytest.approx(math.sqrt(1.5 / 2))

    @pytest.mark.parametrize("xs,ys", [([1, 2], [1, 2]), ([1, 1, 2], [0, 1, 2]), ([3, 2, 1], [0, 0, 0])])
    def test_rejects(self, xs, ys):
        with pytest.raises(ValueError):
            ols_slope(xs, ys)
