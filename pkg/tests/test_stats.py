"""Statistics toolbox against constructed and sampled oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from tbrw.errors import UndersampledError, UsageError
from tbrw.stats import (
    DegenerateFitError,
    GeometricTest,
    MeanCI,
    MgfStatus,
    RatioCI,
    TailFamily,
    TailFit,
    empirical_mgf,
    fit_tail,
    ratio_ci,
    geometric_gof,
)


def exact_geometric_multiset(theta_num=1, theta_den=5, levels=8):
    """A multiset whose empirical survival is exactly (1-theta)^k.

    With theta = 1/5 and N = 5**levels the per-level counts
    N * theta * (1-theta)**k are integers for k < levels; the remaining
    mass is lumped at k = levels, so S(k) = 0.8**k holds exactly for
    k = 0..levels.
    """
    n = theta_den**levels
    counts = []
    for k in range(levels):
        c = n * theta_num * (theta_den - theta_num) ** k // theta_den ** (k + 1)
        assert c * theta_den ** (k + 1) == n * theta_num * (theta_den - theta_num) ** k
        counts.append(c)
    tail = n - sum(counts)
    out = np.repeat(np.arange(levels + 1), counts + [tail])
    assert len(out) == n
    return out


class TestFitTail:
    def test_exact_exponential_survival_recovers_rate(self):
        samples = exact_geometric_multiset()
        fit = fit_tail(samples, TailFamily.EXPONENTIAL)
        # S(n) = 0.8**n exactly on the fit window, so the regression is exact
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
        assert fit.rate == pytest.approx(math.log(5 / 4), rel=1e-9)
        assert fit.intercept == pytest.approx(0.0, abs=1e-9)
        assert fit.fit_range[0] >= np.median(samples)
        assert fit.n_fit_points >= 3

    def test_exponential_data_prefers_exponential_family(self):
        samples = exact_geometric_multiset()
        exp_fit = fit_tail(samples, TailFamily.EXPONENTIAL)
        str_fit = fit_tail(samples, TailFamily.STRETCHED)
        assert exp_fit.r_squared > str_fit.r_squared

    def test_stretched_data_prefers_stretched_family(self):
        # X = (E / c)**8 has survival exp(-c * x**(1/8))
        rng = np.random.default_rng(7)
        e = rng.exponential(size=40_000)
        samples = np.floor((e / 0.9) ** 8).astype(int)
        exp_fit = fit_tail(samples, TailFamily.EXPONENTIAL)
        str_fit = fit_tail(samples, TailFamily.STRETCHED)
        assert str_fit.r_squared > exp_fit.r_squared
        assert str_fit.rate > 0

    def test_fit_window_respects_survivor_floor(self):
        samples = exact_geometric_multiset()
        fit = fit_tail(samples, min_survivors=100_000)
        # only levels with >= 1e5 survivors: S(k) * 5**8 >= 1e5 -> k <= 6
        assert fit.fit_range[1] <= 6

    def test_undersampled_rejected(self):
        with pytest.raises(UndersampledError):
            fit_tail(np.arange(100))

    def test_constant_samples_degenerate(self):
        with pytest.raises(DegenerateFitError):
            fit_tail(np.full(1000, 7))

    def test_negative_samples_rejected(self):
        with pytest.raises(UsageError):
            fit_tail(np.full(1000, -1))

    def test_predict_matches_line(self):
        fit = TailFit(TailFamily.EXPONENTIAL, 1.0, 0.5, 1.0, (0, 10), 1000, 5)
        assert fit.predict_log_survival(np.array([2.0]))[0] == pytest.approx(0.0)


class TestGeometricGof:
    def test_sampled_geometric_accepts(self):
        rng = np.random.default_rng(11)
        k = rng.geometric(0.3, size=10_000) - 1  # shift to {0,1,...}
        res = geometric_gof(k)
        assert not res.degenerate
        assert res.theta_hat == pytest.approx(0.3, abs=0.02)
        assert res.p_value > 0.01
        assert res.dof >= 1

    def test_non_geometric_rejects(self):
        rng = np.random.default_rng(13)
        k = rng.poisson(3.0, size=10_000)
        res = geometric_gof(k)
        assert res.p_value < 1e-6

    def test_exact_multiset_theta(self):
        samples = exact_geometric_multiset()
        res = geometric_gof(samples)
        # truncation at level 8 pulls the mean below 4 slightly
        assert res.theta_hat == pytest.approx(1 / (1 + samples.mean()))
        assert res.histogram[0] == np.sum(samples == 0)

    def test_all_zero_flagged(self):
        res = geometric_gof(np.zeros(500, dtype=int))
        assert res.degenerate
        assert math.isnan(res.p_value)
        assert res.theta_hat == 1.0

    def test_pooling_keeps_expected_counts_high(self):
        rng = np.random.default_rng(5)
        k = rng.geometric(0.5, size=1000) - 1
        res = geometric_gof(k)
        n, theta, j = res.n_samples, res.theta_hat, res.n_bins - 1
        assert n * (1 - theta) ** j >= 5.0  # pooled tail expectation
        assert n * theta * (1 - theta) ** (j - 1) >= 5.0  # last interior bin

    def test_rejects_non_integer(self):
        with pytest.raises(UsageError):
            geometric_gof(np.array([0.5, 1.5]))


class TestEmpiricalMgf:
    def test_exactly_one_at_zero(self):
        rng = np.random.default_rng(3)
        x = rng.exponential(size=1000)
        curve = empirical_mgf(x, [0.0, 0.1])
        assert curve.values[0] == 1.0

    def test_matches_geometric_formula_in_safe_range(self):
        theta = 0.4
        rng = np.random.default_rng(17)
        k = rng.geometric(theta, size=200_000) - 1
        rate = -math.log(1 - theta)
        ts = [0.1, 0.2, 0.3]
        curve = empirical_mgf(k, ts, rate=rate)
        for t, v in zip(ts, curve.values):
            truth = theta / (1 - (1 - theta) * math.exp(t))
            assert v == pytest.approx(truth, rel=0.02)
        assert all(s is MgfStatus.OK for s in curve.statuses)

    def test_flags_points_at_or_beyond_rate(self):
        curve = empirical_mgf(np.arange(100), [0.1, 0.5, 0.7], rate=0.5)
        assert [s for s in curve.statuses] == [MgfStatus.OK, MgfStatus.UNRELIABLE, MgfStatus.UNRELIABLE]


class TestIntervals:
    def test_mean_ci_covers_known_mean(self):
        rng = np.random.default_rng(23)
        x = rng.normal(10.0, 2.0, size=5000)
        ci = MeanCI.from_samples(x)
        assert ci.low < 10.0 < ci.high
        assert ci.half_width == pytest.approx(1.96 * x.std(ddof=1) / np.sqrt(len(x)))

    def test_mean_ci_needs_30(self):
        with pytest.raises(UndersampledError):
            MeanCI.from_samples(np.arange(29))

    def test_ratio_ci_exact_on_proportional_pairs(self):
        b = np.arange(1, 101, dtype=float)
        a = 0.5 * b
        ci = ratio_ci(a, b)
        assert ci.value == pytest.approx(0.5)
        assert ci.half_width == pytest.approx(0.0, abs=1e-12)

    def test_ratio_ci_covers_true_ratio(self):
        rng = np.random.default_rng(31)
        hits = 0
        for trial in range(200):
            b = rng.exponential(4.0, size=400) + 1.0
            a = 0.3 * b + rng.normal(0, 0.5, size=400)
            ci = ratio_ci(a, b)
            if ci.low <= 0.3 <= ci.high:
                hits += 1
        assert hits >= 180  # ~95% nominal coverage

    def test_ratio_ci_requires_pairs(self):
        with pytest.raises(UsageError):
            ratio_ci(np.arange(40), np.arange(41))
