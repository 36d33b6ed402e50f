import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from geotwin.chanstats import EmpiricalCdf
from geotwin.gpredict import PredictiveDistribution
from geotwin.ratesel import (
    LinkBudget,
    RateDecision,
    RatePolicy,
    erfinv,
    meta_probability,
    normalized_rate,
    outage_capacity,
    select_rate,
)

P10 = RatePolicy(0.01, 0.10)


def pred(mu, sigma):
    return PredictiveDistribution(mu, sigma**2)


class TestErfinv:
    @pytest.mark.parametrize("z", [-0.999, -0.8, 0.0, 0.8, 0.999])
    def test_round_trip(self, z):
        assert abs(math.erf(erfinv(z)) - z) <= 1e-10

    @given(st.floats(-0.999999, 0.999999))
    def test_against_scipy(self, z):
        assert erfinv(z) == pytest.approx(special.erfinv(z), abs=1e-10)

    def test_tails_and_domain(self):
        assert erfinv(1 - 1e-12) == pytest.approx(special.erfinv(1 - 1e-12), rel=1e-9)
        assert erfinv(1.0) == math.inf and erfinv(-1.0) == -math.inf
        with pytest.raises(ValueError):
            erfinv(1.5)


class TestSelectRate:
    def test_median(self):
        for mu in (-3.0, 0.0, 2.5):
            r = select_rate(pred(mu, 0.7), RatePolicy(0.01, 0.5)).rate
            assert r == pytest.approx(math.log2(1 + math.exp(mu)), abs=1e-12)

    def test_zero_sigma(self):
        for d in (0.01, 0.1, 0.4):
            assert select_rate(pred(1.0, 0.0), RatePolicy(0.01, d)).rate == math.log2(1 + math.e)

    def test_standard_normal_quantile(self):
        z = stats.norm.ppf(0.1)
        assert z == pytest.approx(-1.2815516, abs=1e-7)
        r = select_rate(pred(0.0, 1.0), P10).rate
        assert r == pytest.approx(math.log2(1 + math.exp(z)), abs=1e-12)
        assert r == pytest.approx(0.3534433, abs=1e-6)

    def test_source_and_validation(self):
        d = select_rate(pred(0.0, 1.0), P10, "spatial_gp")
        assert d.source == "spatial_gp"
        with pytest.raises(ValueError):
            select_rate(PredictiveDistribution(0.0, -1.0), P10)
        with pytest.raises(ValueError):
            RateDecision(-0.1)
        with pytest.raises(ValueError):
            RateDecision(1.0, "oracle")

    def test_large_exponent(self):
        r = select_rate(pred(800.0, 0.0), P10).rate
        assert r == pytest.approx(800.0 / math.log(2), rel=1e-12)

    @given(st.floats(-20, 20), st.floats(0.0, 5.0), st.floats(1e-3, 3.0))
    def test_monotone_mu(self, mu, s, dmu):
        assert select_rate(pred(mu, s), P10).rate <= select_rate(pred(mu + dmu, s), P10).rate

    @given(st.floats(-20, 20), st.floats(0.0, 5.0), st.floats(1e-3, 3.0))
    def test_monotone_sigma(self, mu, s, ds):
        assert select_rate(pred(mu, s + ds), P10).rate <= select_rate(pred(mu, s), P10).rate

    @given(st.floats(-5, 5), st.floats(0.01, 3.0), st.floats(0.01, 0.45), st.floats(0.001, 0.5))
    def test_monotone_delta(self, mu, s, d, dd):
        lo = select_rate(pred(mu, s), RatePolicy(0.01, d)).rate
        hi = select_rate(pred(mu, s), RatePolicy(0.01, min(d + dd, 0.999))).rate
        assert lo <= hi

    def test_delta_extremes(self):
        tiny = select_rate(pred(0.0, 2.0), RatePolicy(0.01, 1e-6)).rate
        huge = select_rate(pred(0.0, 2.0), RatePolicy(0.01, 1 - 1e-6)).rate
        mid = select_rate(pred(0.0, 2.0), RatePolicy(0.01, 0.5)).rate
        assert 0.0 <= tiny < 1e-3 < mid < huge and math.isfinite(huge)

    def test_policy_validation(self):
        for eps, d in ((0.0, 0.1), (0.6, 0.1), (0.01, 0.0), (0.01, 1.0)):
            with pytest.raises(ValueError):
                RatePolicy(eps, d)


class TestOutageCapacity:
    def test_unit_snr(self):
        b = LinkBudget(1.0, 1.0)
        assert outage_capacity(EmpiricalCdf([1.0] * 100), b, 0.01) == 1.0

    def test_blocked(self):
        assert outage_capacity(EmpiricalCdf([0.0] * 200 + [1.0]), LinkBudget(1.0, 1.0), 0.01) == 0.0

    def test_exponential(self):
        # mid-point quantiles of Exp(1) with 100001 cells: 0.01-quantile within 1e-5
        n = 100_001
        x = -np.log1p(-(np.arange(n) + 0.5) / n)
        r = outage_capacity(EmpiricalCdf(x), LinkBudget(1.0, 1e-3), 0.01)
        assert r == pytest.approx(math.log2(1 + 1000 * 0.0100503), abs=2e-3)
        assert r == pytest.approx(3.46605, abs=2e-3)

    @given(st.floats(0.01, 0.4), st.floats(0.001, 0.1), st.floats(0.1, 1e3), st.floats(1.0, 10.0))
    def test_monotone(self, eps, deps, snr, factor):
        rng = np.random.default_rng(0)
        cdf = EmpiricalCdf(rng.exponential(size=500))
        base = outage_capacity(cdf, LinkBudget(snr, 1.0), eps)
        assert base <= outage_capacity(cdf, LinkBudget(snr, 1.0), eps + deps)
        assert base <= outage_capacity(cdf, LinkBudget(snr * factor, 1.0), eps)

    def test_budget(self):
        b = LinkBudget.for_reference_snr(30.0, 50.0, 0.05)
        assert b.snr_scale * (0.05 / (4 * math.pi * 50.0)) ** 2 == pytest.approx(1000.0)
        with pytest.raises(ValueError):
            LinkBudget(0.0, 1.0)


class TestNormalizedAndMeta:
    def test_normalized(self):
        assert normalized_rate(RateDecision(2.5), 2.5) == 1.0
        assert normalized_rate(RateDecision(0.0), 2.5) == 0.0
        assert normalized_rate(1.0, 4.0) == 0.25
        with pytest.raises(ValueError):
            normalized_rate(RateDecision(1.0), 0.0)

    def test_meta(self):
        caps = [1.0, 2.0, 3.0]
        assert meta_probability([RateDecision(0.5)] * 3, caps) == 0.0
        assert meta_probability([RateDecision(5.0)] * 3, caps) == 1.0
        assert meta_probability([0.5, 2.5, 3.0], caps) == pytest.approx(1 / 3)
        with pytest.raises(ValueError):
            meta_probability([1.0], caps)
        with pytest.raises(ValueError):
            meta_probability([], [])

    def test_matched_predictive_calibration(self):
        rng = np.random.default_rng(2024)
        mu = rng.normal(0.0, 2.0, 10_000)
        sigma = rng.uniform(0.1, 1.5, 10_000)
        q_true = rng.normal(mu, sigma)
        rates = [select_rate(pred(m, s), P10).rate for m, s in zip(mu, sigma)]
        caps = np.log2(1 + np.exp(q_true))
        assert 0.09 <= meta_probability(rates, caps) <= 0.11
