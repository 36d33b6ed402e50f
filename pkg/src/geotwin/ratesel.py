"""Reliability-constrained rate selection and its evaluation.

Rates are spectral efficiencies in bits/s/Hz; the bandwidth multiplies both
the selected rate and the outage capacity and cancels in the normalized rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from geotwin.chanstats import empirical_quantile

SOURCES = ("dt_gp", "spatial_gp", "direct_dt")


def erfinv(z: float) -> float:
    """Inverse error function on (-1, 1).

    Closed-form starting point (Winitzki) followed by Newton steps. Near
    |z| = 1 the residual is taken on erfc to keep the tail accurate.
    """
    z = float(z)
    if not -1.0 < z < 1.0:
        if z in (-1.0, 1.0):
            return math.copysign(math.inf, z)
        raise ValueError(f"erfinv domain is (-1, 1), got {z}")
    if z == 0.0:
        return 0.0
    a = 0.147
    ln1 = math.log1p(-z * z)
    t = 2.0 / (math.pi * a) + 0.5 * ln1
    x = math.sqrt(math.sqrt(t * t - ln1 / a) - t)
    target = abs(z)
    tail = 1.0 - target
    for _ in range(50):
        slope = 2.0 / math.sqrt(math.pi) * math.exp(-x * x)
        if target > 0.5:
            step = (math.erfc(x) - tail) / -slope
        else:
            step = (math.erf(x) - target) / slope
        x -= step
        if abs(step) <= 1e-16 * max(1.0, x):
            break
    return math.copysign(x, z)


@dataclass(frozen=True)
class LinkBudget:
    tx_power: float
    noise_var: float
    bandwidth: float = 1e6

    def __post_init__(self):
        if not (self.tx_power > 0 and self.noise_var > 0 and self.bandwidth > 0):
            raise ValueError("link budget terms must be positive")

    @property
    def snr_scale(self) -> float:
        """P_tx / sigma_n^2, the factor that turns channel power into SNR."""
        return self.tx_power / self.noise_var

    @classmethod
    def for_reference_snr(
        cls, snr_db: float, distance: float, wavelength: float, tx_power: float = 1.0, bandwidth: float = 1e6
    ) -> "LinkBudget":
        """Noise level giving ``snr_db`` over a free-space link of ``distance``."""
        gain = (wavelength / (4.0 * math.pi * distance)) ** 2
        return cls(tx_power, tx_power * gain / 10.0 ** (snr_db / 10.0), bandwidth)


@dataclass(frozen=True)
class RatePolicy:
    epsilon: float = 0.01
    delta: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 0.5:
            raise ValueError("epsilon must be in (0, 0.5]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")


@dataclass(frozen=True)
class RateDecision:
    rate: float
    source: str = "dt_gp"

    def __post_init__(self):
        if not self.rate >= 0.0:
            raise ValueError("rate must be non-negative")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


def _log2_1p_exp(x: float) -> float:
    # log2(1 + e^x) without overflow for large x
    if x > 30.0:
        return (x + math.log1p(math.exp(-x))) / math.log(2.0)
    return math.log1p(math.exp(x)) / math.log(2.0)


def select_rate(pred, policy: RatePolicy, source: str = "dt_gp") -> RateDecision:
    """Rate at the delta-quantile of a Gaussian prediction of ln(SNR quantile).

    ``pred`` needs ``mean`` and ``variance`` attributes.
    """
    if pred.variance < 0:
        raise ValueError("predictive variance must be non-negative")
    sigma = math.sqrt(pred.variance)
    if sigma == 0.0:
        exponent = pred.mean
    else:
        exponent = pred.mean + math.sqrt(2.0) * sigma * erfinv(2.0 * policy.delta - 1.0)
    return RateDecision(_log2_1p_exp(exponent), source)


def outage_capacity(truth_cdf, budget: LinkBudget, epsilon: float) -> float:
    """epsilon-outage capacity log2(1 + P_tx rho_eps / sigma_n^2) in bits/s/Hz."""
    rho = empirical_quantile(truth_cdf, epsilon)
    if rho <= 0.0:
        return 0.0
    return math.log2(1.0 + budget.snr_scale * rho)


def normalized_rate(decision, r_eps: float) -> float:
    rate = decision.rate if isinstance(decision, RateDecision) else float(decision)
    if not r_eps > 0.0:
        raise ValueError("normalized rate is undefined for zero outage capacity")
    return rate / r_eps


def meta_probability(decisions, capacities) -> float:
    """Fraction of pairs whose selected rate exceeds the true outage capacity."""
    decisions = list(decisions)
    capacities = list(capacities)
    if len(decisions) != len(capacities):
        raise ValueError(f"length mismatch: {len(decisions)} decisions, {len(capacities)} capacities")
    if not decisions:
        raise ValueError("need at least one decision")
    rates = [d.rate if isinstance(d, RateDecision) else float(d) for d in decisions]
    return sum(r > c for r, c in zip(rates, capacities)) / len(rates)
