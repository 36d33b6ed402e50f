"""How the delta-quantile rate rule trades throughput for reliability.

Draws predictive distributions, samples the true log-quantile from each and
reports the violation rate and the mean normalized rate for several delta.

    python3 demos/rate_selection.py
"""

import numpy as np

from geotwin import ratesel
from geotwin.gpredict import PredictiveDistribution

rng = np.random.default_rng(1)
n = 20_000
mu = rng.normal(1.0, 2.0, n)
sigma = rng.uniform(0.2, 1.5, n)
truth = rng.normal(mu, sigma)
capacity = np.log2(1 + np.exp(truth))

print(" delta   meta-prob   mean NR")
for delta in (0.01, 0.05, 0.1, 0.2, 0.5):
    policy = ratesel.RatePolicy(0.01, delta)
    rates = np.array([ratesel.select_rate(PredictiveDistribution(m, s**2), policy).rate for m, s in zip(mu, sigma)])
    meta = ratesel.meta_probability(rates, capacity)
    print(f" {delta:5.2f}   {meta:9.4f}   {np.mean(rates / capacity):7.3f}")

print("\nsharper predictions allow higher rates at the same delta:")
for s in (2.0, 1.0, 0.5, 0.1):
    r = ratesel.select_rate(PredictiveDistribution(1.0, s**2), ratesel.RatePolicy(0.01, 0.1)).rate
    print(f"  sigma {s:3.1f} -> rate {r:.3f} bit/s/Hz")
