"""Frequency samples as a stand-in for spatial samples.

Compares, at a few campus positions, the power CDF from 8001 band samples at
a fixed point with the CDF from a 20 x 20 grid around it at one frequency.

    python3 demos/freq_proxy.py
"""

import numpy as np

from geotwin import chanstats, raytwin
from geotwin.harness import experiment as ex
from geotwin.scene import generate_twin_pair

cfg = ex.ExperimentConfig()
truth = generate_twin_pair(cfg.base_scene(), cfg.perturbation, ex.derive_seed(0, "twin", 0)).truth
tracer = raytwin.Tracer(truth, cfg.max_order)

print(" tx   paths   KS      gap [dB]")
gaps = []
for i in range(0, truth.n_tx, 16):
    r = chanstats.compare_freq_vs_space(truth, i, cfg.max_order, 400, 0.01, tracer=tracer)
    gaps.append(r.quantile_gap_db)
    print(f"{i:3d}   {r.n_paths:5d}   {r.ks_distance:.3f}   {r.quantile_gap_db:.3f}")
print(f"median gap over these positions: {np.median(gaps):.3f} dB")

model = chanstats.WssusModel.for_distance(100.0, truth.band.wavelength)
print(f"\nplane-wave model at 100 m: decorrelation frequency {chanstats.decorrelation_frequency(model) / 1e6:.2f} MHz")
print(f"band spacing {truth.band.frequencies()[1] - truth.band.frequencies()[0]:.3g} Hz")
