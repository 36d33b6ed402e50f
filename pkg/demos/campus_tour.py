"""Walk through one prediction run on the builtin campus.

Builds the twin pair, traces a transmitter in both scenes, fits the two GPs
on 30 measured positions and prints how the three predictors compare.

    python3 demos/campus_tour.py [seed]
"""

import sys

import numpy as np

from geotwin import raytwin
from geotwin.harness import experiment as ex
from geotwin.scene import generate_twin_pair

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = ex.ExperimentConfig(seed=seed)
base = cfg.base_scene()
pair = generate_twin_pair(base, cfg.perturbation, ex.derive_seed(seed, "twin", 0))
print(f"campus: {len(base.walls)} walls, {base.n_tx} transmitters, rx at {base.rx}")
print(f"truth adds {len(pair.truth.walls) - len(base.walls)} clutter walls and per-wall permittivities")

tx = base.tx_positions[0]
for name, scene in (("twin", pair.twin), ("truth", pair.truth)):
    ps = raytwin.trace(scene, tx, cfg.max_order)
    orders = np.bincount([p.order for p in ps.paths], minlength=cfg.max_order + 1)
    print(f"  tx 0 in {name:5s}: {len(ps.paths)} paths, by order {orders.tolist()}")

rep = ex.run_experiment(cfg)
agg = rep.aggregates()
print(f"\n{agg['n_train']} training and {agg['n_test']} test positions, {agg['n_excluded']} excluded")
print("median |error| of the 0.01-quantile [dB]:")
for m, v in agg["median_abs_error_db"].items():
    print(f"  {m:8s} {v:6.3f}")
print("rate selection at delta = 0.10:")
for m in ("spatial", "dt"):
    print(
        f"  {m:8s} mean normalized rate {agg['mean_normalized_rate'][m]:.3f}, "
        f"meta-probability {agg['meta_probability'][m]:.3f}"
    )
