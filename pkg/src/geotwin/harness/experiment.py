"""End-to-end prediction experiment on a synthetic (truth, twin) pair.

One repetition:

1. build the twin pair from the base scene;
2. trace both scenes at every transmitter and sample |h(f)|^2 over the band,
   scaled to SNR by the link budget;
3. ground-truth log-quantiles from the truth scene, direct predictions from
   the twin;
4. draw D training positions, fit the spatial and the twin-feature GP on the
   truth targets;
5. predict the held-out positions, select rates and compare against the true
   outage capacity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from geotwin import chanstats, gpredict, ratesel
from geotwin.chanstats import EmpiricalCdf
from geotwin.raytwin import Tracer, transfer
from geotwin.scene import PerturbationSpec, Scene, generate_twin_pair, load_scene, synthetic_campus

log = logging.getLogger(__name__)

DB_PER_NEPER = 10.0 / math.log(10.0)
SEED_NAMES = {"scene": 1, "twin": 2, "train_split": 3, "gp": 4}
METHODS = ("direct", "spatial", "dt")


class ConfigError(ValueError):
    """Experiment configuration is inconsistent with the scene."""


def derive_seed(master: int, name: str, rep: int = 0) -> int:
    """Named sub-seed; independent streams for every (master, rep, name)."""
    ss = np.random.SeedSequence([int(master), int(rep), SEED_NAMES[name]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scene_path: str | None = None
    campus_seed: int | None = None
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    epsilon: float = 0.01
    delta: float = 0.10
    train_count: int = 30
    max_order: int = 2
    ref_snr_db: float = 30.0
    ref_distance: float = 50.0
    repetitions: int = 1
    include_noise: bool = True
    gp_restarts: int = 5
    gp_iterations: int = 200

    def base_scene(self) -> Scene:
        if self.scene_path:
            return load_scene(self.scene_path)
        seed = self.campus_seed if self.campus_seed is not None else derive_seed(self.seed, "scene") % 2**31
        return synthetic_campus(seed)

    def link_budget(self, scene: Scene) -> ratesel.LinkBudget:
        return ratesel.LinkBudget.for_reference_snr(self.ref_snr_db, self.ref_distance, scene.band.wavelength)

    def validate(self, scene: Scene) -> None:
        if not 3 <= self.train_count < scene.n_tx:
            raise ConfigError(f"train count {self.train_count} must be in [3, {scene.n_tx})")
        if self.epsilon * scene.band.n_points < 1.0:
            raise ConfigError(f"epsilon * n_points = {self.epsilon * scene.band.n_points:.3g} < 1")
        if not 0.0 < self.epsilon <= 0.5:
            raise ConfigError("epsilon must be in (0, 0.5]")
        if not 0.0 < self.delta <= 0.5:
            raise ConfigError("delta must be in (0, 0.5]")
        self.validate_order()
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")

    def validate_order(self) -> None:
        if not 0 <= self.max_order <= 3:
            raise ConfigError("max order must be in [0, 3]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["perturbation"] = asdict(self.perturbation)
        return d


@dataclass
class PositionRecord:
    tx_id: int
    x: float
    y: float
    q_truth: float
    q_direct: float
    q_spatial: float
    q_dt: float
    var_spatial: float
    var_dt: float
    rate_spatial: float
    rate_dt: float
    r_eps: float
    is_train: bool

    @property
    def err_direct_db(self) -> float:
        return abs(self.q_direct - self.q_truth) * DB_PER_NEPER

    @property
    def err_spatial_db(self) -> float:
        return abs(self.q_spatial - self.q_truth) * DB_PER_NEPER

    @property
    def err_dt_db(self) -> float:
        return abs(self.q_dt - self.q_truth) * DB_PER_NEPER

    @property
    def nr_spatial(self) -> float:
        return ratesel.normalized_rate(self.rate_spatial, self.r_eps)

    @property
    def nr_dt(self) -> float:
        return ratesel.normalized_rate(self.rate_dt, self.r_eps)

    @property
    def viol_spatial(self) -> bool:
        return self.rate_spatial > self.r_eps

    @property
    def viol_dt(self) -> bool:
        return self.rate_dt > self.r_eps


CSV_COLUMNS = (
    "tx_id", "x", "y", "q_truth", "q_direct", "q_spatial", "q_dt",
    "err_direct_db", "err_spatial_db", "err_dt_db", "rate_spatial", "rate_dt",
    "r_eps", "nr_spatial", "nr_dt", "viol_spatial", "viol_dt", "is_train",
)  # fmt: skip


@dataclass
class ExperimentReport:
    rep: int
    seeds: dict
    records: list[PositionRecord]
    excluded: list[int]
    hyperparameters: dict

    @property
    def test(self) -> list[PositionRecord]:
        return [r for r in self.records if not r.is_train]

    @property
    def train(self) -> list[PositionRecord]:
        return [r for r in self.records if r.is_train]

    def errors_db(self, method: str) -> np.ndarray:
        return np.array([getattr(r, f"err_{method}_db") for r in self.test])

    def aggregates(self) -> dict:
        test = self.test
        out = {
            "n_train": len(self.train),
            "n_test": len(test),
            "n_excluded": len(self.excluded),
            "median_abs_error_db": {m: float(np.median(self.errors_db(m))) for m in METHODS},
            "mean_normalized_rate": {
                "spatial": float(np.mean([r.nr_spatial for r in test])),
                "dt": float(np.mean([r.nr_dt for r in test])),
            },
            "meta_probability": {
                "spatial": ratesel.meta_probability([r.rate_spatial for r in test], [r.r_eps for r in test]),
                "dt": ratesel.meta_probability([r.rate_dt for r in test], [r.r_eps for r in test]),
            },
        }
        return out


# ---------------------------------------------------------------------------
# Per-position channel statistics
# ---------------------------------------------------------------------------


def band_powers(scene: Scene, max_order: int) -> list[np.ndarray]:
    """Raw |h(f)|^2 over the band for every transmitter of ``scene``."""
    tracer = Tracer(scene, max_order)
    freqs = scene.band.frequencies()
    arrays = tracer.path_arrays(np.asarray(scene.tx_positions, dtype=float))
    return [np.abs(transfer(a["amplitude"], a["delay"], freqs)) ** 2 for a in arrays]


def _log_quantiles(cdfs: list[EmpiricalCdf], epsilon: float) -> np.ndarray:
    out = np.full(len(cdfs), np.nan)
    for i, cdf in enumerate(cdfs):
        try:
            out[i] = chanstats.log_quantile(cdf, epsilon)[1]
        except chanstats.BlockedPositionError:
            pass
    return out


@dataclass
class TwinData:
    """Twin-side statistics, reusable across repetitions on the same base scene."""

    cdfs: list[EmpiricalCdf]
    q_direct: np.ndarray
    dt_features: list[np.ndarray | None]


def twin_data(twin: Scene, cfg: ExperimentConfig, snr_scale: float) -> TwinData:
    cdfs = [EmpiricalCdf(p * snr_scale) for p in band_powers(twin, cfg.max_order)]
    feats = []
    for i, cdf in enumerate(cdfs):
        try:
            feats.append(gpredict.build_features("dt", twin.tx_positions[i], cdf))
        except chanstats.BlockedPositionError:
            feats.append(None)
    return TwinData(cdfs, _log_quantiles(cdfs, cfg.epsilon), feats)


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


def run_experiment(
    cfg: ExperimentConfig, rep: int = 0, base: Scene | None = None, twin_cache: TwinData | None = None
) -> ExperimentReport:
    """One repetition of the three-way prediction benchmark."""
    base = base or cfg.base_scene()
    cfg.validate(base)
    seeds = {name: derive_seed(cfg.seed, name, rep) for name in ("twin", "train_split", "gp")}
    pair = generate_twin_pair(base, cfg.perturbation, seeds["twin"])
    budget = cfg.link_budget(base)
    policy = ratesel.RatePolicy(cfg.epsilon, cfg.delta)

    tw = twin_cache or twin_data(pair.twin, cfg, budget.snr_scale)
    raw_truth = band_powers(pair.truth, cfg.max_order)
    truth_cdfs = [EmpiricalCdf(p) for p in raw_truth]
    q_truth = _log_quantiles([c.scaled(budget.snr_scale) for c in truth_cdfs], cfg.epsilon)

    n = base.n_tx
    usable = [i for i in range(n) if np.isfinite(q_truth[i]) and np.isfinite(tw.q_direct[i]) and tw.dt_features[i] is not None]
    excluded = sorted(set(range(n)) - set(usable))
    if excluded:
        log.info("rep %d: excluding %d blocked positions: %s", rep, len(excluded), excluded)
    if len(usable) <= cfg.train_count:
        raise ConfigError(f"only {len(usable)} unblocked positions for {cfg.train_count} training points")

    rng = np.random.default_rng(seeds["train_split"])
    train = sorted(int(i) for i in rng.permutation(np.array(usable))[: cfg.train_count])
    train_set = set(train)

    pos = np.asarray(base.tx_positions, dtype=float)
    targets = q_truth[train]
    feats = {
        "spatial": pos,
        "dt": np.array([tw.dt_features[i] if tw.dt_features[i] is not None else np.zeros(gpredict.feature_dim("dt")) for i in range(n)]),
    }
    models = {}
    for k, mode in enumerate(("spatial", "dt")):
        models[mode] = gpredict.fit(
            mode,
            targets,
            feats[mode][train],
            seed=seeds["gp"] + k,
            restarts=cfg.gp_restarts,
            iterations=cfg.gp_iterations,
        )

    preds = {mode: gpredict.predict_many(models[mode], feats[mode][usable], cfg.include_noise) for mode in models}
    records = []
    for j, i in enumerate(usable):
        dec = {}
        for mode, source in (("spatial", "spatial_gp"), ("dt", "dt_gp")):
            p = gpredict.PredictiveDistribution(float(preds[mode][0][j]), float(preds[mode][1][j]))
            dec[mode] = ratesel.select_rate(p, policy, source).rate
        records.append(
            PositionRecord(
                tx_id=i,
                x=float(pos[i, 0]),
                y=float(pos[i, 1]),
                q_truth=float(q_truth[i]),
                q_direct=float(tw.q_direct[i]),
                q_spatial=float(preds["spatial"][0][j]),
                q_dt=float(preds["dt"][0][j]),
                var_spatial=float(preds["spatial"][1][j]),
                var_dt=float(preds["dt"][1][j]),
                rate_spatial=dec["spatial"],
                rate_dt=dec["dt"],
                r_eps=ratesel.outage_capacity(truth_cdfs[i], budget, cfg.epsilon),
                is_train=i in train_set,
            )
        )
    hyper = {
        mode: {
            "signal_var": m.params.signal_var,
            "lengthscales": sorted(set(m.params.lengthscales.tolist()), key=m.params.lengthscales.tolist().index),
            "noise_var": m.params.noise_var,
            "log_marginal_likelihood": m.log_marginal_likelihood,
        }
        for mode, m in models.items()
    }
    return ExperimentReport(rep, seeds, records, excluded, hyper)


def run_repetitions(cfg: ExperimentConfig) -> list[ExperimentReport]:
    base = cfg.base_scene()
    cfg.validate(base)
    budget = cfg.link_budget(base)
    # the uncalibrated twin does not depend on the perturbation seed
    twin = generate_twin_pair(base, PerturbationSpec.identity(), 0).twin
    cache = twin_data(twin, cfg, budget.snr_scale)
    reports = []
    for rep in range(cfg.repetitions):
        reports.append(run_experiment(cfg, rep, base, cache))
        agg = reports[-1].aggregates()
        log.info("rep %d: median abs error %s", rep, agg["median_abs_error_db"])
    return reports


def pooled_summary(reports: list[ExperimentReport]) -> dict:
    """Aggregates across repetitions (position-trial granularity)."""
    tests = [r for rep in reports for r in rep.test]
    per_rep = [rep.aggregates() for rep in reports]
    med = {m: float(np.median(np.concatenate([rep.errors_db(m) for rep in reports]))) for m in METHODS}
    viol = {}
    for mode in ("spatial", "dt"):
        by_pos: dict[int, list[bool]] = {}
        for r in tests:
            by_pos.setdefault(r.tx_id, []).append(getattr(r, f"viol_{mode}"))
        per_pos = [float(np.mean(v)) for v in by_pos.values()]
        viol[mode] = {
            "pooled": float(np.mean([getattr(r, f"viol_{mode}") for r in tests])),
            "per_position_mean": float(np.mean(per_pos)),
            "per_position_max": float(np.max(per_pos)),
        }
    return {
        "repetitions": len(reports),
        "pooled_median_abs_error_db": med,
        "mean_normalized_rate": {
            mode: float(np.mean([getattr(r, f"nr_{mode}") for r in tests])) for mode in ("spatial", "dt")
        },
        "meta_probability": viol,
        "runs_dt_error_below_spatial": sum(
            a["median_abs_error_db"]["dt"] < a["median_abs_error_db"]["spatial"] for a in per_rep
        ),
        "runs_dt_rate_at_least_spatial": sum(
            a["mean_normalized_rate"]["dt"] >= a["mean_normalized_rate"]["spatial"] for a in per_rep
        ),
    }
