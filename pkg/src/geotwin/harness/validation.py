"""Validation suites: WSSUS Monte-Carlo checks and the frequency-as-proxy test."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from geotwin import chanstats
from geotwin.harness.experiment import ExperimentConfig, derive_seed
from geotwin.raytwin import Tracer
from geotwin.scene import SPEED_OF_LIGHT, generate_twin_pair

RMSE_TOL = 0.05
KS_TOL = 0.02


def exp_quantile_band(n: int, epsilon: float, level: float = 0.99) -> tuple[float, float]:
    """Central ``level`` band of the order statistic used by empirical_quantile
    for ``n`` draws of Exp(1): F(X_(k)) ~ Beta(k, n - k + 1)."""
    k = max(1, math.ceil(round(n * epsilon, 9)))
    lo, hi = stats.beta.ppf([(1 - level) / 2, (1 + level) / 2], k, n - k + 1)
    return float(-math.log1p(-lo)), float(-math.log1p(-hi))


@dataclass
class WssusReport:
    n_waves: int
    n_realizations: int
    convention: str
    spatial_rmse: float
    frequency_rmse: float
    ks_ensemble: float
    ks_within: float
    quantile: float
    quantile_band: tuple[float, float]
    mean_power: float

    @property
    def checks(self) -> dict[str, bool]:
        lo, hi = self.quantile_band
        return {
            "spatial_correlation": self.spatial_rmse < RMSE_TOL,
            "frequency_correlation": self.frequency_rmse < RMSE_TOL,
            "exponential_ensemble": self.ks_ensemble < KS_TOL,
            "quantile_in_band": lo <= self.quantile <= hi,
            "central_limit": self.ks_within < KS_TOL,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantile_band"] = list(self.quantile_band)
        d["checks"] = self.checks
        d["passed"] = self.passed
        return d


def _ensemble_correlation(fields: np.ndarray) -> np.ndarray:
    # fields: (R, K); correlation of column 0 with every column
    ref = fields[:, :1]
    num = np.mean(ref * np.conj(fields), axis=0)
    return num / np.mean(np.abs(ref) ** 2)


def validate_wssus(
    seed: int = 0,
    n_waves: int = 200,
    n_realizations: int = 10_000,
    ks_samples: int = 100_000,
    convention: str = "paper",
    wavelength: float = SPEED_OF_LIGHT / 6e9,
    distance: float = 100.0,
    epsilon: float = 0.01,
) -> WssusReport:
    """Monte-Carlo checks of the plane-wave model against its analytic forms.

    ``ks_ensemble`` pools one sample per independent realization, the marginal
    that the Rayleigh law describes. ``ks_within`` pools a position-frequency
    grid inside each realization (normalized to its own mean power), which only
    looks exponential when many waves superpose.
    """
    model = chanstats.WssusModel.for_distance(distance, wavelength, n_waves=n_waves)
    ss = np.random.SeedSequence(seed)
    s_space, s_freq, s_ks, s_within = (int(s.generate_state(1)[0]) for s in ss.spawn(4))

    # spatial correlation along a line, x in [0, 3 lambda]
    x = np.linspace(0.0, 3.0 * wavelength, 31)
    pos = np.stack([x, np.zeros_like(x)], axis=1)
    fx = chanstats.sample_fields(model, pos, [0.0], s_space, n_realizations, convention)[:, :, 0]
    cx = _ensemble_correlation(fx).real
    spatial_rmse = float(np.sqrt(np.mean((cx - chanstats.spatial_correlation(model, x)) ** 2)))

    # frequency correlation magnitude, theta in [0, 20]
    theta = np.linspace(0.0, 20.0, 41)
    scale = 1.0 if convention == "paper" else 2.0 * math.pi
    freqs = theta / (scale * model.tau_max)
    ff = chanstats.sample_fields(model, [(0.0, 0.0)], freqs, s_freq, n_realizations, convention)[:, 0, :]
    cf = np.abs(_ensemble_correlation(ff))
    ref = np.abs(chanstats.frequency_correlation(model, freqs, convention))
    frequency_rmse = float(np.sqrt(np.mean((cf - ref) ** 2)))

    # exponential law over independent realizations
    p = np.abs(chanstats.sample_fields(model, [(0.0, 0.0)], [0.0], s_ks, ks_samples, convention)).ravel() ** 2
    ks_ens = float(stats.kstest(p, "expon").statistic)
    quantile = chanstats.empirical_quantile(chanstats.EmpiricalCdf(p), epsilon)

    # within-realization distribution on a 10 x 10 lambda-spaced grid, 10 frequencies
    g = np.arange(10) * 1.37 * wavelength
    grid = np.array([(a, b) for a in g for b in g])
    gf = np.arange(10) * 7.3 / (scale * model.tau_max)
    n_within = max(1, ks_samples // (len(grid) * len(gf)))
    w = np.abs(chanstats.sample_fields(model, grid, gf, s_within, n_within, convention)) ** 2
    w = w / w.mean(axis=(1, 2), keepdims=True)
    ks_within = float(stats.kstest(w.ravel(), "expon").statistic)

    return WssusReport(
        n_waves=n_waves,
        n_realizations=n_realizations,
        convention=convention,
        spatial_rmse=spatial_rmse,
        frequency_rmse=frequency_rmse,
        ks_ensemble=ks_ens,
        ks_within=ks_within,
        quantile=float(quantile),
        quantile_band=exp_quantile_band(len(p), epsilon),
        mean_power=float(p.mean()),
    )


@dataclass
class ProxyReport:
    rows: list[chanstats.FreqSpaceReport]
    blocked: list[int]

    @property
    def valid(self) -> list[chanstats.FreqSpaceReport]:
        return [r for r in self.rows if math.isfinite(r.ks_distance)]

    @property
    def median_gap_db(self) -> float:
        return float(np.median([r.quantile_gap_db for r in self.valid]))

    @property
    def median_ks(self) -> float:
        return float(np.median([r.ks_distance for r in self.valid]))

    def to_dict(self) -> dict:
        return {
            "n_positions": len(self.rows),
            "blocked": self.blocked,
            "median_quantile_gap_db": self.median_gap_db,
            "median_ks_distance": self.median_ks,
            "rows": [asdict(r) for r in self.rows],
        }


def validate_freq_proxy(cfg: ExperimentConfig, grid_n: int = 400) -> ProxyReport:
    """Frequency-sampled vs location-sampled CDFs at every truth-twin position.

    Blocked positions keep a row with NaN statistics so the row count always
    equals the transmitter count.
    """
    base = cfg.base_scene()
    truth = generate_twin_pair(base, cfg.perturbation, derive_seed(cfg.seed, "twin", 0)).truth
    tracer = Tracer(truth, cfg.max_order)
    rows, blocked = [], []
    for i in range(truth.n_tx):
        try:
            rows.append(
                chanstats.compare_freq_vs_space(truth, i, cfg.max_order, grid_n, cfg.epsilon, tracer=tracer)
            )
        except chanstats.BlockedPositionError:
            blocked.append(i)
            rows.append(chanstats.FreqSpaceReport(i, math.nan, math.nan, 0))
    return ProxyReport(rows, blocked)
