"""Gaussian-process regression of log power quantiles.

Two feature modes:

``spatial``
    the transmitter position (x, y).
``dt``
    the position followed by 100 quantiles (in dB) of the twin's received
    power distribution, taken at the mid-points of a uniform probability grid.

The kernel is squared-exponential with one lengthscale per feature dimension;
fitting ties the lengthscales within the position block and within the CDF
block. Targets are centered on their sample mean before regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from geotwin.chanstats import BlockedPositionError, EmpiricalCdf, empirical_quantile

MODES = ("spatial", "dt")
N_CDF_FEATURES = 100
_LOG_2PI = math.log(2.0 * math.pi)


class GpError(RuntimeError):
    pass


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def feature_dim(mode: str) -> int:
    _check_mode(mode)
    return 2 if mode == "spatial" else 2 + N_CDF_FEATURES


def feature_groups(mode: str) -> list[slice]:
    _check_mode(mode)
    if mode == "spatial":
        return [slice(0, 2)]
    return [slice(0, 2), slice(2, 2 + N_CDF_FEATURES)]


def cdf_probabilities(n: int = N_CDF_FEATURES) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def build_features(mode: str, position, twin_cdf: EmpiricalCdf | None = None) -> np.ndarray:
    """Feature vector for one position.

    In ``dt`` mode entries 2..101 are the twin power quantiles in dB, hence
    non-decreasing.
    """
    _check_mode(mode)
    pos = np.asarray(position, dtype=float).ravel()[:2]
    if mode == "spatial":
        return pos.copy()
    if twin_cdf is None:
        raise ValueError("dt features need the twin's power CDF")
    if twin_cdf.is_blocked:
        raise BlockedPositionError("twin power is identically zero at this position")
    q = np.array([empirical_quantile(twin_cdf, u) for u in cdf_probabilities()])
    return np.concatenate([pos, 10.0 * np.log10(np.maximum(q, 1e-30))])


@dataclass(frozen=True, eq=False)
class KernelParams:
    signal_var: float
    lengthscales: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        ls = np.array(self.lengthscales, dtype=float).ravel()
        if not self.signal_var > 0:
            raise ValueError("signal_var must be positive")
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")
        if not self.noise_var >= 0:
            raise ValueError("noise_var must be non-negative")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)

    @classmethod
    def grouped(cls, mode: str, signal_var: float, group_lengthscales, noise_var: float = 0.0) -> "KernelParams":
        groups = feature_groups(mode)
        ls = np.empty(feature_dim(mode))
        for g, val in zip(groups, group_lengthscales, strict=True):
            ls[g] = val
        return cls(signal_var, ls, noise_var)

    def __eq__(self, other):
        if not isinstance(other, KernelParams):
            return NotImplemented
        return (
            self.signal_var == other.signal_var
            and self.noise_var == other.noise_var
            and np.array_equal(self.lengthscales, other.lengthscales)
        )


def kernel_matrix(params: KernelParams, a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ls = params.lengthscales
    if a.shape[1] != ls.size or b.shape[1] != ls.size:
        raise ValueError(f"feature dimension mismatch: {a.shape[1]}, {b.shape[1]} vs {ls.size} lengthscales")
    sa, sb = a / ls, b / ls
    sq = np.sum(sa**2, axis=1)[:, None] + np.sum(sb**2, axis=1)[None, :] - 2.0 * sa @ sb.T
    return params.signal_var * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel(params: KernelParams, a, b) -> float:
    """sigma_f^2 exp(-1/2 sum_j ((a_j - b_j) / l_j)^2)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    ls = params.lengthscales
    if a.size != ls.size or b.size != ls.size:
        raise ValueError(f"feature dimension mismatch: {a.size}, {b.size} vs {ls.size} lengthscales")
    return float(params.signal_var * np.exp(-0.5 * np.sum(((a - b) / ls) ** 2)))


def _factorize(cov: np.ndarray, jitter: float | None = None):
    """Lower Cholesky factor with adaptive diagonal jitter; returns (L, jitter)."""
    d = len(cov)
    if jitter is not None:
        return cholesky(cov + jitter * np.eye(d), lower=True, check_finite=False), jitter
    scale = np.trace(cov) / d
    for power in range(-10, -3):
        jit = scale * 10.0**power
        try:
            return cholesky(cov + jit * np.eye(d), lower=True, check_finite=False), jit
        except LinAlgError:
            continue
    raise GpError("kernel matrix is not positive definite even with 1e-4 relative jitter")


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True, eq=False)
class GpModel:
    mode: str
    params: KernelParams
    train_features: np.ndarray
    train_targets: np.ndarray
    prior_mean: float = 0.0
    jitter: float = 0.0
    chol: np.ndarray | None = field(default=None, repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)
    log_marginal_likelihood: float = math.nan

    @property
    def n_train(self) -> int:
        return len(self.train_targets)

    def predict(self, query, include_noise: bool = False) -> PredictiveDistribution:
        return predict(self, query, include_noise)


def condition(mode: str, params: KernelParams, features, targets, jitter: float | None = None) -> GpModel:
    """Posterior GP for fixed hyperparameters."""
    _check_mode(mode)
    x = np.asarray(features, dtype=float).reshape(-1, feature_dim(mode))
    y = np.asarray(targets, dtype=float).ravel()
    if len(x) != len(y):
        raise ValueError("features and targets are not aligned")
    if not np.all(np.isfinite(y)):
        raise GpError("targets contain NaN or inf")
    if len(y) == 0:
        return GpModel(mode, params, x, y)
    mean = float(np.mean(y))
    cov = kernel_matrix(params, x, x) + params.noise_var * np.eye(len(y))
    chol, jit = _factorize(cov, jitter)
    weights = cho_solve((chol, True), y - mean, check_finite=False)
    lml = -0.5 * float((y - mean) @ weights) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * len(y) * _LOG_2PI
    return GpModel(mode, params, x, y, mean, jit, chol, weights, lml)


def prior_model(mode: str, params: KernelParams) -> GpModel:
    return condition(mode, params, np.zeros((0, feature_dim(mode))), np.zeros(0))


def predict_many(model: GpModel, queries, include_noise: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances at each row of ``queries``.

    The variance is that of the latent function; ``include_noise`` adds the
    observation noise, i.e. predicts a fresh noisy target.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[1] != feature_dim(model.mode):
        raise ValueError(f"{model.mode} model expects {feature_dim(model.mode)} features, got {q.shape[1]}")
    sf2 = model.params.signal_var
    if model.n_train == 0:
        mean = np.zeros(len(q))
        var = np.full(len(q), sf2)
    else:
        ks = kernel_matrix(model.params, q, model.train_features)
        mean = model.prior_mean + ks @ model.weights
        v = solve_triangular(model.chol, ks.T, lower=True, check_finite=False)
        var = np.maximum(sf2 - np.sum(v * v, axis=0), 0.0)
    if include_noise:
        var = var + model.params.noise_var
    return mean, var


def predict(model: GpModel, query, include_noise: bool = False) -> PredictiveDistribution:
    mean, var = predict_many(model, np.asarray(query, dtype=float).reshape(1, -1), include_noise)
    return PredictiveDistribution(float(mean[0]), float(var[0]))


# ---------------------------------------------------------------------------
# Hyperparameter fitting
# ---------------------------------------------------------------------------


def _pairwise_sq(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x**2, axis=1)
    return np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)


class _Objective:
    """Log marginal likelihood over log-parameters [sf2, l_1..l_G, sn2]."""

    def __init__(self, mode, x, y):
        self.mode = mode
        self.groups = feature_groups(mode)
        self.sq = [_pairwise_sq(x[:, g]) for g in self.groups]
        self.r = y - y.mean()
        self.d = len(y)
        self.eye = np.eye(self.d)

    def __call__(self, theta) -> float:
        sf2 = math.exp(theta[0])
        sn2 = math.exp(theta[-1])
        expo = sum(s / math.exp(2.0 * t) for s, t in zip(self.sq, theta[1:-1]))
        cov = sf2 * np.exp(-0.5 * expo) + sn2 * self.eye
        try:
            chol, _ = _factorize(cov)
        except GpError:
            return -math.inf
        alpha = cho_solve((chol, True), self.r, check_finite=False)
        return -0.5 * float(self.r @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * self.d * _LOG_2PI


def _group_scales(x: np.ndarray, groups) -> list[float]:
    scales = []
    for g in groups:
        dist = np.sqrt(_pairwise_sq(x[:, g]))[np.triu_indices(len(x), 1)]
        dist = dist[dist > 0]
        scales.append(float(np.median(dist)) if dist.size else 1.0)
    return scales


def _coordinate_search(obj, theta, lo, hi, iterations, min_step=1e-3):
    theta = np.clip(np.array(theta, dtype=float), lo, hi)
    best = obj(theta)
    step = np.full(theta.size, 1.0)
    for _ in range(iterations):
        if np.all(step < min_step):
            break
        for i in range(theta.size):
            cand_best, cand_val = None, best
            for sign in (1.0, -1.0):
                cand = theta.copy()
                cand[i] = np.clip(cand[i] + sign * step[i], lo[i], hi[i])
                if cand[i] == theta[i]:
                    continue
                val = obj(cand)
                if val > cand_val:
                    cand_best, cand_val = cand, val
            if cand_best is None:
                step[i] *= 0.5
            else:
                theta, best = cand_best, cand_val
                step[i] *= 1.2
    return theta, best


def fit(
    mode: str,
    dataset,
    features,
    seed: int = 0,
    restarts: int = 5,
    iterations: int = 200,
    noise_floor: float = 1e-6,
) -> GpModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    ``dataset`` is a QuantileDataset (or a plain array of targets) aligned with
    the rows of ``features``. The search is a derivative-free coordinate ascent
    in log-parameter space, restarted from ``restarts`` points (the first from
    data-driven defaults, the rest drawn uniformly within the bounds).
    ``noise_floor`` is the smallest noise variance relative to the target
    variance.
    """
    _check_mode(mode)
    y = np.asarray(getattr(dataset, "targets", dataset), dtype=float).ravel()
    x = np.asarray(features, dtype=float).reshape(-1, feature_dim(mode))
    if len(x) != len(y):
        raise ValueError("features and targets are not aligned")
    if len(y) < 3:
        raise ValueError("need at least 3 training points")
    if not np.all(np.isfinite(y)):
        raise GpError("targets contain NaN or inf")

    groups = feature_groups(mode)
    var = float(np.var(y)) or 1.0
    scales = _group_scales(x, groups)
    lo = np.array([math.log(1e-3 * var), *(math.log(0.02 * s) for s in scales), math.log(noise_floor * var)])
    hi = np.array([math.log(1e2 * var), *(math.log(50.0 * s) for s in scales), math.log(10.0 * var)])
    start = np.array([math.log(var), *(math.log(s) for s in scales), math.log(0.1 * var)])

    obj = _Objective(mode, x, y)
    rng = np.random.default_rng(seed)
    best_theta, best_val = None, -math.inf
    for r in range(restarts):
        theta0 = start if r == 0 else rng.uniform(lo, hi)
        theta, val = _coordinate_search(obj, theta0, lo, hi, iterations)
        if val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None:
        raise GpError("hyperparameter search found no finite likelihood")

    params = KernelParams.grouped(
        mode, math.exp(best_theta[0]), [math.exp(t) for t in best_theta[1:-1]], math.exp(best_theta[-1])
    )
    return condition(mode, params, x, y)


def position_lipschitz(model: GpModel) -> float:
    """Upper bound on |d mean / d position| when the CDF features are held fixed."""
    if model.n_train == 0:
        return 0.0
    ls = model.params.lengthscales[:2]
    return float(np.sum(np.abs(model.weights)) * model.params.signal_var / (np.min(ls) * math.sqrt(math.e)))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_MAGIC = "geotwin-gp 1"


def _f(x: float) -> str:
    return format(float(x), ".17g")


def dumps_model(model: GpModel) -> str:
    lines = [
        _MAGIC,
        f"mode {model.mode}",
        f"signal_var {_f(model.params.signal_var)}",
        f"noise_var {_f(model.params.noise_var)}",
        "lengthscales " + " ".join(_f(v) for v in model.params.lengthscales),
        f"jitter {_f(model.jitter)}",
        f"n_train {model.n_train}",
    ]
    for row, target in zip(model.train_features, model.train_targets):
        lines.append("x " + " ".join(_f(v) for v in row) + f" y {_f(target)}")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> GpModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ValueError("not a serialized GP model")
    head = {}
    rows, targets = [], []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "x":
            feat, _, target = rest.partition(" y ")
            rows.append([float(v) for v in feat.split()])
            targets.append(float(target))
        elif key:
            head[key] = rest
    mode = head["mode"].strip()
    params = KernelParams(
        float(head["signal_var"]),
        np.array([float(v) for v in head["lengthscales"].split()]),
        float(head["noise_var"]),
    )
    if len(rows) != int(head["n_train"]):
        raise ValueError("training row count does not match header")
    x = np.array(rows, dtype=float).reshape(-1, feature_dim(mode))
    if not rows:
        return prior_model(mode, params)
    return condition(mode, params, x, np.array(targets), jitter=float(head["jitter"]))
