"""Empirical fading statistics and the analytic WSSUS plane-wave model.

The empirical side works on sorted power samples: CDF evaluation, the
lower-order-statistic epsilon-quantile and its natural log. The analytic side
covers Clarke's two-dimensional model: spatial correlation J0(2 pi x / lambda),
the uniform-delay frequency correlation, Monte-Carlo field synthesis and the
log-power density of an exponentially distributed power.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from geotwin.scene import SPEED_OF_LIGHT, Scene

CONVENTIONS = ("paper", "physical")


class BlockedPositionError(ValueError):
    """The received power at a position is identically zero."""


# ---------------------------------------------------------------------------
# Empirical distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    """Sorted-sample CDF ``psi(beta) = #{samples <= beta} / n``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if s.size < 2:
            raise ValueError("an empirical CDF needs at least 2 samples")
        if not np.all(np.isfinite(s)) or s[0] < 0.0:
            raise ValueError("power samples must be finite and non-negative")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_samples(cls, samples) -> "EmpiricalCdf":
        return cls(np.asarray(samples, dtype=float))

    @property
    def n(self) -> int:
        return int(self.samples.size)

    @property
    def is_blocked(self) -> bool:
        return bool(self.samples[-1] == 0.0)

    def __call__(self, beta):
        return np.searchsorted(self.samples, beta, side="right") / self.n

    def quantile(self, epsilon: float) -> float:
        return empirical_quantile(self, epsilon)

    def scaled(self, factor: float) -> "EmpiricalCdf":
        return EmpiricalCdf(self.samples * factor)

    def normalized(self) -> "EmpiricalCdf":
        """Rescaled to unit mean power."""
        mean = self.samples.mean()
        if mean == 0.0:
            raise BlockedPositionError("cannot normalize an all-zero power distribution")
        return self.scaled(1.0 / mean)

    def to_rows(self, floor_db: float = -300.0):
        """``(power_db, cdf)`` pairs, one per sample."""
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(self.samples)
        db = np.maximum(db, floor_db)
        cdf = np.arange(1, self.n + 1) / self.n
        return list(zip(db.tolist(), cdf.tolist()))


def _order_index(n: int, epsilon: float) -> int:
    # round() guards against 0.01 * 300 = 3.0000000000000004
    return max(math.ceil(round(n * epsilon, 9)), 1) - 1


def empirical_quantile(cdf, epsilon: float) -> float:
    """Largest sample with empirical CDF below ``epsilon``.

    Returns the order statistic at 0-based index ``ceil(n * epsilon) - 1``. It
    never overstates the true quantile on average, which matters when the value
    feeds a reliability constraint.
    """
    if not isinstance(cdf, EmpiricalCdf):
        samples = np.asarray(cdf, dtype=float).ravel()
        if samples.size == 0:
            raise ValueError("empty sample set")
        samples = np.sort(samples)
    else:
        samples = cdf.samples
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    n = samples.size
    if n * epsilon < 1.0:
        warnings.warn(
            f"n * epsilon = {n * epsilon:.3g} < 1: the quantile collapses to the sample minimum",
            stacklevel=2,
        )
    return float(samples[_order_index(n, epsilon)])


def log_quantile(cdf, epsilon: float) -> tuple[float, float]:
    """``(rho, ln rho)`` for the epsilon-quantile of ``cdf``."""
    rho = empirical_quantile(cdf, epsilon)
    if rho <= 0.0:
        raise BlockedPositionError(f"zero-power {epsilon}-quantile (blocked position)")
    return rho, math.log(rho)


@dataclass(frozen=True)
class QuantileSample:
    position: tuple[float, float]
    epsilon: float
    rho: float
    q: float

    def __post_init__(self):
        if not self.rho > 0.0:
            raise ValueError("rho must be positive")
        if self.q != math.log(self.rho):
            raise ValueError("q must equal ln(rho)")
        if not 0.0 < self.epsilon <= 0.5:
            raise ValueError("epsilon must be in (0, 0.5]")

    @classmethod
    def from_cdf(cls, position, cdf, epsilon: float) -> "QuantileSample":
        rho, q = log_quantile(cdf, epsilon)
        return cls((float(position[0]), float(position[1])), epsilon, rho, q)


@dataclass(frozen=True)
class QuantileDataset:
    entries: tuple[QuantileSample, ...]
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if any(e.epsilon != self.epsilon for e in self.entries):
            raise ValueError("all entries must share epsilon")
        positions = [e.position for e in self.entries]
        if len(set(positions)) != len(positions):
            raise ValueError("positions must be pairwise distinct")

    def __len__(self):
        return len(self.entries)

    @property
    def positions(self) -> np.ndarray:
        return np.array([e.position for e in self.entries], dtype=float).reshape(-1, 2)

    @property
    def targets(self) -> np.ndarray:
        return np.array([e.q for e in self.entries], dtype=float)


# ---------------------------------------------------------------------------
# Bessel J0
# ---------------------------------------------------------------------------

_SERIES_LIMIT = 12.0


def _j0_series(x):
    # sum_k (-x^2/4)^k / (k!)^2; at |x| < 12 the largest term is ~4e3, so
    # cancellation costs at most ~1e-12 absolute
    z = -0.25 * x * x
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 80):
        term = term * z / (k * k)
        total = total + term
    return total


def _j0_asymptotic(x):
    # Hankel expansion, |a_k| = prod_{j<=k} (2j-1)^2 / (k! 8^k); at x >= 12 the
    # terms keep shrinking well past k = 20
    coeffs = [1.0]
    for k in range(1, 21):
        coeffs.append(coeffs[-1] * (2 * k - 1) ** 2 / (8.0 * k))
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    inv = 1.0 / x
    for k, a in enumerate(coeffs):
        term = a * inv**k
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2 == 0:
            p = p + sign * term
        else:
            q = q + sign * term
    phase = x - 0.25 * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(phase) + q * np.sin(phase))


def bessel_j0(x):
    """Bessel function of the first kind, order zero.

    Power series below |x| = 12, Hankel asymptotic expansion above; absolute
    error below 2e-12 on [0, 100].
    """
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    small = x < _SERIES_LIMIT
    out[small] = _j0_series(x[small])
    out[~small] = _j0_asymptotic(x[~small])
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# WSSUS model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WssusModel:
    """Clarke-style plane-wave model.

    ``rate`` is the exponential rate of the channel power (mean power 1/rate).
    """

    wavelength: float
    tau_max: float
    n_waves: int = 200
    rate: float = 1.0

    def __post_init__(self):
        if not (self.wavelength > 0 and self.tau_max > 0 and self.rate > 0):
            raise ValueError("wavelength, tau_max and rate must be positive")
        if self.n_waves < 1:
            raise ValueError("n_waves must be >= 1")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @classmethod
    def for_distance(cls, distance: float, wavelength: float, n_waves: int = 200, rate: float = 1.0) -> "WssusModel":
        """Excess-delay spread of ten times the direct travel time."""
        return cls(wavelength, 10.0 * distance / SPEED_OF_LIGHT, n_waves, rate)


def _theta(model: WssusModel, delta_f, convention: str):
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    scale = model.tau_max if convention == "paper" else 2.0 * math.pi * model.tau_max
    return scale * np.asarray(delta_f, dtype=float)


def spatial_correlation(model: WssusModel, distance):
    """J0(2 pi d / lambda)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    return bessel_j0(2.0 * math.pi * d / model.wavelength)


def frequency_correlation(model: WssusModel, delta_f, convention: str = "paper"):
    """(1 - exp(-i theta)) / (i theta), with theta = tau_max * df (convention "paper") or
    2 pi tau_max df (physical); 1 at theta = 0."""
    theta = _theta(model, delta_f, convention)
    if np.any(theta < 0):
        raise ValueError("delta_f must be non-negative")
    safe = np.where(theta == 0.0, 1.0, theta)
    val = (1.0 - np.exp(-1j * safe)) / (1j * safe)
    val = np.where(theta == 0.0, 1.0 + 0j, val)
    return complex(val) if val.ndim == 0 else val


def decorrelation_frequency(model: WssusModel, theta: float = 4.6, convention: str = "paper") -> float:
    """Frequency shift at which theta reaches the given value."""
    scale = model.tau_max if convention == "paper" else 2.0 * math.pi * model.tau_max
    return theta / scale


def _draw_waves(rng: np.random.Generator, n: int, tau_max: float):
    alpha = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0 * n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    tau = rng.uniform(0.0, tau_max, n)
    return alpha, phi, tau


def _field(model, alpha, phi, tau, positions, freqs, convention):
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    freqs = np.asarray(freqs, dtype=float).ravel()
    k = model.wavenumber
    r = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    spatial = np.exp(-1j * k * (positions @ r.T))  # (P, N)
    fscale = 1.0 if convention == "paper" else 2.0 * math.pi
    spectral = np.exp(-1j * fscale * np.multiply.outer(tau, freqs))  # (N, F)
    return (spatial * alpha) @ spectral


def wssus_sample_field(model: WssusModel, positions, freqs, seed, convention: str = "paper") -> np.ndarray:
    """One realization of h(x, f) on every (position, frequency) pair.

    Returns a complex array of shape ``(len(positions), len(freqs))``.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    rng = np.random.default_rng(seed)
    alpha, phi, tau = _draw_waves(rng, model.n_waves, model.tau_max)
    return _field(model, alpha, phi, tau, positions, freqs, convention)


def sample_fields(
    model: WssusModel, positions, freqs, seed: int, n_realizations: int, convention: str = "paper"
) -> np.ndarray:
    """Independent realizations, shape ``(R, P, F)``.

    Realization ``i`` is seeded by ``(seed, i)`` so results do not depend on how
    the realizations are batched.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    freqs = np.asarray(freqs, dtype=float).ravel()
    out = np.empty((n_realizations, len(positions), len(freqs)), dtype=complex)
    for i in range(n_realizations):
        out[i] = wssus_sample_field(model, positions, freqs, (seed, i), convention)
    return out


def log_power_pdf(model: WssusModel, q):
    """Density of q = ln p for p ~ Exp(rate): rate * exp(q - rate * e^q)."""
    q = np.asarray(q, dtype=float)
    return model.rate * np.exp(q - model.rate * np.exp(q))


# ---------------------------------------------------------------------------
# Frequency as a proxy for space
# ---------------------------------------------------------------------------


PROXY_GRID_SPACING = 0.71


@dataclass(frozen=True)
class FreqSpaceReport:
    tx_id: int
    ks_distance: float
    quantile_gap_db: float
    n_paths: int


def ks_distance(a, b) -> float:
    return float(stats.ks_2samp(np.ravel(a), np.ravel(b)).statistic)


def compare_freq_vs_space(
    scene: Scene,
    tx_id: int,
    max_order: int = 2,
    grid_n: int = 400,
    epsilon: float = 0.01,
    tracer=None,
    spacing: float | None = None,
) -> FreqSpaceReport:
    """Compare the wideband (frequency-sampled) and local-grid (space-sampled)
    power distributions at one transmitter, both normalized to unit mean.

    The grid spacing defaults to ``PROXY_GRID_SPACING`` band-center
    wavelengths: at 0.71 lambda the spatial correlation has fallen below 0.33,
    so the 400 grid samples are close to independent.
    """
    from geotwin.raytwin import Tracer, local_grid_power, power_samples

    tracer = tracer or Tracer(scene, max_order)
    tx = scene.tx_positions[tx_id]
    freq = power_samples(scene, tx, tracer=tracer)
    if spacing is None:
        spacing = PROXY_GRID_SPACING * scene.band.wavelength
    space = local_grid_power(scene, tx, grid_n=grid_n, spacing=spacing, tracer=tracer)
    if not freq.any() and not space.any():
        raise BlockedPositionError(f"tx {tx_id} is blocked")
    freq_cdf = EmpiricalCdf(freq).normalized()
    space_cdf = EmpiricalCdf(space).normalized()
    qf = empirical_quantile(freq_cdf, epsilon)
    qs = empirical_quantile(space_cdf, epsilon)
    if qf == qs:
        gap = 0.0
    elif qf == 0.0 or qs == 0.0:
        gap = math.inf
    else:
        gap = abs(10.0 * math.log10(qf / qs))
    n_paths = len(tracer.path_arrays(np.asarray(tx, dtype=float)[None])[0]["delay"])
    return FreqSpaceReport(tx_id, ks_distance(freq_cdf.samples, space_cdf.samples), gap, n_paths)
