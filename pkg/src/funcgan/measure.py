"""Target measures: densities on uniform grids and weighted sample sets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionTooHigh, DomainTooNarrow, InvalidSamples, NonPositiveVariance

FLOOR_REL = 1e-300
COVERAGE_SIGMAS = 6.0
MAX_GRID_DIM = 2


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Strictly positive density sampled on a uniform node-centred grid.

    ``rho`` has shape ``shape``; point ``i`` of axis ``a`` sits at
    ``domain[a][0] + i * spacing[a]``. ``log_partition`` accumulates the log
    of every normalizing constant divided out so far.
    """

    domain: tuple
    shape: tuple
    rho: np.ndarray
    log_partition: float = 0.0
    spacing: tuple = field(init=False)

    def __post_init__(self):
        domain = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        shape = tuple(int(n) for n in self.shape)
        if len(domain) != len(shape):
            raise ValueError("domain and shape must have one entry per axis")
        if not 1 <= len(shape) <= MAX_GRID_DIM:
            raise DimensionTooHigh(f"grid densities support d <= {MAX_GRID_DIM}, got {len(shape)}")
        if any(n < 3 for n in shape):
            raise ValueError("each axis needs at least 3 points")
        if any(hi <= lo for lo, hi in domain):
            raise ValueError("empty domain interval")
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != shape:
            raise ValueError(f"rho has shape {rho.shape}, expected {shape}")
        if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
            raise ValueError("density must be finite and strictly positive")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "rho", _frozen(rho))
        object.__setattr__(self, "spacing",
                           tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(domain, shape)))

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.domain, self.shape)]

    def points(self):
        """Grid points as an ``(size, ndim)`` array in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def total_mass(self):
        return float(self.rho.sum() * self.cell_volume)

    def normalize(self):
        return normalize(self)


def normalize(density: GridDensity) -> GridDensity:
    """Rescale so that ``sum(rho) * prod(h) == 1``; idempotent bit for bit."""
    z = density.total_mass()
    if abs(z - 1.0) <= 1e-13:
        return density
    return replace(density, rho=density.rho / z,
                   log_partition=density.log_partition + float(np.log(z)))


def _finish(raw, domain, shape):
    raw = np.asarray(raw, dtype=float).reshape(shape)
    peak = raw.max()
    if not np.isfinite(peak) or peak <= 0:
        raise ValueError("density vanishes on the whole grid")
    raw = np.maximum(raw, FLOOR_REL * peak)
    return normalize(GridDensity(domain=domain, shape=shape, rho=raw))


def _as_axes(domain, shape, d=None):
    """Accept ``(lo, hi)`` / ``n`` for 1-D, or per-axis sequences."""
    if np.ndim(domain) == 1:
        domain = (tuple(domain),)
    if np.ndim(shape) == 0:
        shape = (int(shape),)
    domain = tuple(tuple(map(float, iv)) for iv in domain)
    shape = tuple(int(n) for n in shape)
    if d is not None and len(domain) == 1 and d > 1:
        domain = domain * d
    if d is not None and len(shape) == 1 and d > 1:
        shape = shape * d
    return domain, shape


def _check_coverage(mean, std, domain):
    for a, (lo, hi) in enumerate(domain):
        need_lo = mean[a] - COVERAGE_SIGMAS * std[a]
        need_hi = mean[a] + COVERAGE_SIGMAS * std[a]
        tol = 1e-12 * max(1.0, abs(need_lo), abs(need_hi))
        if lo > need_lo + tol or hi < need_hi - tol:
            raise DomainTooNarrow(
                f"axis {a}: domain [{lo:g}, {hi:g}] does not cover "
                f"[{need_lo:g}, {need_hi:g}] (mean +/- {COVERAGE_SIGMAS:g} sigma)")


def _diag_gaussian(points, mean, var):
    z = ((points - mean) ** 2 / var).sum(axis=1)
    return np.exp(-0.5 * z) / np.sqrt(np.prod(2 * np.pi * var))


def gaussian_density(mean, var, domain, shape) -> GridDensity:
    """Normal density with diagonal covariance on a grid covering mean +/- 6 sigma."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    var = np.atleast_1d(np.asarray(var, dtype=float))
    if np.any(var <= 0):
        raise NonPositiveVariance(f"variances must be positive, got {var}")
    domain, shape = _as_axes(domain, shape, d=len(mean))
    if len(domain) != len(mean):
        raise ValueError("mean and domain dimensions differ")
    _check_coverage(mean, np.sqrt(var), domain)
    grid = GridDensity(domain=domain, shape=shape, rho=np.ones(shape))
    return _finish(_diag_gaussian(grid.points(), mean, var), domain, shape)


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture with diagonal covariances: ``(weight, mean, var)`` triples."""

    components: tuple
    separation: float | None = None

    def __post_init__(self):
        comps = []
        for w, m, v in self.components:
            m = tuple(np.atleast_1d(np.asarray(m, dtype=float)).tolist())
            v = tuple(np.atleast_1d(np.asarray(v, dtype=float)).tolist())
            if len(v) == 1 and len(m) > 1:
                v = v * len(m)
            comps.append((float(w), m, v))
        if not comps:
            raise ValueError("mixture needs at least one component")
        weights = np.array([c[0] for c in comps])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if any(min(c[2]) <= 0 for c in comps):
            raise NonPositiveVariance("mixture variances must be positive")
        if len({len(c[1]) for c in comps}) != 1:
            raise ValueError("components disagree on dimension")
        object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def two_gaussians(cls, separation, weights=(0.5, 0.5), var=1.0):
        """N(0, var) and N(D, var), the separation family of the mixture experiments."""
        return cls(components=((weights[0], (0.0,), (var,)),
                               (weights[1], (float(separation),), (var,))),
                   separation=float(separation))

    @property
    def ndim(self):
        return len(self.components[0][1])

    def pdf(self, points):
        points = np.asarray(points, dtype=float).reshape(len(points), -1)
        out = np.zeros(len(points))
        for w, m, v in self.components:
            out += w * _diag_gaussian(points, np.array(m), np.array(v))
        return out

    def sample(self, n, rng):
        weights = np.array([c[0] for c in self.components])
        labels = rng.choice(len(weights), size=n, p=weights)
        means = np.array([c[1] for c in self.components])
        stds = np.sqrt(np.array([c[2] for c in self.components]))
        z = rng.standard_normal((n, self.ndim))
        return means[labels] + stds[labels] * z

    def default_domain(self, pad=COVERAGE_SIGMAS):
        means = np.array([c[1] for c in self.components])
        stds = np.sqrt(np.array([c[2] for c in self.components]))
        lo = (means - pad * stds).min(axis=0)
        hi = (means + pad * stds).max(axis=0)
        return tuple(zip(lo.tolist(), hi.tolist()))


def mixture_density(spec: MixtureSpec, domain, shape) -> GridDensity:
    domain, shape = _as_axes(domain, shape, d=spec.ndim)
    for _, m, v in spec.components:
        _check_coverage(np.array(m), np.sqrt(np.array(v)), domain)
    grid = GridDensity(domain=domain, shape=shape, rho=np.ones(shape))
    return _finish(spec.pdf(grid.points()), domain, shape)


def uniform_density(domain, shape) -> GridDensity:
    domain, shape = _as_axes(domain, shape)
    return _finish(np.ones(shape), domain, shape)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """``N x d`` sample matrix with optional nonnegative weights summing to one."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise InvalidSamples("points must be an N x d matrix")
        if len(pts) < 2:
            raise InvalidSamples("need at least 2 samples")
        if not np.all(np.isfinite(pts)):
            raise InvalidSamples("samples contain non-finite entries")
        object.__setattr__(self, "points", _frozen(pts))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.shape != (len(pts),) or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidSamples("weights must be a nonnegative N-vector")
            if abs(w.sum() - 1.0) > 1e-9:
                raise InvalidSamples("weights must sum to 1")
            object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    def normalized_weights(self):
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return np.asarray(self.weights)

    def scaled(self, s):
        return SampleSet(self.points * s, self.weights)


def silverman_bandwidth(samples: SampleSet) -> np.ndarray:
    """Per-axis rule-of-thumb bandwidth 0.9 min(std, IQR/1.34) n^(-1/5)."""
    x = samples.points
    std = x.std(axis=0, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    spread = np.minimum(std, (q75 - q25) / 1.34)
    spread = np.where(spread > 0, spread, std)
    return 0.9 * spread * samples.n ** (-1.0 / (samples.d + 4))


def smooth_samples(samples: SampleSet, bandwidth, domain, shape,
                   chunk: int = 4096) -> GridDensity:
    """Gaussian kernel density estimate of ``samples`` evaluated on a grid.

    The kernel is separable, so the estimate is ``Kx diag(w) Ky^T`` evaluated
    chunk by chunk over samples.
    """
    if samples.d > MAX_GRID_DIM:
        raise DimensionTooHigh(
            f"grid smoothing supports d <= {MAX_GRID_DIM}, got d={samples.d}; "
            "use the sample-based estimators in funcgan.poincare")
    bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (samples.d,))
    if np.any(bw <= 0):
        raise ValueError("bandwidth must be positive")
    domain, shape = _as_axes(domain, shape, d=samples.d)
    grid = GridDensity(domain=domain, shape=shape, rho=np.ones(shape))
    axes = grid.axes
    w = samples.normalized_weights()
    x = samples.points
    norm = 1.0 / np.sqrt(2 * np.pi * bw ** 2)
    acc = np.zeros(shape)
    for start in range(0, samples.n, chunk):
        sl = slice(start, start + chunk)
        ks = [norm[a] * np.exp(-0.5 * ((axes[a][:, None] - x[sl, a][None, :]) / bw[a]) ** 2)
              for a in range(samples.d)]
        if samples.d == 1:
            acc += ks[0] @ w[sl]
        else:
            acc += (ks[0] * w[sl]) @ ks[1].T
    return _finish(acc, domain, shape)
