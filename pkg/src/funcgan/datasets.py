"""Dataset manipulations: image augmentations, likelihood-based instance
selection, and scans that track the estimated xi_min across them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg as sla
from scipy.ndimage import map_coordinates
from scipy.stats import spearmanr

from .errors import FuncganError, InvalidSamples, SingularCovariance, UnknownKind
from .measure import MixtureSpec, SampleSet
from .poincare import estimate

KINDS = ("translation", "zoomin", "zoomout", "cutout", "brightness", "colorshift")
SAMPLE_RULES = ("uniform", "max")


def derive_seed(seed: int, *key: int) -> np.random.SeedSequence:
    """Counter-based child seed: independent of how many siblings are drawn."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


@dataclass(frozen=True)
class AugmentationConfig:
    """``strength`` is lambda in [0, 1]; each image draws ``s ~ U[0, lambda]``
    (``sample_rule="max"`` forces ``s = lambda``)."""

    kind: str
    strength: float
    seed: int = 0
    sample_rule: str = "uniform"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown augmentation {self.kind!r}; choose from {', '.join(KINDS)}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must lie in [0, 1], got {self.strength}")
        if self.sample_rule not in SAMPLE_RULES:
            raise ValueError(f"sample_rule must be one of {SAMPLE_RULES}")

    @property
    def label(self):
        return self.kind, self.strength


@dataclass(frozen=True)
class InstanceSelectionConfig:
    quantile: float
    feature_source: str = "raw-flatten"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.quantile < 1.0:
            raise ValueError(f"quantile must lie in [0, 1), got {self.quantile}")
        if self.feature_source not in ("raw-flatten", "external"):
            raise ValueError("feature_source is 'raw-flatten' or 'external'")

    @property
    def label(self):
        return "instance_selection", self.quantile


@dataclass(frozen=True, eq=False)
class ImageTensorSet:
    """``N x C x H x W`` float images with values in [0, 1]."""

    data: np.ndarray
    layout: str = "NCHW"

    def __post_init__(self):
        x = np.asarray(self.data, dtype=float)
        if x.ndim != 4 or x.shape[0] < 1:
            raise InvalidSamples(f"images must be a nonempty N x C x H x W array, got {x.shape}")
        if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
            raise InvalidSamples("image values must be finite and lie in [0, 1]")
        x = x.copy()
        x.flags.writeable = False
        object.__setattr__(self, "data", x)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def image_shape(self):
        return self.data.shape[1:]

    def flatten(self) -> SampleSet:
        return SampleSet(self.data.reshape(self.n, -1))

    def subset(self, idx):
        return ImageTensorSet(self.data[np.asarray(idx)], self.layout)


# -- augmentations -----------------------------------------------------------

def _resize(img, out_h, out_w):
    """Bilinear resize of a ``C x h x w`` image, corners aligned."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    rows = np.linspace(0, h - 1, out_h)
    cols = np.linspace(0, w - 1, out_w)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([map_coordinates(img[k], [rr, cc], order=1, mode="nearest")
                     for k in range(c)])


def _translation(img, s, rng):
    _, h, w = img.shape
    reach = int(math.floor(s * min(h, w) / 2))
    dy, dx = rng.integers(-reach, reach + 1, size=2)
    out = np.zeros_like(img)
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[:, yd, xd] = img[:, ys, xs]
    return out


def _zoomin(img, s, rng):
    _, h, w = img.shape
    ch, cw = max(1, round((1 - s) * h)), max(1, round((1 - s) * w))
    top, left = (h - ch) // 2, (w - cw) // 2
    return _resize(img[:, top:top + ch, left:left + cw], h, w)


def _zoomout(img, s, rng):
    _, h, w = img.shape
    sh, sw = max(1, round((1 - s) * h)), max(1, round((1 - s) * w))
    out = np.zeros_like(img)
    top, left = (h - sh) // 2, (w - sw) // 2
    out[:, top:top + sh, left:left + sw] = _resize(img, sh, sw)
    return out


def _cutout(img, s, rng):
    _, h, w = img.shape
    side = int(round(s * min(h, w)))
    out = img.copy()
    if side == 0:
        return out
    top = rng.integers(0, h - side + 1)
    left = rng.integers(0, w - side + 1)
    out[:, top:top + side, left:left + side] = 0.0
    return out


def _brightness(img, s, rng):
    return img + s * rng.choice((-1.0, 1.0))


def _colorshift(img, s, rng):
    return img + rng.uniform(-s, s, size=(img.shape[0], 1, 1))


_TRANSFORMS = {"translation": _translation, "zoomin": _zoomin, "zoomout": _zoomout,
               "cutout": _cutout, "brightness": _brightness, "colorshift": _colorshift}


def augment(images: ImageTensorSet, config: AugmentationConfig, *,
            return_strengths: bool = False):
    """Apply ``config.kind`` to every image with its own strength and stream.

    Image ``i`` uses the child seed ``(config.seed, i)``, so results do not
    depend on batch composition. Zero strength returns the image untouched.
    """
    fn = _TRANSFORMS[config.kind]
    out = np.empty_like(images.data)
    strengths = np.empty(images.n)
    for i in range(images.n):
        rng = np.random.default_rng(derive_seed(config.seed, i))
        s = config.strength if config.sample_rule == "max" else rng.uniform(0.0, config.strength)
        strengths[i] = s
        img = images.data[i]
        out[i] = img if s == 0.0 else np.clip(fn(img, s, rng), 0.0, 1.0)
    result = ImageTensorSet(out, images.layout)
    return (result, strengths) if return_strengths else result


# -- instance selection --------------------------------------------------------

def gaussian_log_likelihood(features: SampleSet, loading: float = 1e-6) -> np.ndarray:
    """Per-row log-likelihood under a Gaussian fit with diagonal loading
    ``loading * trace(cov) / d``."""
    x = features.points
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    d = x.shape[1]
    eps = loading * max(np.trace(cov) / d, np.finfo(float).tiny)
    try:
        chol = sla.cho_factor(cov + eps * np.eye(d), lower=True)
    except sla.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    maha = np.einsum("ij,ij->i", xc, sla.cho_solve(chol, xc.T).T)
    logdet = 2.0 * np.log(np.diag(chol[0])).sum()
    return -0.5 * (maha + logdet + d * np.log(2 * np.pi))


def select_indices(features: SampleSet, quantile: float) -> np.ndarray:
    """Indices (ascending) of the ``ceil(N (1 - quantile))`` most likely rows."""
    n = features.n
    keep = int(math.ceil(n * (1.0 - quantile) - 1e-9))
    if quantile == 0.0:
        return np.arange(n)
    ll = gaussian_log_likelihood(features)
    order = np.argsort(-ll, kind="stable")
    return np.sort(order[:keep])


def instance_select(features: SampleSet | None, images: ImageTensorSet,
                    config: InstanceSelectionConfig) -> ImageTensorSet:
    """Drop the bottom ``quantile`` of images by feature log-likelihood."""
    if features is None:
        features = images.flatten()
    if features.n != images.n:
        raise InvalidSamples(f"{features.n} feature rows for {images.n} images")
    if config.quantile == 0.0:
        return images
    return images.subset(select_indices(features, config.quantile))


# -- scans ---------------------------------------------------------------------

@dataclass(frozen=True)
class ScanRow:
    kind: str
    param: float
    xi_hat: float
    xi_norm: float
    n: int
    error: str = ""


@dataclass(frozen=True, eq=False)
class ScanReport:
    rows: tuple
    baseline_xi: float
    rank_correlation: float | None = None
    estimator: str = "graph"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.baseline_xi > 0:
            raise ValueError("baseline xi must be positive")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def with_scores(self, scores) -> "ScanReport":
        """Attach the Spearman correlation between ``xi_hat`` and external scores."""
        return replace(self, rank_correlation=spearman(self.column("xi_hat"), scores))

    def as_records(self):
        return [asdict(r) for r in self.rows]


def spearman(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("rank correlation needs two equal-length series of length >= 2")
    ok = np.isfinite(a) & np.isfinite(b)
    if ok.sum() < 2:
        raise ValueError("fewer than two finite pairs")
    return float(spearmanr(a[ok], b[ok]).statistic)


def _row(label, result_fn, baseline):
    kind, param = label
    try:
        est, n = result_fn()
        return ScanRow(kind, float(param), est.xi_hat, est.xi_hat / baseline, n)
    except FuncganError as exc:
        return ScanRow(kind, float(param), float("nan"), float("nan"), 0,
                       f"{type(exc).__name__}: {exc}")


def connectivity_scan(images: ImageTensorSet, configs, estimator: str = "graph",
                      estimator_config=None, seed: int = 0,
                      features: SampleSet | None = None) -> ScanReport:
    """xi_hat of each transformed dataset, normalized by the untouched baseline.

    Augmentations run on every image with the row's child seed ``(seed, i)``;
    instance selection uses ``features`` (raw pixels when omitted). The
    estimator always sees flattened pixels with the same estimator config, so
    an identity row reproduces the baseline exactly. Estimator failures are
    recorded per row and the scan continues.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("scan needs at least one configuration")
    base = estimate(images.flatten(), estimator, estimator_config)
    rows = []
    for i, cfg in enumerate(configs):
        if isinstance(cfg, AugmentationConfig):
            child = int(derive_seed(seed, i).generate_state(1)[0])
            run = replace(cfg, seed=child)

            def result(run=run):
                out = augment(images, run)
                return estimate(out.flatten(), estimator, estimator_config), out.n
        elif isinstance(cfg, InstanceSelectionConfig):
            def result(cfg=cfg):
                out = instance_select(features, images, cfg)
                return estimate(out.flatten(), estimator, estimator_config), out.n
        else:
            raise TypeError(f"unsupported scan configuration {cfg!r}")
        rows.append(_row(cfg.label, result, base.xi_hat))
    return ScanReport(rows=tuple(rows), baseline_xi=base.xi_hat, estimator=estimator,
                      meta={"seed": seed, "n": images.n})


def separation_scan(separations, n: int = 10000, estimator: str = "graph",
                    estimator_config=None, seed: int = 0) -> ScanReport:
    """xi_hat of two-Gaussian samples over the separations ``D``; the first
    separation is the baseline. Sample draws use child seeds ``(seed, i)``."""
    seps = [float(s) for s in separations]
    rows, baseline = [], None
    for i, D in enumerate(seps):
        rng = np.random.default_rng(derive_seed(seed, i))
        x = SampleSet(MixtureSpec.two_gaussians(D).sample(n, rng))
        if baseline is None:
            baseline = estimate(x, estimator, estimator_config).xi_hat

        def result(x=x):
            return estimate(x, estimator, estimator_config), x.n
        rows.append(_row(("separation", D), result, baseline))
    return ScanReport(rows=tuple(rows), baseline_xi=baseline, estimator=estimator,
                      meta={"seed": seed, "n": n})


def synthetic_outlier_images(n: int = 1000, outlier_frac: float = 0.05,
                             shape=(1, 4, 4), noise: float = 0.05, seed: int = 0):
    """Tight cluster around a smooth template plus far uniform-noise outliers.

    Returns the image set and a boolean outlier mask; outliers occupy the last
    ``round(n * outlier_frac)`` rows.
    """
    rng = np.random.default_rng(seed)
    c, h, w = shape
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    template = 0.5 + 0.2 * np.sin(2 * np.pi * (xx + yy))
    template = np.broadcast_to(template, shape)
    n_out = int(round(n * outlier_frac))
    n_in = n - n_out
    inliers = template + noise * rng.standard_normal((n_in, c, h, w))
    outliers = rng.uniform(0.0, 1.0, size=(n_out, c, h, w))
    data = np.clip(np.concatenate([inliers, outliers]), 0.0, 1.0)
    mask = np.zeros(n, dtype=bool)
    mask[n_in:] = True
    return ImageTensorSet(data), mask
