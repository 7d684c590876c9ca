"""Quality metrics on projection images and the weighted fusion score."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .volume import MapImage

ENTROPY_BINS = 256
ENTROPY_MAX = 8.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class DegenerateInputError(ValueError):
    """Raised when a metric cannot be normalized (e.g. all sources constant)."""


def _pixels(img) -> np.ndarray:
    arr = img.pixels if isinstance(img, MapImage) else np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    return arr


def _minmax(arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi > lo:
        return (arr - lo) / (hi - lo)
    return np.zeros_like(arr)


def entropy(img) -> float:
    """Shannon entropy in bits of a 256-bin histogram of the min-max normalized image."""
    arr = _pixels(img)
    if arr.size == 0:
        raise ValueError("entropy of an empty image is undefined")
    norm = _minmax(arr, arr.min(), arr.max())
    bins = np.minimum(np.floor(norm * ENTROPY_BINS).astype(np.int64), ENTROPY_BINS - 1)
    p = np.bincount(bins.ravel(), minlength=ENTROPY_BINS) / arr.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def average_gradient(img) -> float:
    arr = _pixels(img)
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"average gradient needs at least a 2x2 image, got {arr.shape}")
    dx = arr[:-1, 1:] - arr[:-1, :-1]
    dy = arr[1:, :-1] - arr[:-1, :-1]
    return float(np.sqrt((dx * dx + dy * dy) / 2.0).mean())


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(arr: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = g.size // 2
    out = correlate1d(correlate1d(arr, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[half : arr.shape[0] - half, half : arr.shape[1] - half]


def ssim(img_a, img_b) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows.

    Both images are normalized jointly by their common min and max so the
    dynamic range is 1.
    """
    a, b = _pixels(img_a), _pixels(img_b)
    if a.shape != b.shape:
        raise ValueError(f"ssim needs equal dimensions, got {a.shape} and {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    a, b = _minmax(a, lo, hi), _minmax(b, lo, hi)
    c1, c2 = (SSIM_K1 * 1.0) ** 2, (SSIM_K2 * 1.0) ** 2

    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


@dataclass(frozen=True)
class MetricWeights:
    lambda_avg: float = 0.6
    lambda_en: float = 0.3
    lambda_ssim: float = 0.1

    def __post_init__(self):
        values = self.as_tuple()
        if any(v < 0 or not np.isfinite(v) for v in values):
            raise ValueError(f"metric weights must be finite and non-negative, got {values}")
        if not any(v > 0 for v in values):
            raise ValueError("at least one metric weight must be positive")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda_avg, self.lambda_en, self.lambda_ssim)

    @classmethod
    def parse(cls, text: str) -> MetricWeights:
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"weights need three values avg,en,ssim; got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class EvaluationReport:
    l_avg: float
    l_en: float
    l_ssim: float
    norm_avg: float
    norm_en: float
    norm_ssim: float
    weights: MetricWeights
    total: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


def joint_score(fused_map, source_maps, weights: MetricWeights = MetricWeights()) -> EvaluationReport:
    """Weighted combination of normalized AVG, EN and mean SSIM against the sources.

    AVG is divided by the largest source AVG and may exceed 1 when the fused
    image is sharper than every source. EN is divided by 8 bits.
    """
    fused = _pixels(fused_map)
    sources = [_pixels(m) for m in source_maps]
    if not sources:
        raise ValueError("joint_score needs at least one source map")
    for s in sources:
        if s.shape != fused.shape:
            raise ValueError(f"source map shape {s.shape} differs from fused {fused.shape}")
    avg_ref = max(average_gradient(s) for s in sources)
    if avg_ref == 0.0:
        raise DegenerateInputError("all source maps are constant; average gradient cannot be normalized")

    l_avg = average_gradient(fused)
    l_en = entropy(fused)
    l_ssim = float(np.mean([ssim(fused, s) for s in sources]))
    norm = (l_avg / avg_ref, l_en / ENTROPY_MAX, l_ssim)
    total = float(np.dot(weights.as_tuple(), norm))
    return EvaluationReport(l_avg, l_en, l_ssim, *norm, weights=weights, total=total)
