"""Insertion and Deletion perturbation curves and their area under the curve.

Deletion walks from the original image toward a baseline by overwriting the
most important pixels first; insertion starts at the baseline and restores
original pixels in the same order. The y-axis is the softmax probability of
the target class, the x-axis the fraction of pixels perturbed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .backend import TorchClassifier
from .core import ImageArray, as_values
from .errors import DimensionMismatchError, ValidationError

INSERTION = "insertion"
DELETION = "deletion"
BLACK = "black"
BLUR = "blur"
DEFAULT_BASELINE = {DELETION: BLACK, INSERTION: BLUR}


@dataclass(frozen=True)
class PerturbationConfig:
    """``baseline_kind=None`` picks black for deletion and blur for insertion."""

    mode: str = DELETION
    num_steps: int = 100
    baseline_kind: str | None = None
    blur_kernel: int = 11
    blur_sigma: float = 5.0

    def __post_init__(self):
        if self.mode not in (INSERTION, DELETION):
            raise ValidationError(f"mode must be insertion or deletion, got {self.mode!r}")
        if self.baseline_kind is None:
            object.__setattr__(self, "baseline_kind", DEFAULT_BASELINE[self.mode])
        if self.baseline_kind not in (BLACK, BLUR):
            raise ValidationError(f"baseline_kind must be black or blur, got {self.baseline_kind!r}")
        if int(self.num_steps) != self.num_steps or self.num_steps < 1:
            raise ValidationError("num_steps must be a positive integer")
        if int(self.blur_kernel) != self.blur_kernel or self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValidationError("blur_kernel must be an odd positive integer")
        if not self.blur_sigma > 0:
            raise ValidationError("blur_sigma must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PerturbationCurve:
    fractions: np.ndarray
    probabilities: np.ndarray
    auc: float
    config: PerturbationConfig

    def __eq__(self, other):
        if not isinstance(other, PerturbationCurve):
            return NotImplemented
        return (self.config == other.config and self.auc == other.auc
                and np.array_equal(self.fractions, other.fractions)
                and np.array_equal(self.probabilities, other.probabilities))

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "fractions": [float(v) for v in self.fractions],
            "probabilities": [float(v) for v in self.probabilities],
            "auc": float(self.auc),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationCurve":
        return cls(np.asarray(d["fractions"], dtype=np.float64),
                   np.asarray(d["probabilities"], dtype=np.float64),
                   float(d["auc"]), PerturbationConfig(**d["config"]))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(pixels: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the last two axes with reflect padding."""
    k = gaussian_kernel(size, sigma)
    half = size // 2
    out = np.asarray(pixels, dtype=np.float64)
    for axis in (-2, -1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (half, half)
        # "symmetric" would repeat the edge pixel; "reflect" mirrors about it
        padded = np.pad(out, pad, mode="reflect" if out.shape[axis] > half else "symmetric")
        n = out.shape[axis]
        out = sum(k[t] * np.take(padded, np.arange(t, t + n), axis=axis) for t in range(size))
    return out


def _pixels(image) -> np.ndarray:
    if isinstance(image, ImageArray):
        return image.pixels
    px = np.asarray(image, dtype=np.float64)
    if px.ndim != 3:
        raise ValidationError(f"expected a CxHxW image, got shape {px.shape}")
    return px


def make_baseline(image, cfg: PerturbationConfig) -> ImageArray:
    px = _pixels(image)
    if cfg.baseline_kind == BLACK:
        return ImageArray(np.zeros_like(px))
    return ImageArray(np.clip(gaussian_blur(px, cfg.blur_kernel, cfg.blur_sigma), 0.0, 1.0))


def pixel_order(amap) -> np.ndarray:
    """Flat row-major pixel indices, most important first; ties keep row-major order."""
    values, _ = as_values(amap)
    return np.argsort(-values.ravel(), kind="stable")


def step_counts(n: int, num_steps: int) -> np.ndarray:
    """Cumulative number of perturbed pixels per step, 0 through n.

    Steps of ceil(n / num_steps) pixels; once all n are perturbed the
    remaining steps would repeat the final image and are dropped.
    """
    chunk = math.ceil(n / num_steps)
    counts = np.minimum(np.arange(num_steps + 1) * chunk, n)
    last = int(np.argmax(counts == n))
    return counts[:last + 1]


def auc(curve_or_fractions, probabilities=None) -> float:
    """Trapezoidal area under a curve over fractions in [0, 1]."""
    if probabilities is None:
        x, y = curve_or_fractions.fractions, curve_or_fractions.probabilities
    else:
        x = np.asarray(curve_or_fractions, dtype=np.float64)
        y = np.asarray(probabilities, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("auc needs matching 1-D x and y with at least two points")
    return float(np.trapezoid(y, x))


def perturbation_curve(model: TorchClassifier, image, amap, target_class: int,
                       cfg: PerturbationConfig | None = None) -> PerturbationCurve:
    cfg = cfg or PerturbationConfig()
    c = model._check_class(target_class)
    px = _pixels(image)
    values, _ = as_values(amap)
    if values.shape != px.shape[1:]:
        raise DimensionMismatchError(f"map shape {values.shape} does not match image {px.shape[1:]}")
    base = make_baseline(px, cfg).pixels
    start, end = (px, base) if cfg.mode == DELETION else (base, px)

    order = pixel_order(values)
    n = order.size
    counts = step_counts(n, cfg.num_steps)
    # rank[p] = position of pixel p in the order; pixel p is switched at step k iff rank < counts[k]
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    rank = rank.reshape(px.shape[1:])

    probs = np.empty(len(counts))
    bs = model.batch_size
    for s in range(0, len(counts), bs):
        switched = rank[None] < counts[s:s + bs, None, None]
        batch = np.where(switched[:, None], end[None], start[None])
        probs[s:s + bs] = model.predict(batch)[:, c]
    fractions = counts / n
    return PerturbationCurve(fractions, probs, auc(fractions, probs), cfg)
