"""Pixel-wise similarity between attribution maps and its aggregation.

Two metrics: the Pearson correlation of the flattened maps, and a per-pixel
Bernoulli Jensen-Shannon divergence (base 2, so bounded by 1). Maps are
compared per image, then averaged across images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .core import as_values
from .errors import DimensionMismatchError, MissingMapError, ValidationError

PEARSON = "pearson"
JSD = "jsd"
METRIC_KINDS = (PEARSON, JSD)


@dataclass(frozen=True)
class ClampConfig:
    """Pixels are clamped to [epsilon, 1 - epsilon] before any log is taken."""

    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValidationError("epsilon must lie in (0, 0.5)")


DEFAULT_CLAMP = ClampConfig()


@dataclass(frozen=True)
class PairwiseScore:
    metric_kind: str
    value: float
    degenerate: bool = False


def _pair(a, b) -> tuple[np.ndarray, np.ndarray, bool]:
    x, dx = as_values(a)
    y, dy = as_values(b)
    if x.shape != y.shape:
        raise DimensionMismatchError(f"map shapes differ: {x.shape} vs {y.shape}")
    return x.ravel(), y.ravel(), dx or dy


def pearson(a, b) -> PairwiseScore:
    """Sample Pearson correlation over flattened pixels.

    A zero-variance input yields 0.0 with the degenerate flag set.
    """
    x, y, degen = _pair(a, b)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        return PairwiseScore(PEARSON, 0.0, True)
    # sqrt of the product keeps pearson(a, a) exactly 1
    r = float(np.dot(xc, yc)) / np.sqrt(sxx * syy)
    return PairwiseScore(PEARSON, float(np.clip(r, -1.0, 1.0)), degen)


def _bernoulli_kl_terms(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x * np.log2(x / y) + (1.0 - x) * np.log2((1.0 - x) / (1.0 - y))


def kl_bernoulli(x, y, clamp: ClampConfig = DEFAULT_CLAMP) -> float:
    """Mean over pixels of the Bernoulli KL divergence D(x || y), in bits."""
    xv, yv, _ = _pair(x, y)
    eps = clamp.epsilon
    xv = np.clip(xv, eps, 1.0 - eps)
    yv = np.clip(yv, eps, 1.0 - eps)
    return float(max(_bernoulli_kl_terms(xv, yv).mean(), 0.0))


def jsd(a, b, clamp: ClampConfig = DEFAULT_CLAMP) -> PairwiseScore:
    """Bernoulli Jensen-Shannon divergence: 0.5 D(X||M) + 0.5 D(Y||M), M = (X+Y)/2."""
    x, y, degen = _pair(a, b)
    eps = clamp.epsilon
    x = np.clip(x, eps, 1.0 - eps)
    y = np.clip(y, eps, 1.0 - eps)
    m = 0.5 * (x + y)
    # summing the two halves per pixel keeps jsd(a, b) == jsd(b, a) bit-for-bit
    per_pixel = 0.5 * _bernoulli_kl_terms(x, m) + 0.5 * _bernoulli_kl_terms(y, m)
    per_pixel = np.where(x == y, 0.0, per_pixel)
    value = float(np.clip(per_pixel.mean(), 0.0, 1.0))
    return PairwiseScore(JSD, value, degen)


def pairwise_score(metric_kind: str, a, b, clamp: ClampConfig = DEFAULT_CLAMP) -> PairwiseScore:
    if metric_kind == PEARSON:
        return pearson(a, b)
    if metric_kind == JSD:
        return jsd(a, b, clamp)
    raise ValidationError(f"unknown metric kind {metric_kind!r}")


@dataclass(eq=False)
class ConsistencyMatrix:
    """Symmetric m x m matrix of image-averaged pairwise scores.

    ``counts[i, j]`` is the number of images that entered entry (i, j);
    ``excluded[i, j]`` counts images dropped because a map was degenerate.
    Entries with no usable image are NaN.
    """

    method_ids: list[str]
    entries: np.ndarray
    metric_kind: str
    counts: np.ndarray = field(default=None)
    excluded: np.ndarray = field(default=None)

    def __post_init__(self):
        m = len(self.method_ids)
        if m < 2:
            raise ValidationError("a consistency matrix needs at least two methods")
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.shape != (m, m):
            raise ValidationError(f"entries must be {m}x{m}")
        if self.counts is None:
            self.counts = np.zeros((m, m), dtype=int)
        if self.excluded is None:
            self.excluded = np.zeros((m, m), dtype=int)

    def __eq__(self, other):
        if not isinstance(other, ConsistencyMatrix):
            return NotImplemented
        return (self.method_ids == other.method_ids and self.metric_kind == other.metric_kind
                and np.array_equal(self.entries, other.entries, equal_nan=True)
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.excluded, other.excluded))

    def to_dict(self) -> dict:
        return {
            "metric_kind": self.metric_kind,
            "method_ids": list(self.method_ids),
            "entries": [[None if np.isnan(v) else float(v) for v in row] for row in self.entries],
            "counts": self.counts.tolist(),
            "excluded": self.excluded.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConsistencyMatrix":
        entries = np.array([[np.nan if v is None else v for v in row] for row in d["entries"]], dtype=np.float64)
        return cls(list(d["method_ids"]), entries, d["metric_kind"],
                   np.array(d["counts"], dtype=int), np.array(d["excluded"], dtype=int))


def _diagonal(metric_kind: str) -> float:
    return 1.0 if metric_kind == PEARSON else 0.0


def matrix_from_scores(method_ids: Sequence[str], metric_kind: str,
                       per_image: Sequence[Mapping[tuple[int, int], PairwiseScore]]) -> ConsistencyMatrix:
    """Average per-image pair scores (keyed by (i, j), i < j) in image order."""
    m = len(method_ids)
    sums = np.zeros((m, m))
    counts = np.zeros((m, m), dtype=int)
    excluded = np.zeros((m, m), dtype=int)
    for scores in per_image:
        for (i, j), s in scores.items():
            if s.degenerate:
                excluded[i, j] += 1
            else:
                sums[i, j] += s.value
                counts[i, j] += 1
    entries = np.full((m, m), np.nan)
    upper = counts > 0
    entries[upper] = sums[upper] / counts[upper]
    iu = np.triu_indices(m, 1)
    entries[iu[1], iu[0]] = entries[iu]
    counts[iu[1], iu[0]] = counts[iu]
    excluded[iu[1], iu[0]] = excluded[iu]
    np.fill_diagonal(entries, _diagonal(metric_kind))
    np.fill_diagonal(counts, len(per_image))
    return ConsistencyMatrix(list(method_ids), entries, metric_kind, counts, excluded)


def image_pair_scores(maps: Sequence, metric_kind: str,
                      clamp: ClampConfig = DEFAULT_CLAMP) -> dict[tuple[int, int], PairwiseScore]:
    """All i < j pair scores among the maps of one image."""
    return {(i, j): pairwise_score(metric_kind, maps[i], maps[j], clamp)
            for i in range(len(maps)) for j in range(i + 1, len(maps))}


def pairwise_matrix(maps_by_method: Mapping[str, Sequence] | Sequence[tuple[str, Sequence]],
                    metric_kind: str, clamp: ClampConfig = DEFAULT_CLAMP) -> ConsistencyMatrix:
    """Consistency matrix from per-method map lists aligned by image index."""
    items = list(maps_by_method.items()) if isinstance(maps_by_method, Mapping) else list(maps_by_method)
    if len(items) < 2:
        raise ValidationError("pairwise_matrix needs maps from at least two methods")
    method_ids = [mid for mid, _ in items]
    n_images = max(len(maps) for _, maps in items)
    for mid, maps in items:
        for k in range(n_images):
            if k >= len(maps) or maps[k] is None:
                raise MissingMapError(f"method {mid!r} has no map for image {k}")
    per_image = [image_pair_scores([maps[k] for _, maps in items], metric_kind, clamp)
                 for k in range(n_images)]
    return matrix_from_scores(method_ids, metric_kind, per_image)


def consistency_score(matrix: ConsistencyMatrix | np.ndarray) -> float:
    """Mean of the strictly upper-triangular entries; NaN entries are skipped."""
    entries = matrix.entries if isinstance(matrix, ConsistencyMatrix) else np.asarray(matrix, dtype=np.float64)
    m = entries.shape[0]
    if m < 2:
        raise ValidationError("consistency needs at least two methods")
    upper = entries[np.triu_indices(m, 1)]
    upper = upper[~np.isnan(upper)]
    if upper.size == 0:
        return float("nan")
    # exact rational mean, rounded once: {0.2, 0.4, 0.6} gives 0.4, not 0.4 +- 1 ulp
    return float(sum(map(Fraction, upper.tolist()), Fraction(0)) / upper.size)
