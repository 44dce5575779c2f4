"""Agreement of maps with annotation masks, and overlap of maps across classes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attribution import compute_map
from .backend import TorchClassifier
from .consistency import DEFAULT_CLAMP, ClampConfig, consistency_score, jsd, pearson
from .core import AnnotationMask, AttributionMap, as_values
from .errors import ValidationError


@dataclass(frozen=True)
class AlignmentResult:
    method_id: str
    pearson: float
    jsd: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"method_id": self.method_id, "pearson": self.pearson, "jsd": self.jsd,
                "degenerate": self.degenerate}


@dataclass(frozen=True, eq=False)
class ClassSharingResult:
    method_id: str
    class_ids: list
    mean_pairwise_pearson: float
    per_pair: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ClassSharingResult):
            return NotImplemented
        return (self.method_id == other.method_id and list(self.class_ids) == list(other.class_ids)
                and np.array_equal(self.mean_pairwise_pearson, other.mean_pairwise_pearson, equal_nan=True)
                and np.array_equal(self.per_pair, other.per_pair, equal_nan=True))

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "method_id": self.method_id,
            "class_ids": [int(c) for c in self.class_ids],
            "mean_pairwise_pearson": _json_float(self.mean_pairwise_pearson),
            "per_pair": [[_json_float(v) for v in row] for row in self.per_pair],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSharingResult":
        per_pair = np.array([[np.nan if v is None else v for v in row] for row in d["per_pair"]],
                            dtype=np.float64)
        mean = d["mean_pairwise_pearson"]
        return cls(d["method_id"], list(d["class_ids"]), float("nan") if mean is None else mean, per_pair)


def _json_float(v: float):
    return None if np.isnan(v) else float(v)


def annotation_alignment(amap, mask, clamp: ClampConfig = DEFAULT_CLAMP,
                         method_id: str | None = None) -> AlignmentResult:
    """Pearson and JSD between a map and a binary mask read as a {0,1} map.

    Either argument may be the mask; both metrics are symmetric.
    """
    if method_id is None:
        method_id = amap.method_id if isinstance(amap, AttributionMap) else "raw"
    r = pearson(amap, mask)
    d = jsd(amap, mask, clamp)
    return AlignmentResult(method_id, r.value, d.value, r.degenerate)


def cross_class_maps(model: TorchClassifier, image, method_id: str, class_ids: Sequence[int],
                     **method_kwargs) -> list[AttributionMap]:
    """One map per requested target class, same method and image."""
    class_ids = [int(c) for c in class_ids]
    if not class_ids:
        raise ValidationError("class_ids must be non-empty")
    if len(set(class_ids)) != len(class_ids):
        raise ValidationError(f"class_ids must be distinct, got {class_ids}")
    for c in class_ids:
        model._check_class(c)
    return [compute_map(method_id, model, image, c, **method_kwargs) for c in class_ids]


def feature_sharing_score(maps: Sequence, method_id: str | None = None,
                          class_ids: Sequence[int] | None = None) -> ClassSharingResult:
    """Mean pairwise Pearson among one method's maps for different classes.

    High values mean the classes are explained by the same regions. Degenerate
    pairs are left as NaN and skipped in the mean.
    """
    maps = list(maps)
    if len(maps) < 2:
        raise ValidationError("feature sharing needs at least two maps")
    m = len(maps)
    per_pair = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            s = pearson(maps[i], maps[j])
            per_pair[i, j] = per_pair[j, i] = np.nan if s.degenerate else s.value
    if method_id is None:
        method_id = maps[0].method_id if isinstance(maps[0], AttributionMap) else "raw"
    if class_ids is None:
        class_ids = [mp.target_class if isinstance(mp, AttributionMap) else k for k, mp in enumerate(maps)]
    return ClassSharingResult(method_id, list(class_ids), consistency_score(per_pair), per_pair)


def shuffled_masks(mask, count: int, seed: int = 0) -> list[AnnotationMask]:
    """Masks with the same number of ones at seeded random positions."""
    values, _ = as_values(mask)
    rng = np.random.default_rng(seed)
    flat = values.ravel()
    return [AnnotationMask(rng.permutation(flat).reshape(values.shape).astype(np.uint8), source="shuffled")
            for _ in range(count)]

