"""Map and image value types, normalization, resizing and file I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .errors import (
    AnnotationChannelError,
    AnnotationMissingError,
    AnnotationShapeError,
    DatasetError,
    ValidationError,
)

UINT16_MAX = 65535


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageArray:
    """Channels x height x width image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[None]
        if px.ndim != 3 or px.shape[1] < 1 or px.shape[2] < 1:
            raise ValidationError(f"image must be CxHxW, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValidationError("image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """Normalized H x W importance grid for one (method, target class).

    ``degenerate`` is set when the raw attribution was constant; such maps are
    all zeros and downstream metrics flag rather than reject them.
    """

    values: np.ndarray
    method_id: str = "raw"
    target_class: int = -1
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValidationError(f"attribution map must be HxW, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValidationError("attribution map values must be finite and in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, AttributionMap):
            return NotImplemented
        return (
            self.method_id == other.method_id
            and self.target_class == other.target_class
            and self.degenerate == other.degenerate
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AnnotationMask:
    """Binary H x W mask of regions marked important (1) by an annotator."""

    values: np.ndarray
    source: str = "expert"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError(f"annotation mask must be HxW, got shape {v.shape}")
        if not np.all((v == 0) | (v == 1)):
            raise ValidationError("annotation mask must be strictly binary")
        object.__setattr__(self, "values", _frozen(v.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def empty(self) -> bool:
        return not self.values.any()

    @property
    def degenerate(self) -> bool:
        # all-zero or all-one: no variance to correlate against
        return bool(self.values.min() == self.values.max())

    def as_map(self) -> AttributionMap:
        return AttributionMap(
            self.values.astype(np.float64),
            method_id=f"annotation:{self.source}",
            degenerate=self.degenerate,
        )


def normalize_map(raw, method_id: str = "raw", target_class: int = -1) -> AttributionMap:
    """Min-max scale a raw attribution grid into [0, 1].

    A constant input yields an all-zero map with ``degenerate=True``.
    """
    r = np.asarray(raw, dtype=np.float64)
    if r.ndim != 2 or r.size == 0:
        raise ValidationError(f"raw attribution must be a non-empty HxW array, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValidationError("raw attribution contains non-finite values")
    lo, hi = r.min(), r.max()
    span = hi - lo
    if span == 0.0 or not np.isfinite(span):
        return AttributionMap(np.zeros_like(r), method_id, target_class, degenerate=True)
    out = (r - lo) / span
    np.clip(out, 0.0, 1.0, out=out)
    return AttributionMap(out, method_id, target_class)


def bilinear_resize(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling of the last two axes with half-pixel centers.

    Sample positions outside the source grid clamp to the border, matching the
    usual ``align_corners=False`` convention of deep-learning frameworks.
    """
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape[-2:]
    if (h, w) == (height, width):
        return a.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, height)
    x0, x1, fx = axis(w, width)
    top = a[..., y0, :][..., x0] * (1 - fx) + a[..., y0, :][..., x1] * fx
    bot = a[..., y1, :][..., x0] * (1 - fx) + a[..., y1, :][..., x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def resize_map(amap: AttributionMap, target_h: int, target_w: int) -> AttributionMap:
    if target_h < 1 or target_w < 1:
        raise ValidationError("target dimensions must be >= 1")
    if amap.shape == (target_h, target_w):
        return amap
    out = np.clip(bilinear_resize(amap.values, target_h, target_w), 0.0, 1.0)
    return AttributionMap(out, amap.method_id, amap.target_class, amap.degenerate)


def load_image(path) -> ImageArray:
    """Read an 8- or 16-bit image file as a CxHxW array scaled to [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / UINT16_MAX
                return ImageArray(arr[None])
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return ImageArray(arr)


def save_image(image: ImageArray | np.ndarray, path) -> None:
    px = image.pixels if isinstance(image, ImageArray) else np.asarray(image)
    u8 = np.clip(np.rint(px * 255.0), 0, 255).astype(np.uint8)
    if u8.shape[0] == 1:
        Image.fromarray(u8[0]).save(path)
    else:
        Image.fromarray(np.ascontiguousarray(u8.transpose(1, 2, 0))).save(path)


def load_annotation(path, expected_shape: tuple[int, int] | None = None,
                    source: str = "expert") -> AnnotationMask:
    """Read a single-channel mask file; any nonzero pixel counts as important."""
    path = Path(path)
    if not path.is_file():
        raise AnnotationMissingError(f"annotation file not found: {path}")
    with Image.open(path) as im:
        bands = im.getbands()
        if len(bands) != 1:
            raise AnnotationChannelError(
                f"annotation must be single-channel, {path} has {len(bands)} ({im.mode})")
        arr = np.asarray(im)
    if expected_shape is not None and tuple(arr.shape) != tuple(expected_shape):
        raise AnnotationShapeError(
            f"annotation {path} is {arr.shape}, paired image is {tuple(expected_shape)}")
    return AnnotationMask((arr != 0).astype(np.uint8), source=source)


def save_annotation(mask: AnnotationMask, path) -> None:
    Image.fromarray((mask.values * 255).astype(np.uint8)).save(path)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_map(amap: AttributionMap, path, metadata: dict[str, Any] | None = None) -> Path:
    """Write a map as a 16-bit grayscale PNG plus a JSON sidecar record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.rint(amap.values * UINT16_MAX).astype(np.uint16)
    Image.fromarray(q).save(path)
    record = {
        "method_id": amap.method_id,
        "target_class": int(amap.target_class),
        "degenerate": bool(amap.degenerate),
        "height": int(amap.shape[0]),
        "width": int(amap.shape[1]),
    }
    record.update(metadata or {})
    sidecar_path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def load_map(path) -> tuple[AttributionMap, dict[str, Any]]:
    path = Path(path)
    with Image.open(path) as im:
        q = np.asarray(im).astype(np.float64)
    meta = json.loads(sidecar_path(path).read_text())
    amap = AttributionMap(q / UINT16_MAX, meta["method_id"], meta["target_class"],
                          meta.get("degenerate", False))
    return amap, meta


def as_values(x) -> tuple[np.ndarray, bool]:
    """Return (float array, degenerate flag) for a map, mask, or array."""
    if isinstance(x, AttributionMap):
        return np.asarray(x.values, dtype=np.float64), bool(x.degenerate)
    if isinstance(x, AnnotationMask):
        return x.values.astype(np.float64), x.degenerate
    v = np.asarray(x, dtype=np.float64)
    return v, bool(v.size == 0 or v.min() == v.max())
