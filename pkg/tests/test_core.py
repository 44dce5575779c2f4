import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from amaudit.core import (
    AnnotationMask,
    AttributionMap,
    ImageArray,
    bilinear_resize,
    load_annotation,
    load_image,
    load_map,
    normalize_map,
    resize_map,
    save_image,
    save_map,
    sidecar_path,
)
from amaudit.errors import (
    AnnotationChannelError,
    AnnotationMissingError,
    AnnotationShapeError,
    DatasetError,
    ValidationError,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_map([[1, 2], [3, 4]]).values, [[0, 1 / 3], [2 / 3, 1]], atol=1e-15)
    np.testing.assert_allclose(normalize_map([[-1, 0], [1, 3]]).values, [[0, 0.25], [0.5, 1]], atol=1e-15)


def test_normalize_constant_is_flagged_zero():
    m = normalize_map([[5, 5], [5, 5]])
    assert m.degenerate
    np.testing.assert_array_equal(m.values, np.zeros((2, 2)))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_normalize_rejects_non_finite(bad):
    with pytest.raises(ValidationError):
        normalize_map([[0.0, bad], [1.0, 2.0]])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 6), elements=finite), st.floats(0.1, 50), st.floats(-50, 50))
def test_normalize_idempotent_and_affine_invariant(raw, a, b):
    # shifts by b absorb ranges far below b's float resolution
    assume(np.ptp(raw) > 1e-6 * (1 + np.abs(raw).max()))
    m = normalize_map(raw)
    assert m.values.min() == 0.0 and m.values.max() == 1.0
    np.testing.assert_allclose(normalize_map(m.values).values, m.values, atol=1e-12)
    np.testing.assert_allclose(normalize_map(a * raw + b).values, m.values, atol=1e-9)


def test_resize_identity_and_constant():
    m = AttributionMap(np.array([[0.1, 0.9], [0.4, 0.6]]))
    assert resize_map(m, 2, 2) == m
    c = resize_map(AttributionMap(np.full((3, 4), 0.7)), 9, 5)
    np.testing.assert_allclose(c.values, 0.7, atol=1e-15)


def test_resize_row_hand_values():
    # half-pixel centers: output x -> source 0.5x - 0.25, clamped to [0, 1]
    out = resize_map(AttributionMap(np.array([[0.0, 1.0]])), 1, 4).values[0]
    np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0], atol=1e-15)
    assert np.all(np.diff(out) >= 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4, 5), elements=st.floats(0, 1)), st.integers(1, 20), st.integers(1, 20))
def test_bilinear_matches_torch(arr, h, w):
    ref = F.interpolate(torch.from_numpy(arr)[None], size=(h, w), mode="bilinear", align_corners=False)[0]
    np.testing.assert_allclose(bilinear_resize(arr, h, w), ref.numpy(), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(0, 1)), st.integers(1, 12), st.integers(1, 12))
def test_resize_stays_in_input_range(v, h, w):
    out = resize_map(AttributionMap(v), h, w).values
    assert out.min() >= v.min() - 1e-12 and out.max() <= v.max() + 1e-12


def test_value_types_validate():
    with pytest.raises(ValidationError):
        ImageArray(np.full((3, 2, 2), 1.5))
    with pytest.raises(ValidationError):
        AttributionMap(np.array([[0.0, 2.0]]))
    with pytest.raises(ValidationError):
        AnnotationMask(np.array([[0, 2]]))


def test_load_annotation(tmp_path):
    p = tmp_path / "m.png"
    Image.fromarray(np.array([[0, 255], [255, 0]], dtype=np.uint8)).save(p)
    np.testing.assert_array_equal(load_annotation(p).values, [[0, 1], [1, 0]])

    z = tmp_path / "z.png"
    Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(z)
    m = load_annotation(z)
    assert m.empty and m.degenerate

    rgb = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((3, 3, 3), dtype=np.uint8)).save(rgb)
    with pytest.raises(AnnotationChannelError):
        load_annotation(rgb)
    with pytest.raises(AnnotationMissingError):
        load_annotation(tmp_path / "nope.png")
    with pytest.raises(AnnotationShapeError):
        load_annotation(p, expected_shape=(4, 4))


def test_error_codes_are_distinct():
    codes = {AnnotationMissingError.code, AnnotationChannelError.code, AnnotationShapeError.code}
    assert len(codes) == 3


def test_map_roundtrip_16bit(tmp_path):
    rng = np.random.default_rng(0)
    m = normalize_map(rng.random((7, 9)), "gradcam", 2)
    path = save_map(m, tmp_path / "sub" / "gradcam.png", {"image": "a.png"})
    back, meta = load_map(path)
    assert back.method_id == "gradcam" and back.target_class == 2 and meta["image"] == "a.png"
    np.testing.assert_allclose(back.values, m.values, atol=0.5 / 65535 + 1e-15)
    assert sidecar_path(path).is_file()


def test_image_roundtrip_and_corrupt(tmp_path):
    px = np.random.default_rng(1).integers(0, 256, (3, 5, 6)) / 255.0
    save_image(px, tmp_path / "a.png")
    np.testing.assert_allclose(load_image(tmp_path / "a.png").pixels, px, atol=1e-12)
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(DatasetError):
        load_image(tmp_path / "bad.png")
