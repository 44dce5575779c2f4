import math

import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amaudit.backend import TorchClassifier
from amaudit.core import AttributionMap, normalize_map
from amaudit.errors import DimensionMismatchError, ValidationError
from amaudit.faithfulness import (
    PerturbationConfig,
    PerturbationCurve,
    auc,
    gaussian_blur,
    make_baseline,
    perturbation_curve,
    pixel_order,
    step_counts,
)
from amaudit.stubs import constant_stub, sigmoid_score_stub


def direct_blur(img2d, size, sigma):
    """2-D convolution with an explicit outer-product kernel and reflect padding."""
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k2 = np.outer(g, g) / np.outer(g, g).sum()
    half = size // 2
    p = np.pad(img2d, half, mode="reflect")
    out = np.zeros_like(img2d, dtype=np.float64)
    for i in range(img2d.shape[0]):
        for j in range(img2d.shape[1]):
            out[i, j] = (p[i:i + size, j:j + size] * k2).sum()
    return out


def test_black_baseline_is_zero(rng):
    b = make_baseline(rng.random((3, 5, 5)), PerturbationConfig("deletion", baseline_kind="black"))
    np.testing.assert_array_equal(b.pixels, 0.0)


def test_blur_fixes_constants():
    img = np.full((3, 9, 9), 0.37)
    b = make_baseline(img, PerturbationConfig("insertion", baseline_kind="blur"))
    np.testing.assert_allclose(b.pixels, 0.37, atol=1e-15)


def test_blur_single_pixel_against_direct_convolution():
    img = np.zeros((7, 7))
    img[3, 3] = 1.0
    for size, sigma in ((11, 5.0), (3, 1.0), (5, 0.8)):
        out = gaussian_blur(img[None], size, sigma)[0]
        np.testing.assert_allclose(out, direct_blur(img, size, sigma), atol=1e-14)
        assert out[3, 3] < 1.0
    small = gaussian_blur(img[None], 3, 1.0)[0]
    assert small.sum() == pytest.approx(1.0, abs=1e-12)  # kernel fits inside, nothing reaches the border


def test_pixel_order_examples():
    order = pixel_order(np.array([[0.9, 0.1], [0.5, 0.5]]))
    assert [divmod(int(i), 2) for i in order] == [(0, 0), (1, 0), (1, 1), (0, 1)]
    np.testing.assert_array_equal(pixel_order(np.full((3, 4), 0.2)), np.arange(12))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1)))
def test_pixel_order_matches_naive_sort(v):
    flat = v.ravel().tolist()
    naive = sorted(range(len(flat)), key=lambda i: (-flat[i], i))
    assert pixel_order(v).tolist() == naive


def test_step_counts():
    np.testing.assert_array_equal(step_counts(10, 1), [0, 10])
    np.testing.assert_array_equal(step_counts(10, 4), [0, 3, 6, 9, 10])
    np.testing.assert_array_equal(step_counts(4, 10), [0, 1, 2, 3, 4])
    c = step_counts(4096, 100)
    assert len(c) == 101 and c[-1] == 4096 and np.all(np.diff(c) == np.minimum(41, np.diff(c)))


def test_auc_examples():
    assert auc([0.0, 1.0], [0.0, 1.0]) == 0.5
    assert auc(np.linspace(0, 1, 7), np.full(7, 0.3)) == pytest.approx(0.3, abs=1e-15)
    assert auc([0.0, 0.5, 1.0], [0.2, 0.8, 0.4]) == 0.55


def test_constant_model_gives_flat_curve(rng):
    model = constant_stub(3, (3, 6, 6), logits=[1.0, 0.0, -1.0])
    p_star = float(np.exp(1) / (np.exp(1) + 1 + np.exp(-1)))
    for mode in ("insertion", "deletion"):
        c = perturbation_curve(model, rng.random((3, 6, 6)), normalize_map(rng.random((6, 6))), 0,
                               PerturbationConfig(mode, num_steps=7))
        np.testing.assert_allclose(c.probabilities, p_star, atol=1e-15)
        assert c.auc == pytest.approx(p_star, abs=1e-12)


def test_one_step_deletion_endpoints(rng):
    model = sigmoid_score_stub(rng.normal(size=(1, 5, 5)))
    x = rng.random((1, 5, 5))
    c = perturbation_curve(model, x, normalize_map(rng.random((5, 5))), 0, PerturbationConfig("deletion", 1))
    np.testing.assert_array_equal(c.fractions, [0.0, 1.0])
    np.testing.assert_allclose(c.probabilities, [model.predict(x)[0], model.predict(np.zeros_like(x))[0]], atol=1e-12)


def test_endpoints_and_reverse_assignment(rng):
    model = sigmoid_score_stub(rng.normal(size=(2, 6, 6)))
    x = rng.random((2, 6, 6))
    amap = normalize_map(rng.random((6, 6)))
    for kind in ("black", "blur"):
        base = make_baseline(x, PerturbationConfig("insertion", baseline_kind=kind)).pixels
        dele = perturbation_curve(model, x, amap, 0, PerturbationConfig("deletion", 10, kind))
        ins = perturbation_curve(model, x, amap, 0, PerturbationConfig("insertion", 10, kind))
        # batched and single forward passes may differ in the last bits
        np.testing.assert_allclose([dele.probabilities[0], ins.probabilities[-1]], model.predict(x)[0], atol=1e-12)
        np.testing.assert_allclose([dele.probabilities[-1], ins.probabilities[0]], model.predict(base)[0], atol=1e-12)
        assert dele.fractions[0] == 0.0 and dele.fractions[-1] == 1.0
        assert np.all(np.diff(dele.fractions) > 0)


class _Recorder(nn.Module):
    def __init__(self):
        super().__init__()
        self.features = nn.Identity()
        self.seen = []

    def forward(self, x):
        self.seen.append(x.detach().clone())
        return torch.stack([x.sum(dim=(1, 2, 3)), torch.zeros(len(x), dtype=x.dtype)], dim=1)


def test_cumulative_masking(rng):
    rec = _Recorder()
    model = TorchClassifier(rec, (3, 5, 5), 2, {"features": rec.features}, batch_size=4)
    x = rng.random((3, 5, 5)) + 0.01
    x /= x.max()
    amap = normalize_map(rng.random((5, 5)))
    perturbation_curve(model, x, amap, 0, PerturbationConfig("deletion", 8, "black"))
    steps = torch.cat(rec.seen).numpy()
    zeroed = [(s == 0).all(axis=0) for s in steps]
    order = pixel_order(amap)
    for k, counts in enumerate(step_counts(25, 8)):
        # all channels of exactly the first `counts` pixels in map order are perturbed
        expected = np.zeros(25, dtype=bool)
        expected[order[:counts]] = True
        np.testing.assert_array_equal(zeroed[k].ravel(), expected)
        if k:
            assert np.all(zeroed[k] >= zeroed[k - 1])


def test_ground_truth_order_dominates_pointwise(rng):
    w = rng.random((1, 8, 8))
    model = sigmoid_score_stub(w)
    x = np.ones((1, 8, 8))
    truth = normalize_map(w[0])
    for mode in ("insertion", "deletion"):
        cfg = PerturbationConfig(mode, num_steps=16, baseline_kind="black")
        best = perturbation_curve(model, x, truth, 0, cfg).probabilities
        for _ in range(30):
            other = perturbation_curve(model, x, normalize_map(rng.random((8, 8))), 0, cfg).probabilities
            if mode == "insertion":
                assert np.all(best >= other - 1e-15)
            else:
                assert np.all(best <= other + 1e-15)


def test_determinism(rng):
    model = sigmoid_score_stub(rng.normal(size=(1, 6, 6)))
    x = rng.random((1, 6, 6))
    amap = AttributionMap(np.round(rng.random((6, 6)), 1))  # many ties
    cfg = PerturbationConfig("insertion", 5)
    assert perturbation_curve(model, x, amap, 0, cfg) == perturbation_curve(model, x, amap, 0, cfg)


def test_curve_json_roundtrip(rng):
    model = sigmoid_score_stub(rng.normal(size=(1, 4, 4)))
    c = perturbation_curve(model, rng.random((1, 4, 4)), normalize_map(rng.random((4, 4))), 0,
                           PerturbationConfig("insertion", 3))
    assert PerturbationCurve.from_dict(c.to_dict()) == c


def test_errors(rng):
    model = sigmoid_score_stub(rng.normal(size=(1, 4, 4)))
    with pytest.raises(DimensionMismatchError):
        perturbation_curve(model, rng.random((1, 4, 4)), normalize_map(rng.random((5, 4))), 0)
    for bad in (dict(num_steps=0), dict(blur_kernel=4), dict(blur_sigma=0.0), dict(mode="sideways"),
                dict(baseline_kind="white")):
        with pytest.raises(ValidationError):
            PerturbationConfig(**bad)


def test_default_baselines():
    assert PerturbationConfig("deletion").baseline_kind == "black"
    assert PerturbationConfig("insertion").baseline_kind == "blur"
    assert math.isclose(PerturbationConfig().blur_sigma, 5.0) and PerturbationConfig().blur_kernel == 11
