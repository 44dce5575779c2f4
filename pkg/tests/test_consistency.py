import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amaudit.consistency import (
    ClampConfig,
    ConsistencyMatrix,
    consistency_score,
    jsd,
    kl_bernoulli,
    pairwise_matrix,
    pearson,
)
from amaudit.core import AttributionMap, normalize_map
from amaudit.errors import DimensionMismatchError, MissingMapError, ValidationError
from oracles import EPS, naive_jsd, naive_kl, naive_matrix, naive_pearson


def _random_map(rng, shape):
    return normalize_map(rng.random(shape))


# -- examples --------------------------------------------------------------

def test_pearson_examples():
    a = np.array([[0.0, 0.5], [0.5, 1.0]])
    b = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert pearson(a, b).value == pytest.approx(0.70711, abs=1e-5)
    assert pearson(a, a).value == pytest.approx(1.0, abs=1e-9)
    assert pearson(a, 1 - a).value == pytest.approx(-1.0, abs=1e-9)


def test_pearson_degenerate_flag():
    s = pearson(np.zeros((3, 3)), np.eye(3))
    assert s.degenerate and s.value == 0.0


def test_kl_examples():
    assert kl_bernoulli([[0.75]], [[0.5]]) == pytest.approx(0.75 * math.log2(1.5) + 0.25 * math.log2(0.5), abs=1e-12)
    assert kl_bernoulli([[0.75]], [[0.5]]) == pytest.approx(0.18872, abs=1e-5)
    x = np.array([[0.3, 0.8]])
    assert kl_bernoulli(x, x) == pytest.approx(0.0, abs=1e-12)
    big = kl_bernoulli([[1.0]], [[0.0]])
    assert big == pytest.approx((1 - EPS) * math.log2((1 - EPS) / EPS) + EPS * math.log2(EPS / (1 - EPS)), rel=1e-12)
    assert big > 15


def test_kl_is_asymmetric():
    x = np.array([[0.9, 0.2]])
    y = np.array([[0.5, 0.5]])
    assert abs(kl_bernoulli(x, y) - kl_bernoulli(y, x)) > 1e-3


def test_jsd_examples():
    assert jsd([[0.75]], [[0.25]]).value == pytest.approx(0.18872, abs=1e-5)
    assert jsd(np.ones((2, 2)), np.zeros((2, 2))).value == pytest.approx(1.0, abs=1e-4)
    a = np.array([[0.1, 0.6]])
    assert jsd(a, a).value == 0.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        pearson(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(DimensionMismatchError):
        jsd(np.zeros((2, 2)), np.zeros((3, 2)))


def test_clamp_config_range():
    for bad in (0.0, 0.5, -1.0):
        with pytest.raises(ValidationError):
            ClampConfig(bad)


def test_consistency_score_examples():
    m = np.array([[1.0, 0.2, 0.4], [0.2, 1.0, 0.6], [0.4, 0.6, 1.0]])
    assert consistency_score(m) == 0.4
    assert consistency_score(np.ones((4, 4))) == 1.0
    assert consistency_score(np.eye(3)) == 0.0


def test_identical_maps_give_unit_matrix(rng):
    maps = [_random_map(rng, (5, 5)) for _ in range(3)]
    cm = pairwise_matrix({"a": maps, "b": maps}, "pearson")
    np.testing.assert_array_equal(cm.entries, np.ones((2, 2)))
    assert consistency_score(cm) == 1.0


def test_matrix_symmetric_with_exact_diagonal(rng):
    maps = {k: [_random_map(rng, (6, 6)) for _ in range(3)] for k in "abcd"}
    for kind, diag in (("pearson", 1.0), ("jsd", 0.0)):
        cm = pairwise_matrix(maps, kind)
        np.testing.assert_array_equal(cm.entries, cm.entries.T)
        np.testing.assert_array_equal(np.diag(cm.entries), diag)


def test_matrix_matches_brute_force_small(rng):
    maps = {k: [_random_map(rng, (2, 2)) for _ in range(2)] for k in "xyz"}
    for kind in ("pearson", "jsd"):
        np.testing.assert_allclose(pairwise_matrix(maps, kind).entries, naive_matrix(maps, kind), atol=1e-9)


def test_missing_map_is_an_error(rng):
    with pytest.raises(MissingMapError):
        pairwise_matrix({"a": [_random_map(rng, (3, 3))], "b": [None]}, "pearson")
    with pytest.raises(MissingMapError):
        pairwise_matrix({"a": [_random_map(rng, (3, 3))] * 2, "b": [_random_map(rng, (3, 3))]}, "jsd")


def test_degenerate_pairs_are_excluded_and_counted(rng):
    good = [_random_map(rng, (4, 4)) for _ in range(3)]
    flat = [good[0], AttributionMap(np.zeros((4, 4)), degenerate=True), good[2]]
    other = [_random_map(rng, (4, 4)) for _ in range(3)]
    cm = pairwise_matrix({"a": flat, "b": other}, "pearson")
    assert cm.excluded[0, 1] == 1 and cm.counts[0, 1] == 2
    expected = (pearson(good[0], other[0]).value + pearson(good[2], other[2]).value) / 2
    assert cm.entries[0, 1] == pytest.approx(expected, abs=1e-15)


def test_matrix_dict_roundtrip(rng):
    maps = {k: [_random_map(rng, (4, 4))] for k in "ab"}
    cm = pairwise_matrix(maps, "jsd")
    assert ConsistencyMatrix.from_dict(cm.to_dict()) == cm


# -- properties ------------------------------------------------------------

# maps as they reach the metrics: min-max normalized, so 0 and 1 always occur
maps8 = arrays(np.float64, (8, 8), elements=st.floats(-1e3, 1e3, allow_subnormal=False)).filter(
    lambda r: np.ptp(r) > 1e-6).map(lambda r: normalize_map(r).values)


@settings(max_examples=100, deadline=None)
@given(maps8, maps8)
def test_vectorized_equals_naive(a, b):
    assert pearson(a, b).value == pytest.approx(naive_pearson(a, b), abs=1e-9)
    assert kl_bernoulli(a, b) == pytest.approx(naive_kl(a, b), abs=1e-9)
    assert jsd(a, b).value == pytest.approx(naive_jsd(a, b), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(maps8, maps8)
def test_metric_symmetry_and_range(a, b):
    assert jsd(a, b).value == jsd(b, a).value
    assert 0.0 <= jsd(a, b).value <= 1.0
    r = pearson(a, b)
    assert r.value == pearson(b, a).value
    assert -1.0 <= r.value <= 1.0


@settings(max_examples=50, deadline=None)
@given(maps8, maps8, st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariance(a, b, scale, shift):
    assert pearson(scale * a + shift, b).value == pytest.approx(pearson(a, b).value, abs=1e-9)
