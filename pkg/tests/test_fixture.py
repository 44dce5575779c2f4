import numpy as np
import pytest

from amaudit.errors import FixtureError
from amaudit.fixture import (
    IMAGE_SIZE,
    MARGIN,
    PATCH,
    build_synthetic_fixture,
    load_fixture,
    make_dataset,
    quadrant_of,
    quadrant_slices,
)


def test_dataset_is_deterministic():
    a = make_dataset(3, 20)
    b = make_dataset(3, 20)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_masks_mark_exactly_the_class_patch():
    images, labels, masks, brightness = make_dataset(0, 30)
    for img, label, mask, bright in zip(images, labels, masks, brightness):
        assert mask.sum() == PATCH * PATCH
        rows, cols = np.nonzero(mask)
        assert quadrant_of(rows.min(), cols.min()) == label == quadrant_of(rows.max(), cols.max())
        assert bright.argmax() == label
        # the class patch keeps the margin from its quadrant borders
        r, c = quadrant_slices(label)
        assert rows.min() >= r.start + MARGIN and rows.max() < r.stop - MARGIN
        assert cols.min() >= c.start + MARGIN and cols.max() < c.stop - MARGIN


def test_quadrant_indexing():
    half = IMAGE_SIZE // 2
    assert [quadrant_of(0, 0), quadrant_of(0, half), quadrant_of(half, 0), quadrant_of(half, half)] == [0, 1, 2, 3]


def test_accuracy_floor_fails_loudly():
    with pytest.raises(FixtureError):
        build_synthetic_fixture(0, n_train=20, n_test=20, epochs=1, accuracy_floor=1.01)


@pytest.mark.slow
def test_fixture_accuracy_and_roundtrip(fixture, fixture_dir):
    assert fixture.test_accuracy >= 0.95
    back = load_fixture(fixture_dir)
    np.testing.assert_array_equal(back.images, fixture.images)
    np.testing.assert_array_equal(back.masks, fixture.masks)
    np.testing.assert_array_equal(back.labels, fixture.labels)
    assert back.model.fingerprint() == fixture.model.fingerprint()
