import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from budgetret.core import (
    BINARY,
    BoundingBox,
    ImageRecord,
    Keypoint,
    QuerySpec,
    UsageError,
    angle_difference,
    euclidean_distance,
    hamming_distance,
    normalize_angle,
)

from oracles import euclid_loop, hamming_loop

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_euclidean_examples():
    v = np.arange(5.0)
    assert euclidean_distance(v, v) == 0.0
    assert euclidean_distance([0, 0], [3, 4]) == 5.0


def test_euclidean_matches_loop():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.uniform(0, 255, (2, 128))
        assert euclidean_distance(a, b) == pytest.approx(euclid_loop(a, b), rel=1e-9)


def test_euclidean_dimension_mismatch():
    with pytest.raises(UsageError):
        euclidean_distance([1, 2], [1, 2, 3])


def test_hamming_examples():
    c = np.array([0b1010, 7], dtype=np.uint8)
    assert hamming_distance(c, c) == 0
    assert hamming_distance(np.array([0b0000], np.uint8), np.array([0b1111], np.uint8)) == 4


def test_hamming_matches_bit_loop():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.integers(0, 256, (2, 32), dtype=np.uint8)
        assert hamming_distance(a, b) == hamming_loop(a, b)


def test_hamming_length_mismatch():
    with pytest.raises(UsageError):
        hamming_distance(np.zeros(4, np.uint8), np.zeros(8, np.uint8))


def test_distance_axioms_on_random_pairs():
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 1, (1000, 16))
    b = rng.uniform(0, 1, (1000, 16))
    ca = rng.integers(0, 256, (1000, 8), dtype=np.uint8)
    cb = rng.integers(0, 256, (1000, 8), dtype=np.uint8)
    for i in range(1000):
        d = euclidean_distance(a[i], b[i])
        assert d == euclidean_distance(b[i], a[i]) and d > 0
        assert euclidean_distance(a[i], a[i]) == 0
        h = hamming_distance(ca[i], cb[i])
        assert h == hamming_distance(cb[i], ca[i]) and 0 <= h <= 64
        assert hamming_distance(ca[i], ca[i]) == 0
        if h == 0:
            assert np.array_equal(ca[i], cb[i])


def test_normalize_angle_examples():
    assert normalize_angle(0.0) == 0.0
    assert normalize_angle(3 * math.pi) == -math.pi
    assert normalize_angle(math.pi) == -math.pi
    assert normalize_angle(-math.pi) == -math.pi


def test_normalize_angle_congruent():
    rng = np.random.default_rng(4)
    theta = rng.uniform(-100, 100, 100)
    out = normalize_angle(theta)
    turns = (out - theta) / (2 * math.pi)
    assert np.all(np.abs(turns - np.round(turns)) < 1e-12)


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_normalize_angle_rejects_non_finite(bad):
    with pytest.raises(UsageError):
        normalize_angle(bad)


@given(finite)
def test_normalize_angle_range_and_idempotent(theta):
    a = normalize_angle(theta)
    assert -math.pi <= a < math.pi
    assert normalize_angle(a) == a


@given(finite, finite)
def test_angle_difference_antisymmetric_mod_2pi(a, b):
    d1 = angle_difference(a, b)
    d2 = angle_difference(b, a)
    assert -math.pi <= d1 < math.pi
    # d1 = -d2 except at the +-pi seam
    assert abs(normalize_angle(d1 + d2)) < 1e-6 or abs(abs(normalize_angle(d1 + d2)) - 2 * math.pi) < 1e-6


def test_keypoint_validation():
    Keypoint(1, 2, 3.0, 0.5, affine=(1.0, 0.0, 1.0))
    with pytest.raises(UsageError):
        Keypoint(0, 0, 0.0, 0.0)
    with pytest.raises(UsageError):
        Keypoint(0, 0, 1.0, math.pi)
    with pytest.raises(UsageError):
        Keypoint(0, 0, 1.0, 0.0, affine=(2.0, 0.0, 2.0))     # det 4
    with pytest.raises(UsageError):
        Keypoint(0, 0, 1.0, 0.0, affine=(-1.0, 0.0, -1.0))   # not positive definite


def _record(n=4, kind="real"):
    rng = np.random.default_rng(0)
    desc = rng.uniform(0, 255, (n, 8)) if kind == "real" else rng.integers(0, 256, (n, 4), dtype=np.uint8)
    return ImageRecord("im", rng.uniform(0, 100, (n, 2)), np.full(n, 2.0), np.zeros(n), rng.random(n), desc, kind)


def test_image_record_invariants():
    rec = _record()
    assert len(rec) == 4 and rec.dimension == 8
    assert _record(kind=BINARY).dimension == 32
    assert [kp.descriptor_id for kp in rec.keypoints] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        rec.xy[0, 0] = 5.0
    with pytest.raises(UsageError):
        ImageRecord("bad", np.zeros((2, 2)), np.ones(2), np.zeros(2), np.zeros(2), np.zeros((3, 8)))
    with pytest.raises(UsageError):
        ImageRecord("bad", np.zeros((2, 2)), np.array([1.0, 0.0]), np.zeros(2), np.zeros(2), np.zeros((2, 8)))


def test_image_record_normalizes_orientation():
    rec = ImageRecord("im", np.zeros((1, 2)), np.ones(1), np.array([3 * math.pi]), np.zeros(1), np.zeros((1, 4)))
    assert rec.orientation[0] == -math.pi


def test_from_keypoints_roundtrip():
    kps = [Keypoint(1.0, 2.0, 3.0, 0.1, 0.5, (1.0, 0.0, 1.0), 0), Keypoint(4.0, 5.0, 6.0, -0.2, 0.7, (1.0, 0.0, 1.0), 1)]
    rec = ImageRecord.from_keypoints("im", kps, np.zeros((2, 4)))
    assert rec.keypoints == kps


def test_bounding_box_and_crop():
    with pytest.raises(UsageError):
        BoundingBox(0, 0, 0, 10)
    rec = ImageRecord("im", np.array([[0, 0], [5, 5], [10, 10], [11, 5]]), np.ones(4), np.zeros(4), np.zeros(4),
                      np.zeros((4, 2)))
    spec = QuerySpec(rec, BoundingBox(0, 0, 10, 10))
    assert len(spec.cropped_image()) == 3  # closed bounds keep the corners
    with pytest.raises(UsageError):
        QuerySpec(rec, budget_n=0)
    with pytest.raises(UsageError):
        QuerySpec(rec, k=0)
