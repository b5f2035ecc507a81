import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from budgetret.core import ImageRecord, UsageError
from budgetret.ranking import rank, rank_anms, rank_random, rank_response, suppression_radii

from oracles import anms_radii


def image(xy, response):
    n = len(response)
    return ImageRecord("im", np.asarray(xy, float).reshape(n, 2), np.ones(n), np.zeros(n), np.asarray(response, float),
                       np.zeros((n, 4)))


def test_random_singleton_and_determinism():
    assert list(rank_random(image([[0, 0]], [1.0]), 3).order) == [0]
    im = image(np.random.default_rng(0).random((5, 2)), np.ones(5))
    assert list(rank_random(im, 7).order) == list(rank_random(im, 7).order)


def test_random_is_uniform():
    n, runs = 10_000, 1000
    im = image(np.zeros((n, 2)), np.zeros(n))
    ranks = np.zeros(n)
    for seed in range(runs):
        order = rank_random(im, seed).order
        pos = np.empty(n)
        pos[order] = np.arange(n)
        ranks += pos
    mean = ranks / runs
    centre = (n - 1) / 2
    # standard error of one index's mean rank under a uniform shuffle
    se = np.sqrt((n * n - 1) / 12 / runs)
    outside = np.abs(mean - centre) > 0.05 * centre
    # a 2.74-sigma band: about 0.6% of indices fall outside by chance alone
    p_out = math.erfc(0.05 * centre / se / math.sqrt(2))
    expected = n * p_out
    assert outside.sum() <= expected + 5 * math.sqrt(expected)
    assert np.all(np.abs(mean - centre) <= 6 * se)
    assert abs(mean.mean() - centre) < 1e-9


def test_response_order():
    assert list(rank_response(image(np.zeros((3, 2)), [1, 3, 2])).order) == [1, 2, 0]
    assert list(rank_response(image(np.zeros((4, 2)), [1, 1, 1, 1])).order) == [0, 1, 2, 3]
    rng = np.random.default_rng(1)
    resp = rng.integers(0, 50, 1000).astype(float)   # plenty of ties
    ref = sorted(range(1000), key=lambda i: (-resp[i], i))
    assert list(rank_response(image(rng.random((1000, 2)), resp)).order) == ref


def test_anms_small_cases():
    r = suppression_radii(np.array([[0.0, 0.0]]), np.array([1.0]))
    assert np.isinf(r[0])
    im = image([[0, 0], [30, 40]], [10.0, 1.0])
    r = suppression_radii(im.xy, im.response)
    assert np.isinf(r[0]) and r[1] == 50.0
    assert list(rank_anms(im).order) == [0, 1]


def test_anms_radii_match_bruteforce():
    rng = np.random.default_rng(2)
    xy = rng.uniform(0, 500, (200, 2))
    resp = rng.uniform(0, 1, 200)
    assert np.array_equal(suppression_radii(xy, resp), anms_radii(xy, resp))


def test_anms_order_rule():
    rng = np.random.default_rng(3)
    xy = rng.integers(0, 20, (60, 2)).astype(float)
    resp = rng.integers(1, 5, 60).astype(float)
    radii = anms_radii(xy, resp)
    ref = sorted(range(60), key=lambda i: (-radii[i], -resp[i], i))
    assert list(rank_anms(image(xy, resp)).order) == ref


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_rankings_are_permutations(n, seed):
    rng = np.random.default_rng(seed)
    im = image(rng.uniform(0, 100, (n, 2)), rng.normal(size=n))
    for strategy in ("rnd", "resp", "anms"):
        order = rank(im, strategy, seed).order
        assert sorted(order.tolist()) == list(range(n))


def test_unknown_strategy():
    with pytest.raises(UsageError):
        rank(image([[0, 0]], [1.0]), "sift")
