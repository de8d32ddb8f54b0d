import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esmalab.density import (DensityIndex, ball_volume, bin_index, binned_statistic,
                             equal_width_edges, local_density, local_empirical_risk, local_risks,
                             log_ball_volume)
from esmalab.errors import EmptyNeighborhoodError, InvalidInputError
from esmalab.nn import MlpClassifier, forward, softmax_ce_rows


def brute_force_count(X, y, j, x0, r):
    c = 0
    for p, label in zip(X, y):
        if label == j and math.fsum((a - b) ** 2 for a, b in zip(p, x0)) <= r * r:
            c += 1
    return c


@pytest.mark.parametrize("d, closed", [
    (1, lambda r: 2 * r),
    (2, lambda r: math.pi * r * r),
    (3, lambda r: 4.0 / 3.0 * math.pi * r ** 3),
])
def test_ball_volume_closed_forms(d, closed):
    for r in (0.1, 0.4, 1.0, 2.5, 600.0):
        assert abs(ball_volume(d, r) - closed(r)) <= 1e-12 * closed(r)


def test_ball_volume_high_dimension():
    assert ball_volume(3072, 600.0) == math.inf
    assert math.isfinite(log_ball_volume(3072, 600.0))
    assert log_ball_volume(3, 2.0) == pytest.approx(math.log(4.0 / 3.0 * math.pi * 8.0), rel=1e-14)
    with pytest.raises(InvalidInputError):
        ball_volume(2, 0.0)


def test_density_example_four_points():
    X = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0]])
    idx = DensityIndex(X, np.zeros(4, dtype=int))
    res = local_density(idx, 0, [0.0, 0.0], 0.2)
    assert res.count == 3
    assert res.density == pytest.approx(3 / (math.pi * 0.04), rel=1e-14)


def test_closed_ball_includes_boundary():
    idx = DensityIndex(np.array([[0.0, 0.0]]), [0])
    assert local_density(idx, 0, [3.0, 4.0], 5.0).count == 1
    assert local_density(idx, 0, [3.0, 4.0], 4.999999).count == 0


def test_other_class_points_are_ignored():
    X = np.array([[0.0, 0.0], [0.05, 0.0]])
    idx = DensityIndex(X, [0, 1])
    assert local_density(idx, 0, [0.0, 0.0], 1.0).count == 1
    assert local_density(idx, 1, [0.0, 0.0], 1.0).count == 1


def test_matches_brute_force_scan(rng):
    X = rng.standard_normal((300, 2))
    y = rng.integers(3, size=300)
    idx = DensityIndex(X, y)
    queries = rng.uniform(-2.5, 2.5, (200, 2))
    for j in range(3):
        got = idx.counts(j, queries, 0.4)
        expect = [brute_force_count(X, y, j, q, 0.4) for q in queries]
        assert np.array_equal(got, expect)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(0.0, 2.0), st.integers(0, 10_000))
def test_count_monotone_in_radius(r, extra, seed):
    rng = np.random.default_rng(seed)
    idx = DensityIndex(rng.standard_normal((50, 3)), rng.integers(2, size=50), 2)
    q = rng.standard_normal((5, 3))
    for j in range(2):
        assert np.all(idx.counts(j, q, r) <= idx.counts(j, q, r + extra))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_count_invariant_to_translation_and_rotation(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(-20, 20, (40, 2)).astype(float) / 8.0
    y = rng.integers(2, size=40)
    q = rng.integers(-20, 20, (6, 2)).astype(float) / 8.0
    shift = rng.integers(-8, 8, 2) / 4.0
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    a = DensityIndex(X, y, 2)
    b = DensityIndex(X @ rot.T + shift, y, 2)
    for j in range(2):
        # dyadic coordinates make the transformed distances exact
        assert np.array_equal(a.counts(j, q, 0.75), b.counts(j, q @ rot.T + shift, 0.75))


def test_bad_queries_rejected():
    idx = DensityIndex(np.zeros((2, 2)), [0, 1])
    with pytest.raises(InvalidInputError):
        idx.counts(0, np.zeros((1, 3)), 0.5)
    with pytest.raises(InvalidInputError):
        idx.counts(2, np.zeros((1, 2)), 0.5)
    with pytest.raises(InvalidInputError):
        idx.counts(0, np.zeros((1, 2)), 0.0)


def test_local_risk_of_single_neighbour_is_its_loss():
    m = MlpClassifier.init((2, 4, 2), seed=0)
    X = np.array([[0.0, 0.0], [3.0, 3.0]])
    idx = DensityIndex(X, [0, 1])
    expect = softmax_ce_rows(forward(m, X), [0, 1])
    assert np.allclose(local_risks(m, idx, 0.5), expect, rtol=0, atol=0)
    assert local_empirical_risk(m, idx, 0, [0.1, 0.0], 0.5) == expect[0]


def test_local_risk_averages_neighbours(rng):
    m = MlpClassifier.init((2, 4, 2), seed=0)
    X = rng.standard_normal((30, 2))
    y = rng.integers(2, size=30)
    idx = DensityIndex(X, y)
    ids = idx.neighbours(1, X[0], 1.0)
    expect = softmax_ce_rows(forward(m, X[ids]), np.ones(len(ids), dtype=int)).mean()
    assert local_empirical_risk(m, idx, 1, X[0], 1.0) == pytest.approx(expect, rel=1e-15)


def test_empty_neighbourhood_raises():
    idx = DensityIndex(np.zeros((1, 2)), [0])
    with pytest.raises(EmptyNeighborhoodError):
        local_empirical_risk(MlpClassifier.init((2, 2)), idx, 0, [9.0, 9.0], 0.1)


def test_bin_index_edges():
    edges = np.array([0.0, 0.5, 1.0])
    assert list(bin_index([0.0, 0.49, 0.5, 1.0, 1.01, -0.1], edges)) == [0, 0, 1, 1, -1, -1]


def test_binned_statistic_counts_partition(rng):
    keys = rng.uniform(0, 1, 100)
    vals = rng.standard_normal(100)
    stat = binned_statistic(vals, keys, equal_width_edges(keys, 7))
    assert stat.count.sum() == 100
    assert len(list(stat.rows())) == 7
    for k in range(7):
        lo, hi = stat.edges[k], stat.edges[k + 1]
        inside = (keys >= lo) & ((keys < hi) | ((k == 6) & (keys == hi)))
        assert stat.count[k] == inside.sum()
        assert stat.mean[k] == pytest.approx(vals[inside].mean(), rel=1e-12)


def test_empty_bins_are_nan():
    stat = binned_statistic([1.0, 2.0], [0.0, 1.0], np.linspace(0, 1, 4))
    assert stat.empty.tolist() == [False, True, False]
    assert np.isnan(stat.mean[1])
