import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adem.brownian import BrownianBatch, BrownianDomainError, BrownianPath, increment, sample_at

N = 100_000


def _batch_at(times, seed=0, n=N, d=1):
    """Sample n independent paths at the given times, in query order."""
    b = BrownianBatch(d, seed, np.arange(n))
    rows = np.arange(n)
    return [b.advance(rows, np.full(n, t)) for t in times]


def test_fresh_path_starts_at_zero():
    p = BrownianPath(3, seed=1)
    np.testing.assert_array_equal(sample_at(p, 0.0), np.zeros(3))
    assert len(p) == 1


def test_marginal_variance_within_three_standard_errors():
    (w,) = _batch_at([0.25], seed=2, d=2)
    se = math.sqrt(2 * 0.25 ** 2 / N)
    for k in range(2):
        assert abs(w[:, k].var() - 0.25) < 3 * se
        assert abs(w[:, k].mean()) < 3 * math.sqrt(0.25 / N)


def test_bridge_conditional_moments():
    # fix W_1 = w across paths, then bridge-sample t = 0.3 in between
    w1, t = 0.7, 0.3
    b = BrownianBatch(1, 3, np.arange(N))
    rows = np.arange(N)
    b.values[:, 1, 0] = w1
    b.times[:, 1] = 1.0
    b.count[:] = 2
    mid = b.cursor().advance(rows, np.full(N, t))[:, 0]
    var = t * (1 - t)
    assert abs(mid.mean() - t * w1) < 3 * math.sqrt(var / N)
    assert abs(mid.var() - var) < 3 * math.sqrt(2 * var ** 2 / N)


def test_bridge_midpoint_mean_scalar_path():
    w = 1.3
    vals = []
    for i in range(4000):
        p = BrownianPath(1, seed=4, index=i)
        p._times.append(1.0)
        p._values.append(np.array([w]))
        vals.append(p.sample_at(0.5)[0])
    vals = np.array(vals)
    assert abs(vals.mean() - w / 2) < 3 * math.sqrt(0.25 / vals.size)


def test_increment_covariance_and_disjoint_correlation():
    w2, w7, w9 = _batch_at([0.2, 0.7, 0.9], seed=5, d=2)
    inc = w7 - w2
    cov = np.cov(inc.T)
    se_var = math.sqrt(2 * 0.5 ** 2 / N)
    assert np.all(np.abs(np.diag(cov) - 0.5) < 3 * se_var)
    assert abs(cov[0, 1]) < 3 * 0.5 / math.sqrt(N)
    later = w9 - w7
    r = np.corrcoef(inc[:, 0], later[:, 0])[0, 1]
    assert abs(r) < 3 / math.sqrt(N)


def test_increment_edge_cases():
    p = BrownianPath(2, seed=6)
    np.testing.assert_array_equal(increment(p, 1.0, 1.0), np.zeros(2))
    np.testing.assert_array_equal(increment(p, 0.0, 0.6), sample_at(p, 0.6))
    with pytest.raises(BrownianDomainError):
        increment(p, 0.7, 0.2)


@pytest.mark.parametrize("t", [-1e-9, math.inf, math.nan])
def test_bad_times_rejected(t):
    with pytest.raises(BrownianDomainError):
        BrownianPath(1).sample_at(t)


def test_refinement_consistency():
    p = BrownianPath(2, seed=7)
    p.sample_at(0.0)
    w1 = p.sample_at(1.0)
    p.sample_at(0.5)
    np.testing.assert_array_equal(p.sample_at(1.0), w1)
    times, _ = p.knots
    assert np.all(np.diff(times) > 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 5, allow_nan=False), min_size=1, max_size=30), st.integers(0, 2**32))
def test_memoization_and_replay(times, seed):
    p = BrownianPath(2, seed=seed, index=3)
    first = [p.sample_at(t) for t in times]
    again = [p.sample_at(t) for t in times]
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a, b)
    q = BrownianPath(2, seed=seed, index=3)
    for a, t in zip(first, times):
        np.testing.assert_array_equal(q.sample_at(t), a)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-6, 2.0), min_size=1, max_size=12, unique=True),
       st.lists(st.floats(1e-6, 2.0), min_size=1, max_size=25, unique=True))
def test_batch_cursor_matches_scalar_path(coarse, fine):
    coarse, fine = sorted(coarse), sorted(fine)
    idx = np.array([0, 5, 9])
    b = BrownianBatch(2, 11, idx)
    rows = np.arange(3)
    got_c = [b.advance(rows, np.full(3, t)) for t in coarse]
    cur = b.cursor()
    got_f = [cur.advance(rows, np.full(3, t)) for t in fine]
    for r, i in enumerate(idx):
        p = BrownianPath(2, 11, int(i))
        for t, w in zip(coarse, got_c):
            np.testing.assert_array_equal(p.sample_at(t), w[r])
        for t, w in zip(fine, got_f):
            np.testing.assert_array_equal(p.sample_at(t), w[r])


def test_batch_rows_independent_of_batch_composition():
    t = np.linspace(0.1, 1.0, 10)
    full = BrownianBatch(1, 12, np.arange(8))
    part = BrownianBatch(1, 12, np.arange(4, 8))
    for s in t:
        a = full.advance(np.arange(8), np.full(8, s))
        b = part.advance(np.arange(4), np.full(4, s))
        np.testing.assert_array_equal(a[4:], b)


def test_batch_rejects_backward_queries():
    b = BrownianBatch(1, 0, [0])
    b.advance(np.array([0]), np.array([0.5]))
    with pytest.raises(BrownianDomainError):
        b.advance(np.array([0]), np.array([0.4]))
    cur = b.cursor()
    cur.advance(np.array([0]), np.array([0.3]))
    with pytest.raises(BrownianDomainError):
        cur.advance(np.array([0]), np.array([0.2]))
