"""Refinable Brownian paths.

A path is a sorted set of knots (t, W_t). Queries beyond the last knot extend
it with a Gaussian increment; queries strictly between two knots are drawn
from the Brownian bridge between them. Every new knot consumes ``dimension``
normals from the path's own counter-based stream, so values depend only on
(seed, path index, query order).

Two flavours share the same arithmetic:

* :class:`BrownianPath` - one path, arbitrary query order.
* :class:`BrownianBatch` - many paths advanced forward in lockstep, plus
  :class:`BridgeCursor` for replaying a batch at a finer, non-decreasing set
  of times. For the same per-path query sequence both return bit-identical
  values to :class:`BrownianPath`.
"""

from __future__ import annotations

import math
from bisect import bisect_left

import numpy as np

from .rng import standard_normals


class BrownianDomainError(ValueError):
    """Query time negative, non-finite, or intervals given in the wrong order."""


def _check_time(t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t < 0.0:
        raise BrownianDomainError(f"Brownian query time must be finite and >= 0, got {t!r}")
    return t


def _bridge(t, t1, w1, t2, w2, z):
    # shared by scalar and batched paths; keep the expression identical
    s = t - t1
    span = t2 - t1
    mean = w1 + (s / span)[..., None] * (w2 - w1)
    sd = np.sqrt(s * (span - s) / span)
    return mean + sd[..., None] * z


def _extend(t, t1, w1, z):
    return w1 + np.sqrt(t - t1)[..., None] * z


class BrownianPath:
    """A single d-dimensional Brownian path sampled lazily at arbitrary times.

    Args:
        dimension: number of independent components d.
        seed: 64-bit reproducibility token.
        index: path index; selects an independent stream under ``seed``.
    """

    def __init__(self, dimension: int, seed: int = 0, index: int = 0):
        if int(dimension) < 1:
            raise ValueError("dimension must be a positive integer")
        self.dimension = int(dimension)
        self.seed = int(seed)
        self.index = int(index)
        self._times: list[float] = [0.0]
        self._values: list[np.ndarray] = [np.zeros(self.dimension)]
        self._draws = 0

    def __len__(self) -> int:
        return len(self._times)

    @property
    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        """Knot times (n,) and values (n, d), in time order."""
        return np.array(self._times), np.array(self._values)

    def _normals(self) -> np.ndarray:
        idx = np.arange(self._draws, self._draws + self.dimension, dtype=np.uint64)
        self._draws += self.dimension
        return standard_normals(self.seed, self.index, idx)

    def sample_at(self, t: float) -> np.ndarray:
        """Return W_t, drawing and memoizing it if t is not yet a knot."""
        t = _check_time(t)
        i = bisect_left(self._times, t)
        if i < len(self._times) and self._times[i] == t:
            return self._values[i].copy()
        z = self._normals()
        t1, w1 = self._times[i - 1], self._values[i - 1]
        if i == len(self._times):
            w = _extend(np.float64(t), np.float64(t1), w1, z)
        else:
            w = _bridge(np.float64(t), np.float64(t1), w1, np.float64(self._times[i]), self._values[i], z)
        self._times.insert(i, t)
        self._values.insert(i, w)
        return w.copy()

    def increment(self, s: float, t: float) -> np.ndarray:
        """W_t - W_s for s <= t."""
        s, t = _check_time(s), _check_time(t)
        if s > t:
            raise BrownianDomainError(f"increment needs s <= t, got s={s}, t={t}")
        ws = self.sample_at(s)
        return self.sample_at(t) - ws


def sample_at(path: BrownianPath, t: float) -> np.ndarray:
    return path.sample_at(t)


def increment(path: BrownianPath, s: float, t: float) -> np.ndarray:
    return path.increment(s, t)


class BrownianBatch:
    """M independent paths whose knots are appended in increasing time order.

    ``indices`` are the global path indices (stream ids) under ``seed``; the
    batch row for global index i reproduces ``BrownianPath(d, seed, i)``.
    """

    def __init__(self, dimension: int, seed: int, indices, capacity: int = 64):
        self.dimension = int(dimension)
        self.seed = int(seed)
        self.indices = np.asarray(indices, dtype=np.uint64)
        n = self.indices.size
        self.draws = np.zeros(n, dtype=np.uint64)
        self.count = np.ones(n, dtype=np.int64)
        self.times = np.zeros((n, max(capacity, 2)))
        self.values = np.zeros((n, max(capacity, 2), self.dimension))

    def __len__(self) -> int:
        return self.indices.size

    def normals(self, rows: np.ndarray) -> np.ndarray:
        """Next d normals for each of ``rows``; advances their draw counters."""
        offs = np.arange(self.dimension, dtype=np.uint64)
        z = standard_normals(self.seed, self.indices[rows][:, None], self.draws[rows][:, None] + offs)
        self.draws[rows] += np.uint64(self.dimension)
        return z

    def _grow(self, needed: int) -> None:
        cap = self.times.shape[1]
        if needed <= cap:
            return
        new_cap = max(needed, 2 * cap)
        times = np.zeros((len(self), new_cap))
        values = np.zeros((len(self), new_cap, self.dimension))
        times[:, :cap] = self.times
        values[:, :cap] = self.values
        self.times, self.values = times, values

    def last(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pos = self.count[rows] - 1
        return self.times[rows, pos], self.values[rows, pos]

    def advance(self, rows: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Extend ``rows`` forward to times ``t`` (each >= its last knot)."""
        rows = np.asarray(rows, dtype=np.intp)
        t = np.asarray(t, dtype=np.float64)
        t_last, w_last = self.last(rows)
        if np.any(t < t_last) or not np.all(np.isfinite(t)):
            raise BrownianDomainError("BrownianBatch.advance only extends paths forward")
        fresh = t > t_last
        out = w_last.copy()
        if fresh.any():
            r = rows[fresh]
            z = self.normals(r)
            w = _extend(t[fresh], t_last[fresh], w_last[fresh], z)
            self._grow(int(self.count[r].max()) + 1)
            pos = self.count[r]
            self.times[r, pos] = t[fresh]
            self.values[r, pos] = w
            self.count[r] += 1
            out[fresh] = w
        return out

    def cursor(self) -> "BridgeCursor":
        return BridgeCursor(self)


class BridgeCursor:
    """Replays a :class:`BrownianBatch` at non-decreasing per-path times.

    Stored knots are returned exactly; times between stored knots are
    bridge-sampled between the latest known point and the next stored knot.
    Points drawn by the cursor are remembered only as the running left
    anchor, which suffices because queries never go backwards.
    """

    def __init__(self, batch: BrownianBatch):
        self.batch = batch
        n = len(batch)
        self.next_knot = np.ones(n, dtype=np.int64)  # first stored knot not yet passed
        self.last_t = np.zeros(n)
        self.last_w = np.zeros((n, batch.dimension))

    def advance(self, rows: np.ndarray, t: np.ndarray) -> np.ndarray:
        b = self.batch
        rows = np.asarray(rows, dtype=np.intp)
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.last_t[rows]) or not np.all(np.isfinite(t)):
            raise BrownianDomainError("BridgeCursor queries must be non-decreasing")
        cap = b.times.shape[1]
        sub, t_sub = rows, t
        while sub.size:
            j = self.next_knot[sub]
            passed = (j < b.count[sub]) & (b.times[sub, np.minimum(j, cap - 1)] <= t_sub)
            sub, t_sub = sub[passed], t_sub[passed]
            self.next_knot[sub] += 1

        j = self.next_knot[rows]
        left_t, left_w = b.times[rows, j - 1], b.values[rows, j - 1]
        use_last = self.last_t[rows] >= left_t
        left_t = np.where(use_last, self.last_t[rows], left_t)
        left_w = np.where(use_last[:, None], self.last_w[rows], left_w)

        out = left_w.copy()
        fresh = t > left_t
        if fresh.any():
            r = rows[fresh]
            z = b.normals(r)
            jr = j[fresh]
            has_right = jr < b.count[r]
            w = np.empty((r.size, b.dimension))
            ext = ~has_right
            if ext.any():
                w[ext] = _extend(t[fresh][ext], left_t[fresh][ext], left_w[fresh][ext], z[ext])
            if has_right.any():
                rr, jj = r[has_right], jr[has_right]
                w[has_right] = _bridge(
                    t[fresh][has_right],
                    left_t[fresh][has_right],
                    left_w[fresh][has_right],
                    b.times[rr, jj],
                    b.values[rr, jj],
                    z[has_right],
                )
            out[fresh] = w
        self.last_t[rows] = t
        self.last_w[rows] = out
        return out
