"""Adaptive timestep policies and sampling-based checks of their conditions.

All timestep functions take states with a trailing state axis, ``x`` of
shape (..., m), and return step sizes of shape (...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np


class PolicyError(ValueError):
    """Invalid policy construction parameters."""


class StateDomainError(ValueError):
    """A state passed to a timestep function is not finite."""


class Mode(str, Enum):
    SCALE_ALL = "scale_all"  # h_delta = delta * min(T, h)
    CAP_MAX = "cap_max"  # h_delta = min(delta * T, h)


class RatioVariant(str, Enum):
    NORM = "norm"  # min(T, |x| / |f|)
    SQUARED = "squared"  # min(T, gamma |x|^2 / |f|^2)


def sumsq(x: np.ndarray) -> np.ndarray:
    """Sum of squares over the trailing axis, accumulated left to right.

    ``np.sum`` picks its summation order from the array layout, so a 1-D
    vector and the same vector as a row of a batch can differ in the last
    bit. A fixed order keeps scalar and batched runs bit-identical.
    """
    x = np.asarray(x, dtype=np.float64)
    acc = x[..., 0] * x[..., 0]
    for k in range(1, x.shape[-1]):
        acc = acc + x[..., k] * x[..., k]
    return acc


def norm(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the trailing axis."""
    return np.sqrt(sumsq(x))


@dataclass(frozen=True)
class GrowthParams:
    """Constants of the one-sided growth and timestep lower-bound conditions.

    ``alpha``/``beta`` bound <x, f(x)> + h(x)|f(x)|^2 / 2 (and |g|^2) by
    alpha |x|^2 + beta; ``xi``, ``zeta``, ``q`` give h(x) >= 1/(xi |x|^q + zeta).
    """

    alpha: float = 0.0
    beta: float = 0.0
    xi: float = 1.0
    zeta: float = 1.0
    q: float = 2.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.xi, self.zeta, self.q)
        if not all(math.isfinite(v) for v in vals):
            raise PolicyError("growth constants must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise PolicyError("alpha and beta must be non-negative")
        if min(self.xi, self.zeta, self.q) <= 0:
            raise PolicyError("xi, zeta and q must be positive")


@dataclass(frozen=True)
class TimestepPolicy:
    """A stability timestep ``base_h`` refined by ``delta`` over horizon T."""

    base_h: Callable[[np.ndarray], np.ndarray]
    delta: float = 1.0
    horizon: float = 1.0
    mode: Mode = Mode.SCALE_ALL
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise PolicyError(f"delta must lie in (0, 1], got {self.delta}")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise PolicyError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "mode", Mode(self.mode))

    def with_delta(self, delta: float) -> "TimestepPolicy":
        return replace(self, delta=float(delta))

    def h(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.base_h(np.asarray(x, dtype=np.float64)), dtype=np.float64)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return h_delta(self, x)


def h_delta(policy: TimestepPolicy, x: np.ndarray) -> np.ndarray:
    """Refined timestep h^delta(x) for the policy's mode."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise StateDomainError("timestep requested at a non-finite state")
    T, delta = policy.horizon, policy.delta
    h = policy.h(x)
    if policy.mode is Mode.SCALE_ALL:
        return delta * np.minimum(T, h)
    return np.minimum(delta * T, h)


def scalar_power_policy(c: float, q: float, T: float = 1.0, delta: float = 1.0) -> TimestepPolicy:
    """h(x) = min(T, |x|^(1-q) / c) for drifts growing like -c sign(x)|x|^q."""
    if not c > 0:
        raise PolicyError(f"c must be positive, got {c}")
    if not q > 1:
        raise PolicyError(f"q must exceed 1, got {q}")
    c, q, T = float(c), float(q), float(T)

    def base_h(x):
        r = norm(x)
        with np.errstate(divide="ignore"):
            return np.minimum(T, r ** (1.0 - q) / c)

    return TimestepPolicy(base_h, delta, T, Mode.SCALE_ALL, name=f"power(c={c:g},q={q:g})")


def ratio_policy(model, gamma: float = 1.0, T: float = 1.0,
                 variant: RatioVariant | str = RatioVariant.NORM, delta: float = 1.0) -> TimestepPolicy:
    """Ratio timesteps for multi-dimensional drifts; T wherever f vanishes.

    NORM suits drifts with <x, f> <= -b |x||f| at large |x|. SQUARED trades
    accuracy against cost through ``gamma``; there is no rule for picking it.
    """
    if not gamma > 0:
        raise PolicyError(f"gamma must be positive, got {gamma}")
    variant = RatioVariant(variant)
    drift = model.drift if hasattr(model, "drift") else model
    gamma, T = float(gamma), float(T)

    if variant is RatioVariant.NORM:
        def base_h(x):
            fx = norm(drift(x))
            with np.errstate(divide="ignore", invalid="ignore"):
                h = norm(x) / fx
            return np.where(fx > 0, np.minimum(T, h), T)
    else:
        def base_h(x):
            f2 = sumsq(drift(x))
            with np.errstate(divide="ignore", invalid="ignore"):
                h = gamma * sumsq(x) / f2
            return np.where(f2 > 0, np.minimum(T, h), T)

    return TimestepPolicy(base_h, delta, T, Mode.SCALE_ALL, name=f"ratio_{variant.value}(gamma={gamma:g})")


def constant_policy(T: float = 1.0, delta: float = 1.0, mode: Mode | str = Mode.SCALE_ALL) -> TimestepPolicy:
    """base_h identically T; ScaleAll then gives the uniform step delta*T."""
    T = float(T)
    return TimestepPolicy(lambda x: np.full(np.shape(x)[:-1], T), delta, T, Mode(mode), name="constant")


@dataclass
class Violation:
    x: np.ndarray
    margin: float  # how far the inequality is broken (> 0)


@dataclass
class CheckReport:
    condition: str
    n_samples: int
    violations: list[Violation]

    @property
    def passed(self) -> bool:
        return not self.violations

    def worst(self) -> Violation | None:
        return max(self.violations, key=lambda v: v.margin, default=None)


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("sample list must be non-empty")
    if not np.all(np.isfinite(x)):
        raise StateDomainError("samples must be finite")
    return x


def _violations(x: np.ndarray, margin: np.ndarray) -> list[Violation]:
    bad = np.flatnonzero(margin > 0)
    return [Violation(x[i].copy(), float(margin[i])) for i in bad]


def check_timestep_assumption(policy: TimestepPolicy, model, params: GrowthParams, samples,
                              rtol: float = 1e-12) -> CheckReport:
    """Check <x,f> + h(x)|f|^2/2 <= alpha|x|^2 + beta at every sample.

    The margin is scaled by the magnitude of the terms so that rounding in
    exactly-cancelling cases (e.g. -|x|^6 + |x|^6/2 + ...) is not reported.
    """
    x = _as_samples(samples)
    f = model.drift(x) if hasattr(model, "drift") else model(x)
    h = policy.h(x)
    xf = np.sum(x * f, axis=-1)
    f2 = np.sum(f * f, axis=-1)
    x2 = np.sum(x * x, axis=-1)
    lhs = xf + 0.5 * h * f2
    rhs = params.alpha * x2 + params.beta
    scale = np.abs(xf) + 0.5 * h * f2 + rhs
    margin = lhs - rhs - rtol * scale
    return CheckReport("timestep", x.shape[0], _violations(x, margin))


def check_lower_bound(policy: TimestepPolicy, params: GrowthParams, samples,
                      rtol: float = 1e-12) -> CheckReport:
    """Check h(x) >= 1 / (xi |x|^q + zeta) at every sample."""
    x = _as_samples(samples)
    h = policy.h(x)
    bound = 1.0 / (params.xi * norm(x) ** params.q + params.zeta)
    margin = bound - h - rtol * bound
    return CheckReport("lower_bound", x.shape[0], _violations(x, margin))


def sample_states(m: int, n: int, radius: float = 1e3, seed: int = 0,
                  grid_points: int = 64) -> np.ndarray:
    """Validation states inside the ball of given radius.

    Random directions with log-uniform radii in [1e-6 r, r], uniform radii in
    [0, r], and a log-spaced radial grid along +/- coordinate axes and the
    diagonal. Returns exactly ``n`` states (the grid takes its share).
    """
    rng = np.random.default_rng(seed)
    axes = [np.eye(m)[i] for i in range(m)] + [np.ones(m) / math.sqrt(m)]
    dirs = np.array([s * a for a in axes for s in (1.0, -1.0)])
    radii = np.concatenate([[0.0], np.geomspace(radius * 1e-6, radius, grid_points - 1)])
    grid = (radii[:, None, None] * dirs[None]).reshape(-1, m)
    grid = grid[: max(0, min(len(grid), n // 2))]
    k = n - len(grid)
    d = rng.standard_normal((k, m))
    d /= np.maximum(norm(d), 1e-300)[:, None]
    half = k // 2
    r = np.concatenate([
        radius * np.exp(rng.uniform(math.log(1e-6), 0.0, half)),
        radius * rng.uniform(0.0, 1.0, k - half),
    ])
    return np.concatenate([grid, d * r[:, None]])
