"""Time-stepping schemes and path simulation.

Every scheme is a frozen dataclass with two vectorized pieces:

* ``step_size(model, x, t, T)`` - the proposed step h_n for states (k, m);
* ``advance(model, x, h, dW)`` - the one-step map given h_n and dW_n.

:func:`integrate` drives any batch of paths with any noise source exposing
``advance(rows, t) -> W_t``; :func:`simulate` is the single-path wrapper
around it, so one path and a batch of paths run identical arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, ClassVar, Optional

import numpy as np

from .brownian import BrownianPath
from .models import DriftDomainError, SdeModel
from .stepcontrol import TimestepPolicy, h_delta, norm

DIVERGENCE_NORM = 1e300
# A final leftover shorter than this fraction of T is merged into the last step.
FINAL_STEP_SNAP = 1e-10


class SchemeError(RuntimeError):
    """A one-step map could not be completed (e.g. Newton failed)."""


class ImplicitSolverError(SchemeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def project_K(y: np.ndarray, K: float) -> np.ndarray:
    """Radial clamp min(1, K/|y|) y onto the closed ball of radius K."""
    if not K > 0:
        raise ValueError(f"projection radius must be positive, got {K}")
    y = np.asarray(y, dtype=np.float64)
    r = norm(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > K, K / r, 1.0)
    z = y * scale[..., None]
    # rounding can leave |z| an ulp above K; shrink those rows until it is not
    over = norm(z) > K
    while np.any(over):
        z[over] *= 1.0 - 2.0**-52
        over = norm(z) > K
    return z


def _diffuse(g: np.ndarray, dW: np.ndarray) -> np.ndarray:
    # g (k, m, d) @ dW (k, d) in a fixed order; matmul/np.sum pick order by layout
    acc = g[..., 0] * dW[..., None, 0]
    for j in range(1, dW.shape[-1]):
        acc = acc + g[..., j] * dW[..., None, j]
    return acc


# ---------------------------------------------------------------- implicit solve


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-12
    max_iter: int = 50
    max_halvings: int = 20


@dataclass
class NewtonResult:
    y: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray


def _inside(model: SdeModel, y: np.ndarray) -> np.ndarray:
    ok = np.all(np.isfinite(y), axis=-1)
    if model.domain_radius is not None:
        ok &= norm(y) < model.domain_radius
    return ok


def solve_implicit(model: SdeModel, b: np.ndarray, h, opts: NewtonOptions = NewtonOptions()) -> NewtonResult:
    """Solve y - h f(y) = b for a batch (k, m) by damped Newton.

    Convergence test: |y - h f(y) - b| <= tol (1 + |y| + h |f(y)| + |b|), the
    tolerance scaled by the size of the terms being cancelled. A full Newton
    step that leaves the drift's domain or fails to reduce the residual is
    halved up to ``max_halvings`` times; a row where no halving helps stops
    as unconverged.
    """
    b = np.asarray(b, dtype=np.float64)
    k, m = b.shape
    h = np.broadcast_to(np.asarray(h, dtype=np.float64), (k,))
    y = b.copy()
    if model.domain_radius is not None:
        y = project_K(y, 0.5 * model.domain_radius)
    eye = np.eye(m)

    def residual(yy, hh, bb):
        fy = model.drift(yy)
        res = yy - hh[:, None] * fy - bb
        return res, norm(res), 1.0 + norm(yy) + hh * norm(fy) + norm(bb)

    res, rn, scale = residual(y, h, b)
    conv = rn <= opts.tol * scale
    stuck = np.zeros(k, dtype=bool)
    iters = np.zeros(k, dtype=np.int64)
    for _ in range(opts.max_iter):
        act = np.flatnonzero(~conv & ~stuck)
        if act.size == 0:
            break
        ya, ha, ba, rna = y[act], h[act], b[act], rn[act]
        jac = eye - ha[:, None, None] * model.jacobian(ya)
        if m == 1:
            step = -res[act] / jac[:, :, 0]
        else:
            step = -np.linalg.solve(jac, res[act][..., None])[..., 0]
        lam = np.ones(act.size)
        accepted = np.zeros(act.size, dtype=bool)
        for _ in range(opts.max_halvings + 1):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            trial = ya[todo] + lam[todo, None] * step[todo]
            inside = _inside(model, trial)
            if inside.any():
                sel = todo[inside]
                tr, trn, tsc = residual(trial[inside], ha[sel], ba[sel])
                better = trn < rna[sel]
                rows = act[sel[better]]
                y[rows], res[rows], rn[rows], scale[rows] = trial[inside][better], tr[better], trn[better], tsc[better]
                accepted[sel[better]] = True
            lam[todo] *= 0.5
        iters[act] += 1
        conv[act] = rn[act] <= opts.tol * scale[act]
        stuck[act[~accepted]] = True
        stuck &= ~conv
    return NewtonResult(y, conv, iters, rn)


# ---------------------------------------------------------------- scheme specs


@dataclass(frozen=True)
class SchemeSpec:
    """Base class. ``clamp_radius`` projects every new state onto that ball."""

    clamp_radius: Optional[float] = field(default=None, kw_only=True)
    kind: ClassVar[str] = "scheme"

    @property
    def resolution(self) -> float:
        raise NotImplementedError

    def refined(self, factor: float) -> "SchemeSpec":
        raise NotImplementedError

    def step_size(self, model: SdeModel, x: np.ndarray, t: np.ndarray, T: float) -> np.ndarray:
        raise NotImplementedError

    def advance(self, model: SdeModel, x: np.ndarray, h: np.ndarray, dW: np.ndarray):
        """Return (x_new, ok) where ok flags rows whose map succeeded."""
        raise NotImplementedError

    def describe(self) -> dict:
        d = {"scheme": self.kind, "resolution": self.resolution}
        if self.clamp_radius is not None:
            d["clamp_radius"] = self.clamp_radius
        return d


@dataclass(frozen=True)
class _Uniform(SchemeSpec):
    h: float = 0.1

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"timestep must be positive, got {self.h}")
        if self.clamp_radius is not None and not self.clamp_radius > 0:
            raise ValueError("clamp_radius must be positive")

    @property
    def resolution(self) -> float:
        return self.h

    def refined(self, factor: float):
        return replace(self, h=self.h / factor)

    def step_size(self, model, x, t, T):
        return np.full(np.shape(t), self.h)


@dataclass(frozen=True)
class AdaptiveEM(SchemeSpec):
    """Euler-Maruyama with h_n = min(h^delta(X_n), T - t_n)."""

    policy: TimestepPolicy = None
    kind: ClassVar[str] = "adaptive_em"

    def __post_init__(self):
        if self.policy is None:
            raise ValueError("AdaptiveEM needs a timestep policy")
        if self.clamp_radius is not None and not self.clamp_radius > 0:
            raise ValueError("clamp_radius must be positive")

    @property
    def resolution(self) -> float:
        return self.policy.delta

    def refined(self, factor: float):
        return replace(self, policy=self.policy.with_delta(self.policy.delta / factor))

    def step_size(self, model, x, t, T):
        return h_delta(self.policy, x)

    def advance(self, model, x, h, dW):
        return x + model.drift(x) * h[:, None] + _diffuse(model.volatility(x), dW), None


@dataclass(frozen=True)
class UniformEM(_Uniform):
    kind: ClassVar[str] = "uniform_em"

    def advance(self, model, x, h, dW):
        return x + model.drift(x) * h[:, None] + _diffuse(model.volatility(x), dW), None


@dataclass(frozen=True)
class TamedEM(_Uniform):
    """x + f h / (1 + C h |f|) + g dW."""

    C: float = 1.0
    kind: ClassVar[str] = "tamed_em"

    def __post_init__(self):
        super().__post_init__()
        if not self.C > 0:
            raise ValueError(f"taming constant C must be positive, got {self.C}")

    def advance(self, model, x, h, dW):
        f = model.drift(x)
        tamed = f * (h / (1.0 + self.C * h * norm(f)))[:, None]
        return x + tamed + _diffuse(model.volatility(x), dW), None


@dataclass(frozen=True)
class TruncatedEM(_Uniform):
    """EM with f, g evaluated at min(1, K/|x|) x, K = K0 h^(-1/4)."""

    K0: float = 1.0
    level: Optional[float] = None  # fixed K overriding K0 h^(-1/4)
    kind: ClassVar[str] = "truncated_em"

    def __post_init__(self):
        super().__post_init__()
        if not self.K0 > 0:
            raise ValueError(f"K0 must be positive, got {self.K0}")
        if self.level is not None and not self.level > 0:
            raise ValueError(f"truncation level must be positive, got {self.level}")

    @property
    def K(self) -> float:
        return self.level if self.level is not None else self.K0 * self.h ** -0.25

    def advance(self, model, x, h, dW):
        xt = project_K(x, self.K)
        return x + model.drift(xt) * h[:, None] + _diffuse(model.volatility(xt), dW), None


@dataclass(frozen=True)
class BackwardEuler(_Uniform):
    """Drift-implicit: x' = x + f(x') h + g(x) dW."""

    solver: NewtonOptions = NewtonOptions()
    kind: ClassVar[str] = "backward_euler"

    def implicit_rhs(self, model, x, dW):
        return x + _diffuse(model.volatility(x), dW)

    def advance(self, model, x, h, dW):
        sol = solve_implicit(model, self.implicit_rhs(model, x, dW), h, self.solver)
        return sol.y, sol.converged


@dataclass(frozen=True)
class SplitStepBE(_Uniform):
    """x* = x + f(x*) h, then x' = x* + g(x*) dW."""

    solver: NewtonOptions = NewtonOptions()
    kind: ClassVar[str] = "ssbe"

    def implicit_rhs(self, model, x, dW):
        return x

    def advance(self, model, x, h, dW):
        sol = solve_implicit(model, x, h, self.solver)
        return sol.y + _diffuse(model.volatility(sol.y), dW), sol.converged


SCHEMES: dict[str, type[SchemeSpec]] = {
    cls.kind: cls for cls in (AdaptiveEM, UniformEM, TamedEM, TruncatedEM, BackwardEuler, SplitStepBE)
}


def make_scheme(name: str, resolution: float, model: SdeModel, **params) -> SchemeSpec:
    """Build a scheme by name at the given delta (adaptive) or h (uniform).

    The model's clamp radius, if any, is applied unless ``clamp_radius`` is
    passed explicitly.
    """
    try:
        cls = SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}") from None
    params = dict(params)
    params.setdefault("clamp_radius", model.clamp_radius)
    if cls is AdaptiveEM:
        return AdaptiveEM(policy=model.recommended_policy(resolution), **params)
    for key in ("tol", "max_iter", "max_halvings"):
        if key in params:
            opts = params.pop("solver", NewtonOptions())
            params["solver"] = replace(opts, **{key: type(getattr(opts, key))(params.pop(key))})
    return cls(h=resolution, **params)


def scheme_family(name: str, model: SdeModel, **params) -> Callable[[float], SchemeSpec]:
    return lambda resolution: make_scheme(name, resolution, model, **params)


# ---------------------------------------------------------------- integration


@dataclass
class BatchResult:
    """Terminal summary of a batch of simulated paths (one row per path)."""

    x_T: np.ndarray
    t_end: np.ndarray
    steps: np.ndarray
    max_norm: np.ndarray
    diverged: np.ndarray
    divergence_time: np.ndarray
    solver_failed: np.ndarray
    W_T: np.ndarray
    exact_T: Optional[np.ndarray] = None
    exact_max_norm: Optional[np.ndarray] = None
    knots: Optional[list] = None  # per path: (times, states, step_sizes)


def _next_times(scheme, model, x, t, T):
    h = np.asarray(scheme.step_size(model, x, t, T), dtype=np.float64)
    rem = T - t
    final = h >= rem - FINAL_STEP_SNAP * T
    h = np.where(final, rem, h)
    t_new = np.where(final, T, t + h)
    return h, t_new


def integrate(model: SdeModel, scheme: SchemeSpec, noise, n_paths: int, T: Optional[float] = None,
              exact: bool = False, record: bool = False, max_steps: int = 50_000_000) -> BatchResult:
    """Advance ``n_paths`` copies of the model from X0 to T.

    ``noise.advance(rows, t)`` must return W_t for the given rows. Paths that
    produce a non-finite state, leave the ball of radius 1e300, or whose
    implicit solve fails are frozen and flagged as diverged.
    """
    T = float(model.horizon if T is None else T)
    if not T > 0:
        raise ValueError("horizon must be positive")
    m = model.state_dim
    x = np.broadcast_to(model.initial_state, (n_paths, m)).astype(np.float64)
    t = np.zeros(n_paths)
    w = np.zeros((n_paths, model.noise_dim))
    steps = np.zeros(n_paths, dtype=np.int64)
    max_norm = np.full(n_paths, float(norm(model.initial_state)))
    diverged = np.zeros(n_paths, dtype=bool)
    failed = np.zeros(n_paths, dtype=bool)
    div_time = np.full(n_paths, np.nan)
    active = np.ones(n_paths, dtype=bool)
    use_exact = exact and model.exact_solution is not None
    if exact and not use_exact:
        raise ValueError(f"model {model.name!r} has no exact solution")
    if use_exact:
        ex_T = x.copy()
        ex_max = max_norm.copy()
    if record:
        rec_t = [[0.0] for _ in range(n_paths)]
        rec_x = [[x[i].copy()] for i in range(n_paths)]
        rec_h = [[] for _ in range(n_paths)]

    while active.any():
        rows = np.flatnonzero(active)
        xr, tr = x[rows], t[rows]
        h, t_new = _next_times(scheme, model, xr, tr, T)
        w_new = noise.advance(rows, t_new)
        dW = w_new - w[rows]
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                x_new, ok = scheme.advance(model, xr, h, dW)
            except DriftDomainError:
                raise SchemeError(f"{scheme.kind} evaluated the drift of {model.name!r} outside its domain; "
                                  "set clamp_radius") from None
            if scheme.clamp_radius is not None:
                x_new = project_K(x_new, scheme.clamp_radius)
            nrm = norm(x_new)
        bad = ~np.all(np.isfinite(x_new), axis=-1) | ~(nrm <= DIVERGENCE_NORM)
        if ok is not None:
            failed[rows[~ok]] = True
            bad |= ~ok
        steps[rows] += 1
        x[rows], t[rows], w[rows] = x_new, t_new, w_new
        good = ~bad
        max_norm[rows[good]] = np.maximum(max_norm[rows[good]], nrm[good])
        if use_exact:
            xe = model.exact_solution(t_new, w_new)
            ex_max[rows] = np.maximum(ex_max[rows], norm(xe))
            ex_T[rows] = xe
        if bad.any():
            diverged[rows[bad]] = True
            div_time[rows[bad]] = t_new[bad]
        if record:
            for j, i in enumerate(rows):
                rec_t[i].append(float(t_new[j]))
                rec_x[i].append(x_new[j].copy())
                rec_h[i].append(float(h[j]))
        active[rows] = good & (t_new < T)
        if steps.max() > max_steps:
            raise SchemeError(f"step budget {max_steps} exceeded; timestep collapsed?")

    knots = None
    if record:
        knots = [(np.array(rec_t[i]), np.array(rec_x[i]), np.array(rec_h[i])) for i in range(n_paths)]
    return BatchResult(
        x_T=x, t_end=t, steps=steps, max_norm=max_norm, diverged=diverged, divergence_time=div_time,
        solver_failed=failed, W_T=w,
        exact_T=ex_T if use_exact else None, exact_max_norm=ex_max if use_exact else None, knots=knots,
    )


class _SinglePathNoise:
    def __init__(self, path: BrownianPath):
        self.path = path

    def advance(self, rows, t):
        return np.array([self.path.sample_at(float(t[0]))])


@dataclass
class SimulatedPath:
    times: np.ndarray
    states: np.ndarray
    step_sizes: np.ndarray
    diverged: bool = False
    divergence_time: float = math.nan
    solver_failed: bool = False

    @property
    def step_count(self) -> int:
        return len(self.step_sizes)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def max_norm(self) -> float:
        return float(np.max(norm(self.states[np.all(np.isfinite(self.states), axis=-1)])))


def simulate(model: SdeModel, scheme: SchemeSpec, path: BrownianPath, T: Optional[float] = None) -> SimulatedPath:
    """Simulate one path, recording every knot. Divergence is flagged, not raised."""
    if path.dimension != model.noise_dim:
        raise ValueError(f"Brownian dimension {path.dimension} != noise dimension {model.noise_dim}")
    res = integrate(model, scheme, _SinglePathNoise(path), 1, T, record=True)
    times, states, hs = res.knots[0]
    return SimulatedPath(times, states, hs, bool(res.diverged[0]), float(res.divergence_time[0]),
                         bool(res.solver_failed[0]))


def interpolate(spath: SimulatedPath, model: SdeModel, path: BrownianPath, t: float) -> np.ndarray:
    """Continuous EM interpolant X(t_) + f(X(t_))(t - t_) + g(X(t_))(W_t - W_t_)."""
    if not (0.0 <= t <= spath.times[-1]):
        raise ValueError(f"t={t} outside [0, {spath.times[-1]}]")
    i = int(np.searchsorted(spath.times, t, side="right")) - 1
    t0 = spath.times[i]
    x0 = spath.states[i]
    if t == t0:
        return x0.copy()
    dW = path.increment(t0, t)
    return (x0 + model.drift(x0[None])[0] * (t - t0)
            + _diffuse(model.volatility(x0[None]), dW[None])[0])


# ---------------------------------------------------------------- single steps


def _one_step(scheme: SchemeSpec, model, x, t, path: BrownianPath, T):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise SchemeError("one-step map called at a non-finite state")
    if not t < T:
        raise ValueError(f"step requested at t={t} >= T={T}")
    h, t_new = _next_times(scheme, model, x[None], np.array([float(t)]), float(T))
    dW = path.increment(float(t), float(t_new[0]))
    x_new, ok = scheme.advance(model, x[None], h, dW[None])
    if ok is not None and not ok[0]:
        sol = solve_implicit(model, scheme.implicit_rhs(model, x[None], dW[None]), h, scheme.solver)
        raise ImplicitSolverError(f"{scheme.kind}: Newton did not converge at x={x}, h={h[0]}",
                                  residual=float(sol.residual[0]), iterations=int(sol.iterations[0]))
    if scheme.clamp_radius is not None:
        x_new = project_K(x_new, scheme.clamp_radius)
    return x_new[0], float(t_new[0])


def step_adaptive_em(x, t, model, policy: TimestepPolicy, path, clamp_radius=None):
    return _one_step(AdaptiveEM(policy=policy, clamp_radius=clamp_radius), model, x, t, path, policy.horizon)


def step_uniform_em(x, t, model, h, path, T=None):
    return _one_step(UniformEM(h=h), model, x, t, path, model.horizon if T is None else T)


def step_tamed(x, t, model, h, C, path, T=None):
    return _one_step(TamedEM(h=h, C=C), model, x, t, path, model.horizon if T is None else T)


def step_backward_euler(x, t, model, h, path, solver: NewtonOptions = NewtonOptions(), T=None):
    return _one_step(BackwardEuler(h=h, solver=solver), model, x, t, path, model.horizon if T is None else T)


def step_ssbe(x, t, model, h, path, solver: NewtonOptions = NewtonOptions(), T=None):
    return _one_step(SplitStepBE(h=h, solver=solver), model, x, t, path, model.horizon if T is None else T)


def step_truncated(x, t, model, h, K, path, T=None):
    return _one_step(TruncatedEM(h=h, level=K), model, x, t, path, model.horizon if T is None else T)
