"""Monte Carlo experiments: strong-error sweeps, moment and step-count studies.

Paths are identified by a global index under a base seed; chunks of paths
are simulated as vectorized batches and may run on worker threads. Every
per-path quantity depends only on (seed, index), and all reductions run in
index order, so results do not depend on the thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .brownian import BrownianBatch, BrownianPath
from .models import SdeModel
from .schemes import AdaptiveEM, SchemeSpec, integrate, simulate
from .stepcontrol import TimestepPolicy, norm

MAX_CHUNK = 4096

SchemeFamily = Callable[[float], SchemeSpec]


def default_threads() -> int:
    return os.cpu_count() or 1


def _chunks(M: int, threads: int) -> list[np.ndarray]:
    # per-path results do not depend on how paths are grouped into batches
    size = min(MAX_CHUNK, -(-M // threads))
    return [np.arange(s, min(M, s + size)) for s in range(0, M, size)]


def _map_chunks(fn, M: int, threads: Optional[int]) -> list:
    threads = default_threads() if threads is None else max(1, int(threads))
    parts = _chunks(M, threads)
    if threads == 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, parts))


def _concat(results: list[dict]) -> dict:
    return {k: np.concatenate([r[k] for r in results]) for k in results[0]}


def as_family(scheme: Union[SchemeFamily, TimestepPolicy], clamp_radius: Optional[float] = None) -> SchemeFamily:
    """Accept a resolution -> scheme callable, or a policy (adaptive EM in delta)."""
    if isinstance(scheme, TimestepPolicy):
        policy = scheme
        return lambda delta: AdaptiveEM(policy=policy.with_delta(delta), clamp_radius=clamp_radius)
    return scheme


# ---------------------------------------------------------------- coupled errors


@dataclass
class CoupledSample:
    err_T: float
    err_sup: float
    steps: int
    ref_steps: int
    diverged: bool


def coupled_error_sample(model: SdeModel, scheme: SchemeSpec, ref_refinement: int = 4, seed: int = 0,
                         T: Optional[float] = None, index: int = 0) -> CoupledSample:
    """Compare one path at the scheme's resolution with its refinement.

    Both runs consume the same :class:`BrownianPath`; the reference run's
    extra times are filled in by Brownian bridges between the coarse knots.
    """
    if ref_refinement < 2:
        raise ValueError("ref_refinement must be >= 2")
    path = BrownianPath(model.noise_dim, seed, index)
    coarse = simulate(model, scheme, path, T)
    fine = simulate(model, scheme.refined(ref_refinement), path, T)
    diverged = coarse.diverged or fine.diverged
    nan = math.nan
    return CoupledSample(
        err_T=nan if diverged else float(norm(coarse.terminal - fine.terminal)),
        err_sup=nan if diverged else abs(coarse.max_norm - fine.max_norm),
        steps=coarse.step_count, ref_steps=fine.step_count, diverged=diverged,
    )


def coupled_errors(model: SdeModel, scheme: SchemeSpec, ref_refinement: int, seed: int, indices: np.ndarray,
                   T: Optional[float] = None) -> dict:
    """Vectorized :func:`coupled_error_sample` over path ``indices``."""
    if ref_refinement < 2:
        raise ValueError("ref_refinement must be >= 2")
    batch = BrownianBatch(model.noise_dim, seed, indices)
    n = len(indices)
    coarse = integrate(model, scheme, batch, n, T)
    fine = integrate(model, scheme.refined(ref_refinement), batch.cursor(), n, T)
    diverged = coarse.diverged | fine.diverged
    with np.errstate(invalid="ignore", over="ignore"):
        err_T = np.where(diverged, np.nan, norm(coarse.x_T - fine.x_T))
        err_sup = np.where(diverged, np.nan, np.abs(coarse.max_norm - fine.max_norm))
    return dict(err_T=err_T, err_sup=err_sup, steps=coarse.steps, ref_steps=fine.steps, diverged=diverged)


def exact_errors(model: SdeModel, scheme: SchemeSpec, seed: int, indices: np.ndarray,
                 T: Optional[float] = None) -> dict:
    """Errors against the model's closed-form solution on the same noise."""
    batch = BrownianBatch(model.noise_dim, seed, indices)
    res = integrate(model, scheme, batch, len(indices), T, exact=True)
    with np.errstate(invalid="ignore", over="ignore"):
        err_T = np.where(res.diverged, np.nan, norm(res.x_T - res.exact_T))
        err_sup = np.where(res.diverged, np.nan, np.abs(res.max_norm - res.exact_max_norm))
    return dict(err_T=err_T, err_sup=err_sup, steps=res.steps, ref_steps=res.steps, diverged=res.diverged)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepRow:
    resolution: float
    avg_dt: float
    rms_error_T: float
    rms_error_sup: float
    mean_steps: float
    diverged_fraction: float


@dataclass
class ConvergenceReport:
    rows: list[SweepRow]
    fitted_order_T: float
    fitted_order_sup: float
    paths: int
    seed: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(rows=[asdict(r) for r in self.rows], fitted_order_T=self.fitted_order_T,
                    fitted_order_sup=self.fitted_order_sup, paths=self.paths, seed=self.seed, meta=self.meta)


def _rms(values: np.ndarray) -> float:
    v = values[np.isfinite(values)]
    return float(np.sqrt(np.mean(v * v))) if v.size else math.inf


def summarize_row(resolution: float, samples: dict, T: float) -> SweepRow:
    ok = ~samples["diverged"]
    steps = samples["steps"][ok] if ok.any() else samples["steps"]
    mean_steps = float(np.mean(steps))
    return SweepRow(
        resolution=float(resolution),
        avg_dt=T / mean_steps,
        rms_error_T=_rms(samples["err_T"]),
        rms_error_sup=_rms(samples["err_sup"]),
        mean_steps=mean_steps,
        diverged_fraction=float(np.mean(samples["diverged"])),
    )


def strong_error_sweep(model: SdeModel, family: Union[SchemeFamily, TimestepPolicy], resolutions: Sequence[float],
                       M: int = 1000, seed: int = 0, T: Optional[float] = None, ref_refinement: int = 4,
                       reference: str = "coupled", threads: Optional[int] = None) -> ConvergenceReport:
    """RMS strong errors at each resolution, plus fitted log-log orders.

    ``reference`` is ``"coupled"`` (same path at resolution/ref_refinement)
    or ``"exact"`` (closed-form solution; the model must provide one).
    The same path indices 0..M-1 are used at every resolution.
    """
    resolutions = [float(r) for r in resolutions]
    if len(resolutions) < 2:
        raise ValueError("need at least two resolutions")
    if M < 1:
        raise ValueError("M must be positive")
    if reference not in ("coupled", "exact"):
        raise ValueError(f"unknown reference {reference!r}")
    T = float(model.horizon if T is None else T)
    family = as_family(family, model.clamp_radius)
    rows = []
    for res in resolutions:
        scheme = family(res)
        if reference == "coupled":
            fn = lambda idx, s=scheme: coupled_errors(model, s, ref_refinement, seed, idx, T)
        else:
            fn = lambda idx, s=scheme: exact_errors(model, s, seed, idx, T)
        rows.append(summarize_row(res, _concat(_map_chunks(fn, M, threads)), T))
    rows.sort(key=lambda r: r.avg_dt)
    example = family(resolutions[0])
    meta = dict(model=model.name, scheme=example.kind, reference=reference, ref_refinement=ref_refinement,
                horizon=T, resolutions=resolutions)
    return ConvergenceReport(rows, fit_order(rows, "rms_error_T"), fit_order(rows, "rms_error_sup"), M, seed, meta)


def _fit(rows: Iterable, attr: str):
    pts = [(r.avg_dt, getattr(r, attr)) for r in rows]
    pts = [(x, y) for x, y in pts if x > 0 and math.isfinite(x) and y > 0 and math.isfinite(y)]
    if len(pts) < 2:
        return math.nan, math.nan
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    xc = lx - lx.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        return math.nan, math.nan
    slope = float(xc @ (ly - ly.mean())) / sxx
    if len(pts) == 2:
        return slope, math.nan
    resid = ly - ly.mean() - slope * xc
    return slope, math.sqrt(float(resid @ resid) / (len(pts) - 2) / sxx)


def fit_order(rows: Iterable, attr: str = "rms_error_T") -> float:
    """Least-squares slope of log(error) against log(avg_dt)."""
    return _fit(rows, attr)[0]


def fit_order_stderr(rows: Iterable, attr: str = "rms_error_T") -> float:
    """Standard error of :func:`fit_order` (NaN with fewer than three points)."""
    return _fit(rows, attr)[1]


# ---------------------------------------------------------------- moments


@dataclass
class MomentRow:
    scheme: str
    resolution: float
    p: float
    estimate: float
    stderr: float
    ci_low: float
    ci_high: float
    diverged_fraction: float
    mean_steps: float


@dataclass
class MomentReport:
    rows: list[MomentRow]
    p: float
    paths: int
    seed: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(rows=[asdict(r) for r in self.rows], p=self.p, paths=self.paths, seed=self.seed, meta=self.meta)

    def row(self, scheme: str, resolution: float) -> MomentRow:
        for r in self.rows:
            if r.scheme == scheme and r.resolution == resolution:
                return r
        raise KeyError((scheme, resolution))


def _terminal_stats(model, scheme, seed, idx, T):
    res = integrate(model, scheme, BrownianBatch(model.noise_dim, seed, idx), len(idx), T)
    return dict(max_norm=res.max_norm, steps=res.steps, diverged=res.diverged)


def moment_sweep(model: SdeModel, schemes: Sequence[SchemeSpec], p: float = 2.0, M: int = 1000, seed: int = 0,
                 T: Optional[float] = None, threads: Optional[int] = None, names: Optional[Sequence[str]] = None,
                 z: float = 1.96) -> MomentReport:
    """Monte Carlo E[max_n |X_n|^p] over knot times, per scheme.

    Diverged paths are excluded from the estimate and counted separately.
    """
    if p < 1:
        raise ValueError("moment order p must be >= 1")
    T = float(model.horizon if T is None else T)
    rows = []
    for i, scheme in enumerate(schemes):
        out = _concat(_map_chunks(lambda idx: _terminal_stats(model, scheme, seed, idx, T), M, threads))
        ok = ~out["diverged"]
        vals = out["max_norm"][ok] ** p
        n = vals.size
        est = float(vals.mean()) if n else math.nan
        se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        rows.append(MomentRow(
            scheme=names[i] if names else scheme.kind, resolution=scheme.resolution, p=float(p),
            estimate=est, stderr=se, ci_low=est - z * se, ci_high=est + z * se,
            diverged_fraction=float(np.mean(out["diverged"])), mean_steps=float(np.mean(out["steps"])),
        ))
    return MomentReport(rows, float(p), M, seed, dict(model=model.name, horizon=T))


# ---------------------------------------------------------------- step counts


@dataclass
class StepCountRow:
    resolution: float
    mean_steps: float
    std_steps: float
    min_steps: int
    max_steps: int
    diverged_fraction: float


def step_count_stats(model: SdeModel, family: Union[SchemeFamily, TimestepPolicy], resolutions: Sequence[float],
                     M: int = 1000, seed: int = 0, T: Optional[float] = None,
                     threads: Optional[int] = None) -> list[StepCountRow]:
    """Distribution of N_T, the steps needed to reach T, per resolution."""
    T = float(model.horizon if T is None else T)
    family = as_family(family, model.clamp_radius)
    rows = []
    for res in resolutions:
        scheme = family(float(res))
        out = _concat(_map_chunks(lambda idx: _terminal_stats(model, scheme, seed, idx, T), M, threads))
        s = out["steps"]
        rows.append(StepCountRow(float(res), float(s.mean()), float(s.std()), int(s.min()), int(s.max()),
                                 float(np.mean(out["diverged"]))))
    return rows
