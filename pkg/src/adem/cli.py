"""Command-line front end: ``adem {run,converge,stability,steps,validate}``.

Configuration comes from an optional file (JSON, or ``key = value`` lines)
overlaid by command-line flags. All validation errors are collected and
reported together. Failures exit non-zero and print one JSON line on stderr
of the form ``{"error": <category>, "messages": [...]}``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import inspect
import io
import json
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .harness import ConvergenceReport, moment_sweep, step_count_stats, strong_error_sweep
from .models import CATALOGUE, ModelError, make_model
from .schemes import SCHEMES, SchemeError, make_scheme, scheme_family, simulate
from .brownian import BrownianPath
from .stepcontrol import check_lower_bound, check_timestep_assumption, sample_states

EXPERIMENTS = ("run", "converge", "stability", "steps", "validate")
REPORT_HEADER = ("resolution", "avg_dt", "rms_error_T", "rms_error_sup", "mean_steps", "diverged_fraction")
SOLVER_KEYS = ("tol", "max_iter", "max_halvings")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ReportIOError(OSError):
    """A report file could not be written."""


@dataclass
class ExperimentConfig:
    experiment: str = "converge"
    model: str = "testcase1"
    model_params: dict = field(default_factory=dict)
    schemes: list = field(default_factory=lambda: ["adaptive_em"])
    scheme_params: dict = field(default_factory=dict)
    resolutions: list = field(default_factory=list)
    M: int = 1000
    T: Optional[float] = None
    p: float = 2.0
    seed: int = 0
    out: Optional[str] = None
    ref_refinement: int = 4
    reference: str = "coupled"
    threads: Optional[int] = None
    radius: float = 1e3

    @property
    def scheme(self) -> str:
        return self.schemes[0]

    def echo(self) -> dict:
        # thread count is excluded so reports do not depend on it
        d = asdict(self)
        d.pop("threads")
        return d


# ---------------------------------------------------------------- parsing

_ALIASES = {
    "deltas": "resolutions", "steps_list": "resolutions", "steps": "resolutions", "h": "resolutions",
    "paths": "M", "m": "M", "horizon": "T", "t": "T", "moment_p": "p", "scheme": "schemes",
    "ref": "ref_refinement", "params": "model_params", "param": "param",
}


def _canonical(key: str) -> str:
    key = key.strip().replace("-", "_")
    if key in ("M", "T"):
        return key
    return _ALIASES.get(key.lower(), key.lower())


def _scalar(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


_POW = re.compile(r"^\s*2\s*\^\s*(-?\d+)\s*$")


def _resolution(token: Any) -> float:
    if isinstance(token, str):
        m = _POW.match(token)
        if m:
            return 2.0 ** int(m.group(1))
    return float(token)


def parse_resolutions(value: Any) -> list[float]:
    """Accept a list, ``"0.25,0.125"``, or ``"2^-4..2^-9"`` (powers of two)."""
    if value is None:
        return []
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        text = value.strip().strip("[]")
        if not text:
            return []
        rng = re.match(r"^\s*2\s*\^\s*(-?\d+)\s*\.\.\s*2\s*\^\s*(-?\d+)\s*$", text)
        if rng:
            a, b = int(rng.group(1)), int(rng.group(2))
            step = 1 if b >= a else -1
            return [2.0 ** k for k in range(a, b + step, step)]
        return [_resolution(tok) for tok in text.split(",") if tok.strip()]
    return [_resolution(v) for v in value]


def _split_list(value: Any) -> list[str]:
    if isinstance(value, str):
        return [s.strip() for s in value.split(",") if s.strip()]
    return [str(s) for s in value]


def read_config_file(path: str | os.PathLike) -> dict:
    """JSON object, or ``key = value`` / ``key: value`` lines with ``#`` comments."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ReportIOError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file {path}: invalid JSON ({exc})"]) from None
        return dict(data)
    data, errors = {}, []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^([A-Za-z_][\w.\-]*)\s*[=:]\s*(.*)$", line)
        if not m:
            errors.append(f"config file {path}, line {n}: expected key = value")
            continue
        data[m.group(1)] = _scalar(m.group(2))
    if errors:
        raise ConfigError(errors)
    return data


def parse_kv(items: Iterable[str]) -> dict:
    """``["M=100", "seed=42"]`` -> ``{"M": 100, "seed": 42}``."""
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError([f"expected key=value, got {item!r}"])
        out[key.strip()] = _scalar(value)
    return out


def _accepted_model_params(name: str) -> set[str]:
    return set(inspect.signature(CATALOGUE[name]).parameters)


def _accepted_scheme_params(name: str) -> set[str]:
    cls = SCHEMES[name]
    keys = {f.name for f in dataclasses.fields(cls)} - {"h", "policy"}
    if "solver" in keys:
        keys |= set(SOLVER_KEYS)
    return keys


def _merge(file_values: Mapping, flag_values: Mapping) -> dict:
    merged: dict = {}
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            k = _canonical(key)
            if k in ("model_params", "scheme_params"):
                merged.setdefault(k, {}).update(dict(value))
            elif k == "param":
                merged.setdefault("param", []).extend(value if isinstance(value, list) else [value])
            else:
                merged[k] = value
    return merged


def parse_config(flags: Mapping | Sequence[str] | None = None, file: str | os.PathLike | None = None,
                 env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig`.

    ``flags`` is a mapping or a list of ``key=value`` strings and overrides
    values from ``file``. The seed falls back to ``ADEM_SEED`` and then 0.
    ``param`` entries (``key=value``, optionally prefixed ``model.`` or
    ``scheme.``) are routed to the model or scheme constructor.
    """
    env = os.environ if env is None else env
    if flags is None:
        flags = {}
    elif not isinstance(flags, Mapping):
        flags = parse_kv(flags)
    file_values = read_config_file(file) if file is not None else {}
    raw = _merge(file_values, flags)
    errors: list[str] = []
    cfg = ExperimentConfig()

    def take(key, conv, what):
        if key not in raw:
            return getattr(cfg, key)
        try:
            return conv(raw[key])
        except (TypeError, ValueError):
            errors.append(f"{what} must be {conv.__name__ if hasattr(conv, '__name__') else 'valid'}, "
                          f"got {raw[key]!r}")
            return getattr(cfg, key)

    known = {f.name for f in dataclasses.fields(ExperimentConfig)} | {"param"}
    for key in raw:
        if key not in known:
            errors.append(f"unknown setting {key!r}")

    cfg.experiment = str(raw.get("experiment", cfg.experiment))
    if cfg.experiment not in EXPERIMENTS:
        errors.append(f"unknown experiment {cfg.experiment!r}; choose from {list(EXPERIMENTS)}")
    cfg.model = str(raw.get("model", cfg.model))
    model_ok = cfg.model in CATALOGUE
    if not model_ok:
        errors.append(f"unknown model {cfg.model!r}; choose from {sorted(CATALOGUE)}")
    cfg.schemes = _split_list(raw.get("schemes", cfg.schemes))
    if not cfg.schemes:
        errors.append("empty scheme list")
    bad_schemes = [s for s in cfg.schemes if s not in SCHEMES]
    for s in bad_schemes:
        errors.append(f"unknown scheme {s!r}; choose from {sorted(SCHEMES)}")
    if cfg.experiment not in ("stability",) and len(cfg.schemes) > 1:
        errors.append(f"experiment {cfg.experiment!r} takes a single scheme, got {cfg.schemes}")

    try:
        cfg.resolutions = parse_resolutions(raw.get("resolutions", cfg.resolutions))
    except (TypeError, ValueError):
        errors.append(f"resolutions must be numbers, got {raw.get('resolutions')!r}")
        cfg.resolutions = []
    if cfg.experiment != "validate":
        if not cfg.resolutions:
            errors.append("empty resolution list")
        for r in cfg.resolutions:
            if not (r > 0 and math.isfinite(r)):
                errors.append(f"resolution must be positive, got {r}")
            elif r > 1 and "adaptive_em" in cfg.schemes:
                errors.append(f"adaptive delta must lie in (0, 1], got {r}")
        if cfg.experiment == "converge" and len(cfg.resolutions) == 1:
            errors.append("converge needs at least two resolutions")

    cfg.M = take("M", int, "M")
    if isinstance(raw.get("M"), float) and raw["M"] != int(raw["M"]):
        errors.append(f"M must be an integer, got {raw['M']}")
    if cfg.M <= 0:
        errors.append(f"M must be positive, got {cfg.M}")
    if "T" in raw:
        cfg.T = take("T", float, "T")
        if cfg.T is not None and not (cfg.T > 0 and math.isfinite(cfg.T)):
            errors.append(f"T must be positive, got {cfg.T}")
    cfg.p = take("p", float, "p")
    if not cfg.p >= 1:
        errors.append(f"moment order p must be >= 1, got {cfg.p}")
    seed = raw.get("seed", env.get("ADEM_SEED"))
    if seed is not None:
        try:
            cfg.seed = int(seed)
            if cfg.seed < 0 or cfg.seed >= 2**64:
                raise ValueError
        except (TypeError, ValueError):
            errors.append(f"seed must be an integer in [0, 2^64), got {seed!r}")
            cfg.seed = 0
    cfg.out = None if raw.get("out") is None else str(raw["out"])
    cfg.ref_refinement = take("ref_refinement", int, "ref_refinement")
    if cfg.ref_refinement < 2:
        errors.append(f"ref_refinement must be >= 2, got {cfg.ref_refinement}")
    cfg.reference = str(raw.get("reference", cfg.reference))
    if cfg.reference not in ("coupled", "exact"):
        errors.append(f"reference must be 'coupled' or 'exact', got {cfg.reference!r}")
    if raw.get("threads") is not None:
        cfg.threads = take("threads", int, "threads")
        if cfg.threads is not None and cfg.threads < 1:
            errors.append(f"threads must be positive, got {cfg.threads}")
    cfg.radius = take("radius", float, "radius")
    if not cfg.radius > 0:
        errors.append(f"radius must be positive, got {cfg.radius}")

    cfg.model_params = dict(raw.get("model_params", {}))
    cfg.scheme_params = dict(raw.get("scheme_params", {}))
    model_keys = _accepted_model_params(cfg.model) if model_ok else set()
    scheme_keys = set.intersection(*[_accepted_scheme_params(s) for s in cfg.schemes
                                     if s in SCHEMES] or [set()])
    for item in raw.get("param", []):
        try:
            (key, value), = parse_kv([item]).items() if isinstance(item, str) else dict(item).items()
        except ConfigError as exc:
            errors.extend(exc.errors)
            continue
        target, _, bare = key.rpartition(".")
        if target == "model" or (not target and bare in model_keys):
            cfg.model_params[bare] = value
        elif target == "scheme" or (not target and bare in scheme_keys):
            cfg.scheme_params[bare] = value
        else:
            errors.append(f"parameter {key!r} matches neither model {cfg.model!r} nor scheme(s) {cfg.schemes}")
    if model_ok:
        for k in cfg.model_params:
            if k not in model_keys:
                errors.append(f"model {cfg.model!r} has no parameter {k!r}")
    for k in cfg.scheme_params:
        if k not in scheme_keys:
            errors.append(f"scheme(s) {cfg.schemes} have no parameter {k!r}")
    if cfg.T is not None:
        cfg.model_params["T"] = cfg.T

    if model_ok and not errors:
        try:
            model = build_model(cfg)
        except (ModelError, ValueError) as exc:
            errors.append(str(exc))
        else:
            if cfg.reference == "exact" and model.exact_solution is None:
                errors.append(f"model {cfg.model!r} has no closed-form solution for reference='exact'")
            if cfg.T is None:
                cfg.T = model.horizon
    if errors:
        raise ConfigError(errors)
    return cfg


def build_model(cfg: ExperimentConfig):
    return make_model(cfg.model, **cfg.model_params)


# ---------------------------------------------------------------- output

def fmt(value: float) -> str:
    """Decimal notation, 9 significant digits."""
    value = float(value)
    if not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    # np.format_float_positional pads values below 1 to one digit short, so
    # take correctly rounded digits from %e and place the point by hand
    mant, exp = f"{value:.8e}".split("e")
    sign = "-" if mant.startswith("-") else ""
    digits = mant.lstrip("-").replace(".", "")
    e = int(exp)
    if e >= 8:
        body = digits + "0" * (e - 8)
    elif e >= 0:
        body = digits[: e + 1] + "." + digits[e + 1:]
    else:
        body = "0." + "0" * (-e - 1) + digits
    return sign + body


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc.strerror or exc}") from None


def table_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def report_csv(report: ConvergenceReport) -> str:
    rows = sorted(report.rows, key=lambda r: r.resolution)
    return table_csv(REPORT_HEADER, ([getattr(r, k) for k in REPORT_HEADER] for r in rows))


def summary_path(csv_path: str | os.PathLike) -> Path:
    return Path(csv_path).with_suffix(".json")


def emit_report(report: ConvergenceReport, out: str | os.PathLike,
                config: Optional[ExperimentConfig | Mapping[str, Any]] = None) -> tuple[Path, Path]:
    """Write ``out`` (CSV, rows in resolution order) and its ``.json`` summary.

    ``config`` is echoed into the summary; a plain mapping is stored as given.
    """
    csv_path = Path(out)
    json_path = summary_path(csv_path)
    summary = dict(
        fitted_order_T=report.fitted_order_T, fitted_order_sup=report.fitted_order_sup,
        seed=report.seed, paths=report.paths, meta=report.meta,
        config=config.echo() if isinstance(config, ExperimentConfig) else config,
    )
    _write(csv_path, report_csv(report))
    _write(json_path, json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_report_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- experiments

def _emit_table(cfg: ExperimentConfig, header, rows, summary: dict, stdout) -> None:
    text = table_csv(header, rows)
    summary = _jsonable(dict(summary, config=cfg.echo()))
    if cfg.out is None:
        stdout.write(text)
        stdout.write(json.dumps(summary, sort_keys=True) + "\n")
        return
    _write(Path(cfg.out), text)
    _write(summary_path(cfg.out), json.dumps(summary, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, stdout=None) -> dict:
    """Dispatch ``cfg.experiment``; returns the JSON summary that was emitted."""
    stdout = sys.stdout if stdout is None else stdout
    model = build_model(cfg)
    T = cfg.T
    if cfg.experiment == "converge":
        fam = scheme_family(cfg.scheme, model, **cfg.scheme_params)
        report = strong_error_sweep(model, fam, cfg.resolutions, cfg.M, cfg.seed, T, cfg.ref_refinement,
                                    cfg.reference, cfg.threads)
        summary = dict(fitted_order_T=report.fitted_order_T, fitted_order_sup=report.fitted_order_sup,
                       seed=cfg.seed, paths=cfg.M, meta=report.meta)
        if cfg.out is None:
            stdout.write(report_csv(report))
            stdout.write(json.dumps(_jsonable(dict(summary, config=cfg.echo())), sort_keys=True) + "\n")
        else:
            emit_report(report, cfg.out, cfg)
        return summary
    if cfg.experiment == "stability":
        schemes, names = [], []
        for name in cfg.schemes:
            for r in cfg.resolutions:
                schemes.append(make_scheme(name, r, model, **cfg.scheme_params))
                names.append(name)
        rep = moment_sweep(model, schemes, cfg.p, cfg.M, cfg.seed, T, cfg.threads, names)
        header = ("scheme", "resolution", "p", "estimate", "stderr", "ci_low", "ci_high",
                  "diverged_fraction", "mean_steps")
        rows = [[getattr(r, k) for k in header] for r in rep.rows]
        summary = dict(seed=cfg.seed, paths=cfg.M, p=cfg.p, meta=rep.meta,
                       max_diverged_fraction=max(r.diverged_fraction for r in rep.rows))
        _emit_table(cfg, header, rows, summary, stdout)
        return summary
    if cfg.experiment == "steps":
        fam = scheme_family(cfg.scheme, model, **cfg.scheme_params)
        stats = step_count_stats(model, fam, cfg.resolutions, cfg.M, cfg.seed, T, cfg.threads)
        header = ("resolution", "mean_steps", "std_steps", "min_steps", "max_steps", "diverged_fraction")
        rows = [[getattr(r, k) for k in header] for r in stats]
        ratios = [b.mean_steps / a.mean_steps for a, b in zip(stats, stats[1:])]
        summary = dict(seed=cfg.seed, paths=cfg.M, mean_steps_ratios=ratios)
        _emit_table(cfg, header, rows, summary, stdout)
        return summary
    if cfg.experiment == "run":
        scheme = make_scheme(cfg.scheme, cfg.resolutions[0], model, **cfg.scheme_params)
        sp = simulate(model, scheme, BrownianPath(model.noise_dim, cfg.seed, 0), T)
        header = ["t", "h"] + [f"x{i}" for i in range(model.state_dim)]
        hs = np.append(sp.step_sizes, np.nan)  # h is the step taken from each knot
        rows = [[t, h, *x] for t, h, x in zip(sp.times, hs, sp.states)]
        summary = dict(seed=cfg.seed, steps=sp.step_count, diverged=sp.diverged,
                       divergence_time=sp.divergence_time, solver_failed=sp.solver_failed)
        _emit_table(cfg, header, rows, summary, stdout)
        return summary
    return _validate(cfg, model, stdout)


def _validate(cfg: ExperimentConfig, model, stdout) -> dict:
    if model.growth is None:
        raise ConfigError([f"model {model.name!r} declares no growth constants to check"])
    radius = cfg.radius
    if model.domain_radius is not None:
        radius = min(radius, model.domain_radius * (1.0 - 1e-9))
    samples = sample_states(model.state_dim, cfg.M, radius, cfg.seed)
    policy = model.recommended_policy(1.0)
    checks = [check_timestep_assumption(policy, model, model.growth, samples),
              check_lower_bound(policy, model.growth, samples)]
    lines = []
    for rep in checks:
        worst = rep.worst()
        lines.append(f"{rep.condition}: {'pass' if rep.passed else 'FAIL'} "
                     f"({len(rep.violations)}/{rep.n_samples} violations)")
        for v in rep.violations[:10]:
            lines.append(f"  x={np.array2string(v.x, precision=6)} margin={v.margin:.3e}")
        if worst is not None and len(rep.violations) > 10:
            lines.append(f"  worst margin={worst.margin:.3e}")
    summary = dict(model=model.name, samples=cfg.M, radius=radius, seed=cfg.seed, growth=asdict(model.growth),
                   **{rep.condition: dict(passed=rep.passed, violations=len(rep.violations)) for rep in checks})
    text = "\n".join(lines) + "\n"
    if cfg.out is None:
        stdout.write(text)
    else:
        _write(Path(cfg.out), text)
        _write(summary_path(cfg.out), json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adem", description="Adaptive-timestep Euler-Maruyama experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or key = value file; flags override it")
    common.add_argument("--model")
    common.add_argument("--scheme", help="scheme name (comma list for stability)")
    res = common.add_mutually_exclusive_group()
    res.add_argument("--deltas", help="e.g. 0.25,0.125 or 2^-4..2^-9")
    res.add_argument("--steps-list", dest="steps_list", help="uniform step sizes, same syntax as --deltas")
    common.add_argument("--paths", type=int, help="Monte Carlo paths M (sample count for validate)")
    common.add_argument("--horizon", type=float, help="final time T")
    common.add_argument("--seed", type=int, help="defaults to $ADEM_SEED, then 0")
    common.add_argument("--out", help="output CSV path; a .json summary is written next to it")
    common.add_argument("--threads", type=int)
    common.add_argument("--ref-refinement", dest="ref_refinement", type=int)
    common.add_argument("--moment-p", dest="moment_p", type=float)
    common.add_argument("--reference", choices=("coupled", "exact"))
    common.add_argument("--radius", type=float, help="sampling radius for validate")
    common.add_argument("--param", action="append", default=None, metavar="KEY=VALUE",
                        help="model or scheme parameter; prefix with model. or scheme. to disambiguate")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common])
    return ap


def _fail(category: str, code: int, messages: Sequence[str]) -> int:
    sys.stderr.write(json.dumps({"error": category, "messages": list(messages)}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    try:
        cfg = parse_config(flags, args.config)
        run_experiment(cfg)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc.errors)
    except OSError as exc:
        return _fail("io", EXIT_IO, [str(exc)])
    except (SchemeError, FloatingPointError) as exc:
        return _fail("numerical", EXIT_NUMERIC, [str(exc)])
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        return _fail("internal", EXIT_OTHER, [f"{type(exc).__name__}: {exc}"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
