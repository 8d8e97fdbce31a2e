"""Experiment runner and reporter: seeded multi-run execution, CSV traces, summaries."""

from __future__ import annotations

import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .box import Box
from .problems import NoisyProblem, Problem, external_command, gaussian_modes, hartmann3_problem, hartmann6_problem, random_small_box
from .strategy import METHODS, StrategyConfig, Trace, TraceRecord, run

TRACE_FORMAT = "ubo-trace-v1"

# spawn-key tags so the box placement and the observation noise get their own
# deterministic streams per seed
_BOX_STREAM = 101
_NOISE_STREAM = 202

_STRATEGY_KEYS = ("budget", "init_count", "mcmc_draws", "mcmc_burn_in", "growth_factor", "doubling_period", "beta")
_PROBLEM_OPTION_KEYS = ("noise_std", "small_box_side", "command", "dim", "lower", "upper", "param_names", "timeout")


class ConfigError(ValueError):
    """Experiment configuration is invalid."""


def make_problem(name: str, options: dict | None = None) -> Problem:
    options = options or {}
    if name == "hartmann3":
        return hartmann3_problem()
    if name == "hartmann6":
        return hartmann6_problem()
    if name == "gaussian1d":
        return gaussian_modes(1)
    if name == "gaussian2d":
        return gaussian_modes(2)
    if name == "external":
        for key in ("command", "dim", "lower", "upper"):
            if key not in options:
                raise ConfigError(f"external problem requires option {key!r}")
        return external_command(
            options["command"],
            dim=int(options["dim"]),
            box=Box(np.asarray(options["lower"], float), np.asarray(options["upper"], float)),
            param_names=options.get("param_names"),
            timeout=options.get("timeout"),
        )
    raise ConfigError(f"unknown problem {name!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    out_dir: Path
    problem_options: dict = field(default_factory=dict)
    strategy_overrides: dict = field(default_factory=dict)
    jobs: int | None = None

    def __post_init__(self):
        if not self.methods or not self.seeds:
            raise ConfigError("need at least one method and one seed")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        for key in self.strategy_overrides:
            if key not in _STRATEGY_KEYS:
                raise ConfigError(f"unknown strategy override {key!r}")
        for key in self.problem_options:
            if key not in _PROBLEM_OPTION_KEYS:
                raise ConfigError(f"unknown problem option {key!r}")
        make_problem(self.problem, self.problem_options)  # fail fast on bad names
        object.__setattr__(self, "out_dir", Path(self.out_dir))

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {"problem", "problem_options", "methods", "seeds", "strategy", "out_dir", "jobs"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            problem = raw["problem"]
            methods = tuple(raw["methods"])
            seeds = raw["seeds"]
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc.args[0]!r}") from exc
        if isinstance(seeds, int):
            seeds = tuple(range(seeds))
        else:
            seeds = tuple(int(s) for s in seeds)
        return cls(
            problem=problem,
            methods=methods,
            seeds=seeds,
            out_dir=Path(raw.get("out_dir", "traces")),
            problem_options=dict(raw.get("problem_options", {})),
            strategy_overrides=dict(raw.get("strategy", {})),
            jobs=raw.get("jobs"),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)


def _float_repr(v: float) -> str:
    return repr(float(v))


def trace_header(dim: int) -> str:
    cols = ["iter"]
    cols += [f"x_{i}" for i in range(dim)]
    cols += ["y", "best_y"]
    cols += [f"box_lo_{i}" for i in range(dim)]
    cols += [f"box_hi_{i}" for i in range(dim)]
    cols += ["wall_s"]
    return ",".join(cols)


def serialize_trace(trace: Trace) -> tuple[str, dict]:
    """Render a trace as (csv text, sidecar dict). Floats use shortest
    round-trip repr so parsing reproduces the exact values."""
    d = trace.dim
    lines = [trace_header(d)]
    for r in trace.records:
        row = [str(r.iteration)]
        row += [_float_repr(v) for v in r.x]
        row += [_float_repr(r.y), _float_repr(r.best_y)]
        row += [_float_repr(v) for v in r.box_lower]
        row += [_float_repr(v) for v in r.box_upper]
        row += [_float_repr(r.wall_s)]
        lines.append(",".join(row))
    sidecar = {
        "format": TRACE_FORMAT,
        "method": trace.method,
        "seed": trace.seed,
        "dim": d,
        "recommendation": [float(v) for v in trace.recommendation],
        "regularizer": trace.regularizer,
    }
    return "\n".join(lines) + "\n", sidecar


def parse_trace(csv_text: str, sidecar: dict) -> Trace:
    lines = [ln for ln in csv_text.strip().splitlines() if ln]
    d = int(sidecar["dim"])
    if lines[0] != trace_header(d):
        raise ValueError("unexpected trace header")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        it = int(parts[0])
        x = np.array([float(v) for v in parts[1 : 1 + d]])
        y, best = float(parts[1 + d]), float(parts[2 + d])
        lo = np.array([float(v) for v in parts[3 + d : 3 + 2 * d]])
        hi = np.array([float(v) for v in parts[3 + 2 * d : 3 + 3 * d]])
        wall = float(parts[3 + 3 * d])
        records.append(TraceRecord(it, x, y, best, lo, hi, wall))
    return Trace(
        method=sidecar["method"],
        seed=int(sidecar["seed"]),
        records=tuple(records),
        recommendation=np.array(sidecar["recommendation"], dtype=float),
        regularizer=sidecar.get("regularizer"),
    )


def traces_equal(a: Trace, b: Trace) -> bool:
    """Exact (bitwise on floats) equality of two traces."""
    if (a.method, a.seed, len(a.records)) != (b.method, b.seed, len(b.records)):
        return False
    if not np.array_equal(a.recommendation, b.recommendation) or a.regularizer != b.regularizer:
        return False
    for ra, rb in zip(a.records, b.records):
        if ra.iteration != rb.iteration or ra.y != rb.y or ra.best_y != rb.best_y or ra.wall_s != rb.wall_s:
            return False
        if not (
            np.array_equal(ra.x, rb.x)
            and np.array_equal(ra.box_lower, rb.box_lower)
            and np.array_equal(ra.box_upper, rb.box_upper)
        ):
            return False
    return True


def write_trace(trace: Trace, csv_path: Path, extra_sidecar: dict | None = None) -> None:
    csv_text, sidecar = serialize_trace(trace)
    if extra_sidecar:
        sidecar.update(extra_sidecar)
    csv_path.write_text(csv_text)
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_trace(csv_path: Path) -> Trace:
    sidecar = json.loads(csv_path.with_suffix(".json").read_text())
    return parse_trace(csv_path.read_text(), sidecar)


def _run_stem(method: str, seed: int) -> str:
    return f"{method}_seed{seed:04d}"


def _execute_run(task: dict) -> dict:
    """Worker for one (method, seed) run. Writes a trace or an error stub and
    reports which. Must stay importable at module top level for process pools."""
    out_dir = Path(task["out_dir"])
    stem = _run_stem(task["method"], task["seed"])
    try:
        problem = make_problem(task["problem"], task["problem_options"])
        options = task["problem_options"]
        seed = int(task["seed"])
        side = options.get("small_box_side")
        if side:
            box_rng = np.random.default_rng(np.random.SeedSequence([seed, _BOX_STREAM]))
            initial_box = random_small_box(problem, float(side), box_rng)
        else:
            initial_box = problem.reference_box
        objective = problem
        noise = float(options.get("noise_std") or 0.0)
        if noise > 0.0:
            objective = NoisyProblem(problem, noise, np.random.default_rng(np.random.SeedSequence([seed, _NOISE_STREAM])))
        config = StrategyConfig(
            method=task["method"], initial_box=initial_box, seed=seed, **task["strategy_overrides"]
        )
        trace = run(objective.evaluate, config)
        echo = {
            "problem": task["problem"],
            "problem_options": options,
            "strategy": {
                "budget": config.budget,
                "init_count": config.init_count,
                "mcmc_draws": config.mcmc_draws,
                "mcmc_burn_in": config.mcmc_burn_in,
                "growth_factor": config.growth_factor,
                "doubling_period": config.doubling_period,
                "beta": config.beta,
            },
            "initial_box": {"lower": initial_box.lower.tolist(), "upper": initial_box.upper.tolist()},
        }
        path = out_dir / f"{stem}.csv"
        write_trace(trace, path, extra_sidecar=echo)
        return {"status": "ok", "path": str(path)}
    except Exception as exc:  # record the failure, let sibling runs continue
        stub = out_dir / f"{stem}.error.json"
        stub.write_text(
            json.dumps(
                {
                    "method": task["method"],
                    "seed": task["seed"],
                    "error": type(exc).__name__,
                    "message": str(exc),
                    "traceback": traceback.format_exc(),
                },
                indent=2,
            )
            + "\n"
        )
        return {"status": "error", "path": str(stub)}


@dataclass
class ExperimentResult:
    trace_paths: list[Path]
    error_paths: list[Path]

    @property
    def ok(self) -> bool:
        return not self.error_paths


def _job_cap(requested: int | None, n_tasks: int) -> int:
    cap = os.environ.get("UBO_JOBS")
    jobs = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        jobs = min(jobs, int(cap))
    return max(1, min(jobs, n_tasks))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every (method, seed) pair, one trace file per run.

    The same seed value is shared across methods for a given run index, so
    methods see common initial designs and noise. Failed runs leave error
    stubs; the other runs proceed.
    """
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        {
            "problem": cfg.problem,
            "problem_options": dict(cfg.problem_options),
            "method": method,
            "seed": seed,
            "strategy_overrides": dict(cfg.strategy_overrides),
            "out_dir": str(cfg.out_dir),
        }
        for method in cfg.methods
        for seed in cfg.seeds
    ]
    jobs = _job_cap(cfg.jobs, len(tasks))
    if jobs == 1:
        outcomes = [_execute_run(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_execute_run, tasks))
    traces = [Path(o["path"]) for o in outcomes if o["status"] == "ok"]
    errors = [Path(o["path"]) for o in outcomes if o["status"] == "error"]
    return ExperimentResult(traces, errors)


@dataclass(frozen=True)
class MethodSummary:
    iterations: np.ndarray
    mean_best: np.ndarray
    stderr: np.ndarray
    count: int


@dataclass(frozen=True)
class Summary:
    per_method: dict[str, MethodSummary]
    recommendations: list[dict]

    def to_csv(self) -> str:
        lines = ["method,iteration,mean_best,stderr,n_runs"]
        for method in sorted(self.per_method):
            s = self.per_method[method]
            for i, m, e in zip(s.iterations, s.mean_best, s.stderr):
                lines.append(f"{method},{int(i)},{_float_repr(m)},{_float_repr(e)},{s.count}")
        return "\n".join(lines) + "\n"


def report(trace_dir: str | Path, out_csv: str | Path | None = None) -> Summary:
    """Aggregate traces into per-method mean and standard error of the best
    observation per iteration, plus a final-recommendation table."""
    trace_dir = Path(trace_dir)
    paths = sorted(p for p in trace_dir.glob("*.csv") if p.with_suffix(".json").exists())
    traces = [load_trace(p) for p in paths]
    if not traces:
        raise ValueError(f"no valid traces found in {trace_dir}")

    by_method: dict[str, list[Trace]] = {}
    for t in traces:
        by_method.setdefault(t.method, []).append(t)

    per_method = {}
    recommendations = []
    for method, group in by_method.items():
        lengths = {len(t.records) for t in group}
        if len(lengths) != 1:
            raise ValueError(f"method {method!r} has traces of unequal length: {sorted(lengths)}")
        best = np.array([[r.best_y for r in t.records] for t in group])
        count = best.shape[0]
        mean = best.mean(axis=0)
        # standard error: sample std / sqrt(count); 0 by convention for a single run
        stderr = best.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.zeros(best.shape[1])
        per_method[method] = MethodSummary(np.arange(1, best.shape[1] + 1), mean, stderr, count)
        for t in sorted(group, key=lambda t: t.seed):
            recommendations.append(
                {
                    "method": method,
                    "seed": t.seed,
                    "recommendation": [float(v) for v in t.recommendation],
                    "final_best": float(t.best_y),
                }
            )

    summary = Summary(per_method, recommendations)
    if out_csv is not None:
        Path(out_csv).write_text(summary.to_csv())
    return summary
