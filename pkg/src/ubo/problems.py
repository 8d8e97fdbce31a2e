"""Benchmark objectives and evaluation adapters (maximization convention)."""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .box import Box
from .strategy import EvaluationError


@dataclass(frozen=True, eq=False)
class Problem:
    """An objective to maximize, its reference box, and (optionally) its optimum."""

    name: str
    dim: int
    evaluate: Callable[[np.ndarray], float]
    reference_box: Box
    known_best: tuple[float, np.ndarray] | None = None


@dataclass(eq=False)
class NoisyProblem:
    """Adds independent Gaussian observation noise to an inner problem."""

    inner: Problem
    noise_std: float
    rng: np.random.Generator

    def __post_init__(self):
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be non-negative")

    @property
    def name(self) -> str:
        return self.inner.name

    @property
    def dim(self) -> int:
        return self.inner.dim

    @property
    def reference_box(self) -> Box:
        return self.inner.reference_box

    def evaluate(self, x: np.ndarray) -> float:
        value = self.inner.evaluate(x)
        if self.noise_std == 0.0:
            return value
        return value + self.noise_std * float(self.rng.standard_normal())


# Standard Hartmann coefficient tables; the sign is flipped so the problems
# are maximization like everything else here.

_H3_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H3_A = np.array(
    [
        [3.0, 10.0, 30.0],
        [0.1, 10.0, 35.0],
        [3.0, 10.0, 30.0],
        [0.1, 10.0, 35.0],
    ]
)
_H3_P = np.array(
    [
        [0.3689, 0.1170, 0.2673],
        [0.4699, 0.4387, 0.7470],
        [0.1091, 0.8732, 0.5547],
        [0.0381, 0.5743, 0.8828],
    ]
)

_H6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_H6_P = np.array(
    [
        [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
        [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
        [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
        [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
    ]
)

# Optima of the negated standard forms, pinned by a multistart local-search
# oracle (see tests); accurate to ~1e-9.
HARTMANN3_BEST = (
    3.862779787332663,
    np.array([0.11458887557640371, 0.5556488940378945, 0.8525469854710511]),
)
HARTMANN6_BEST = (
    3.322368011415515,
    np.array(
        [0.2016895128922905, 0.15001069323742897, 0.4768739767611768,
         0.2753324307839508, 0.31165161848739587, 0.6573005349989142]
    ),
)


def _hartmann(x: np.ndarray, alpha: np.ndarray, A: np.ndarray, P: np.ndarray, d: int) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"expected a {d}-vector")
    inner = np.sum(A * (x - P) ** 2, axis=1)
    return float(np.sum(alpha * np.exp(-inner)))


def hartmann3(x: np.ndarray) -> float:
    return _hartmann(x, _H3_ALPHA, _H3_A, _H3_P, 3)


def hartmann6(x: np.ndarray) -> float:
    return _hartmann(x, _H6_ALPHA, _H6_A, _H6_P, 6)


def hartmann3_problem() -> Problem:
    return Problem("hartmann3", 3, hartmann3, Box(np.zeros(3), np.ones(3)), HARTMANN3_BEST)


def hartmann6_problem() -> Problem:
    return Problem("hartmann6", 6, hartmann6, Box(np.zeros(6), np.ones(6)), HARTMANN6_BEST)


# Toy fixtures: three well-separated Gaussian bumps of heights 1, 2, 3 with
# the tallest outside the default box, so escaping the box is required to win.

_GAUSS_HEIGHTS = np.array([1.0, 2.0, 3.0])
_GAUSS_1D = {"spread": 0.4, "centers": np.array([[-1.5], [1.0], [4.0]]), "box": ([-2.0], [2.0])}
_GAUSS_2D = {
    "spread": 0.5,
    "centers": np.array([[-1.5, -1.5], [1.0, 1.0], [3.0, 2.5]]),
    "box": ([-2.0, -2.0], [2.0, 2.0]),
}


def gaussian_modes(d: int) -> Problem:
    """Sum of three Gaussian bumps in one or two dimensions."""
    if d not in (1, 2):
        raise ValueError("gaussian_modes is defined for d in {1, 2}")
    spec = _GAUSS_1D if d == 1 else _GAUSS_2D
    centers, spread = spec["centers"], spec["spread"]

    def evaluate(x: np.ndarray) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (d,):
            raise ValueError(f"expected a {d}-vector")
        sq = np.sum((x - centers) ** 2, axis=1)
        return float(np.sum(_GAUSS_HEIGHTS * np.exp(-sq / (2.0 * spread**2))))

    box = Box(*spec["box"])
    best_x = centers[-1].copy()
    return Problem(f"gaussian{d}d", d, evaluate, box, (evaluate(best_x), best_x))


def random_small_box(problem: Problem, side: float, rng: np.random.Generator) -> Box:
    """Uniformly placed axis-aligned box of exact side length inside the reference box."""
    ref = problem.reference_box
    if not 0.0 < side <= np.min(ref.widths) + 1e-12:
        raise ValueError("side must be positive and no larger than any reference width")
    side = min(side, float(np.min(ref.widths)))
    slack = ref.widths - side
    lower = ref.lower + rng.uniform(0.0, 1.0, size=ref.dim) * slack
    return Box(lower, lower + side)


class ExternalCommandError(EvaluationError):
    """External objective failed; `kind` is one of spawn/timeout/exit/parse."""

    def __init__(self, kind: str, message: str, stdout: str = "", stderr: str = ""):
        super().__init__(message)
        self.kind = kind
        self.stdout = stdout
        self.stderr = stderr


def external_command(
    template: str,
    *,
    dim: int,
    box: Box,
    param_names: list[str] | None = None,
    workdir: str | Path | None = None,
    timeout: float | None = None,
    name: str = "external",
) -> Problem:
    """Wrap a shell command as an objective.

    Each evaluation writes the parameters to a params.json file (name -> float)
    in a fresh working directory, substitutes the file path for `{params}` in
    the command template, runs it, and parses the last line of stdout as the
    objective value (maximization). Failures raise ExternalCommandError with
    the captured output attached.
    """
    names = param_names if param_names is not None else [f"x{i}" for i in range(dim)]
    if len(names) != dim:
        raise ValueError("param_names must have one entry per dimension")
    base = Path(workdir) if workdir is not None else None

    def evaluate(x: np.ndarray) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (dim,):
            raise ValueError(f"expected a {dim}-vector")
        with tempfile.TemporaryDirectory(dir=base) as scratch:
            params_path = Path(scratch) / "params.json"
            params_path.write_text(json.dumps({n: float(v) for n, v in zip(names, x)}, sort_keys=True))
            argv = shlex.split(template.replace("{params}", str(params_path)))
            try:
                proc = subprocess.run(
                    argv, cwd=scratch, capture_output=True, text=True, timeout=timeout
                )
            except FileNotFoundError as exc:
                raise ExternalCommandError("spawn", f"could not spawn {argv[0]!r}: {exc}") from exc
            except subprocess.TimeoutExpired as exc:
                raise ExternalCommandError(
                    "timeout",
                    f"command timed out after {timeout}s",
                    stdout=str(exc.stdout or ""),
                    stderr=str(exc.stderr or ""),
                ) from exc
            if proc.returncode != 0:
                raise ExternalCommandError(
                    "exit",
                    f"command exited with code {proc.returncode}",
                    stdout=proc.stdout,
                    stderr=proc.stderr,
                )
            lines = [line for line in proc.stdout.strip().splitlines() if line.strip()]
            try:
                return float(lines[-1])
            except (IndexError, ValueError) as exc:
                raise ExternalCommandError(
                    "parse",
                    "could not parse a float from the last line of stdout",
                    stdout=proc.stdout,
                    stderr=proc.stderr,
                ) from exc

    return Problem(name, dim, evaluate, box)
