"""The sequential optimization loop and its search-space controllers.

Four method variants share one loop: plain EI in a fixed box, EI-V with
periodic volume doubling, and EI-Q/EI-H which drop the box entirely in favor
of a coercive prior mean anchored to the initial box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .acquisition import (
    AcquisitionContext,
    BoundedMode,
    UnboundedMode,
    improvement_target,
    maximize,
)
from .box import Box, expand_box, latin_hypercube
from .surrogate import (
    Dataset,
    GpModel,
    HyperParams,
    HyperPrior,
    IllConditionedModelError,
    PriorMean,
    fit,
    posterior_many,
    slice_sample_hyperparams,
)

__all__ = [
    "Box",
    "EvaluationError",
    "METHODS",
    "StrategyConfig",
    "Trace",
    "TraceRecord",
    "expand_box",
    "incumbent",
    "latin_hypercube",
    "run",
]

METHODS = ("EI", "EI-V", "EI-H", "EI-Q")

WARM_BURN_IN = 10  # sweeps discarded when warm-starting from the previous draws


class EvaluationError(RuntimeError):
    """The objective produced an unusable value or could not be evaluated."""


@dataclass(frozen=True, eq=False)
class StrategyConfig:
    """Settings for one optimization run.

    budget, init_count and doubling_period default to 30d, 3d and 3d for a
    d-dimensional initial box.
    """

    method: str
    initial_box: Box
    seed: int = 0
    budget: int | None = None
    init_count: int | None = None
    mcmc_draws: int = 10
    mcmc_burn_in: int = 50
    growth_factor: float = 2.0
    doubling_period: int | None = None
    beta: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        d = self.initial_box.dim
        if self.budget is None:
            object.__setattr__(self, "budget", 30 * d)
        if self.init_count is None:
            object.__setattr__(self, "init_count", 3 * d)
        if self.doubling_period is None:
            object.__setattr__(self, "doubling_period", 3 * d)
        if not (1 <= self.init_count <= self.budget):
            raise ValueError("need 1 <= init_count <= budget")
        if self.mcmc_draws < 1 or self.mcmc_burn_in < 0:
            raise ValueError("mcmc_draws must be positive and mcmc_burn_in non-negative")
        if not self.growth_factor > 1.0:
            raise ValueError("growth_factor must exceed 1")
        if self.doubling_period < 1:
            raise ValueError("doubling_period must be positive")
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True, eq=False)
class TraceRecord:
    iteration: int  # 1-based evaluation index
    x: np.ndarray
    y: float
    best_y: float
    box_lower: np.ndarray
    box_upper: np.ndarray
    wall_s: float


@dataclass(frozen=True, eq=False)
class Trace:
    """Complete record of one seeded run."""

    method: str
    seed: int
    records: tuple[TraceRecord, ...]
    recommendation: np.ndarray
    regularizer: dict | None

    @property
    def dim(self) -> int:
        return self.recommendation.size

    @property
    def best_y(self) -> float:
        return self.records[-1].best_y


def incumbent(models: list[GpModel], data: Dataset) -> np.ndarray:
    """Observed input with the highest draw-averaged posterior mean (earliest on ties)."""
    if data.n == 0:
        raise ValueError("incumbent requires observed data")
    means = np.zeros(data.n)
    for model in models:
        means += posterior_many(model, data.inputs)[0]
    return np.array(data.inputs[int(np.argmax(means))])


def _build_prior_mean(config: StrategyConfig) -> PriorMean:
    box = config.initial_box
    if config.method == "EI-Q":
        return PriorMean.quadratic(box.center, box.widths)
    if config.method == "EI-H":
        return PriorMean.hinge_quadratic(box.center, box.circumradius, config.beta)
    return PriorMean.constant()


def _regularizer_info(pm: PriorMean, config: StrategyConfig) -> dict | None:
    if pm.variant == "constant":
        return None
    info = {"variant": pm.variant, "center": pm.center.tolist()}
    if pm.widths is not None:
        info["widths"] = pm.widths.tolist()
    if pm.radius is not None:
        info["radius"] = pm.radius
        info["curvature"] = pm.curvature
    return info


def _initial_hyperparams(data: Dataset, box: Box) -> HyperParams:
    var = float(np.var(data.observations))
    if var <= 0.0:
        var = 1.0
    return HyperParams(var, box.widths / 4.0, 1e-2 * var)


def _clip_into(prior: HyperPrior, hp: HyperParams) -> HyperParams:
    """Project a hyperparameter draw into the prior support (the support moves
    with the observation variance as data accumulates)."""
    z = prior.to_log(hp)
    span = prior.log_upper - prior.log_lower
    z = np.clip(z, prior.log_lower + 1e-9 * span, prior.log_upper - 1e-9 * span)
    return prior.from_log(z, hp.bias)


def _refit(data, init_hp, pm, config, rng, prior, burn_in):
    """Slice-sample hyperparameters and fit one model per draw, retrying once
    with a heavier jitter floor if factorization fails."""
    draws = slice_sample_hyperparams(
        data, init_hp, pm, config.mcmc_draws, burn_in, rng, prior=prior
    )
    try:
        models = [fit(data, hp, pm) for hp in draws]
    except IllConditionedModelError:
        models = [fit(data, hp, pm, jitter_base=1e-6) for hp in draws]
    return draws, models


def run(objective: Callable[[np.ndarray], float], config: StrategyConfig, *, clock=None) -> Trace:
    """Run the full optimization loop and return its trace.

    The first init_count points come from a latin hypercube on the initial
    box; every later point maximizes the draw-averaged expected improvement
    under the configured search-space mechanism. The final recommendation is
    the incumbent under a refit on all observations. Fully deterministic given
    config.seed; `clock` (e.g. time.perf_counter) enables per-iteration wall
    timing at the cost of bit-identical reruns.
    """
    box0 = config.initial_box
    d = box0.dim
    rng_lhs, rng_mcmc, rng_acq = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3))
    now = clock if clock is not None else (lambda: 0.0)

    pm = _build_prior_mean(config)
    psi = _regularizer_info(pm, config)

    records: list[TraceRecord] = []
    data = Dataset.empty(d)
    best = -np.inf

    def observe(x: np.ndarray, iteration: int, box: Box, started: float) -> None:
        nonlocal data, best
        y = float(objective(x))
        if not np.isfinite(y):
            raise EvaluationError(f"objective returned a non-finite value at evaluation {iteration}")
        data = data.append(x, y)
        best = max(best, y)
        records.append(
            TraceRecord(iteration, np.array(x, dtype=float), y, best, box.lower.copy(), box.upper.copy(), now() - started)
        )

    for i, x in enumerate(latin_hypercube(box0, config.init_count, rng_lhs), start=1):
        observe(x, i, box0, now())

    current_box = box0
    draws: list[HyperParams] | None = None
    models: list[GpModel] = []

    def refit() -> None:
        nonlocal draws, models
        prior = HyperPrior.from_data(data, box_widths=box0.widths)
        if draws is None:
            init_hp, burn = _initial_hyperparams(data, box0), config.mcmc_burn_in
        else:
            init_hp, burn = _clip_into(prior, draws[-1]), min(config.mcmc_burn_in, WARM_BURN_IN)
        draws, models = _refit(data, init_hp, pm, config, rng_mcmc, prior, burn)

    for e in range(config.init_count + 1, config.budget + 1):
        started = now()
        if config.method == "EI-V" and (e - config.init_count) % config.doubling_period == 0:
            current_box = expand_box(current_box, config.growth_factor)
        refit()
        tau = improvement_target(models[0])
        if config.method in ("EI-H", "EI-Q"):
            mode = UnboundedMode(box0.center, box0.circumradius)
        elif config.method == "EI-V":
            mode = BoundedMode(current_box)
        else:
            mode = BoundedMode(box0)
        x = maximize(AcquisitionContext(tuple(models), tau, mode), rng_acq)
        observe(x, e, current_box, started)

    refit()
    recommendation = incumbent(models, data)
    return Trace(config.method, config.seed, tuple(records), recommendation, psi)
