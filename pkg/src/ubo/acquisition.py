"""Expected improvement over a hyperparameter-marginalized GP, and its maximization.

With a constant prior mean this is plain EI; with a regularized prior mean the
same code yields an acquisition surface that decays far from the regularizer
center, which is what makes unbounded maximization well-posed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .box import Box
from .surrogate import GpModel

SQRT_2PI = math.sqrt(2.0 * math.pi)

EI_TAIL_Z = 40.0  # beyond this, use the asymptotic tail to avoid 0*inf
EI_FLOOR = 1e-300


class ExplorationFallbackWarning(UserWarning):
    """Acquisition was zero everywhere probed; fell back to the highest-variance probe."""


def expected_improvement(mean: float, std: float, target: float) -> float:
    """Expected value of max(f - target, 0) for f ~ Normal(mean, std**2)."""
    if math.isnan(mean) or math.isnan(std) or math.isnan(target):
        raise ValueError("expected_improvement requires finite, non-NaN arguments")
    if std < 0.0:
        raise ValueError("std must be non-negative")
    gap = mean - target
    if std == 0.0:
        return max(gap, 0.0)
    z = gap / std
    if z > EI_TAIL_Z:
        return gap
    if z < -EI_TAIL_Z:
        phi = math.exp(-0.5 * z * z) / SQRT_2PI
        value = std * phi / (z * z)
        return value if value >= EI_FLOOR else 0.0
    value = gap * 0.5 * math.erfc(-z / math.sqrt(2.0)) + std * math.exp(-0.5 * z * z) / SQRT_2PI
    if value < EI_FLOOR:
        return 0.0
    return value


def _ei_vector(means: np.ndarray, stds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    gap = means - targets
    positive = stds > 0.0
    safe = np.where(positive, stds, 1.0)
    z = gap / safe
    phi = np.exp(-0.5 * z * z) / SQRT_2PI
    values = gap * ndtr(z) + safe * phi
    tail = stds * phi / np.maximum(z * z, 1.0)
    values = np.where(z < -EI_TAIL_Z, tail, values)
    values = np.where(z > EI_TAIL_Z, gap, values)
    values = np.where(positive, values, np.maximum(gap, 0.0))
    values[values < EI_FLOOR] = 0.0
    return values


@dataclass(frozen=True)
class BoundedMode:
    box: Box


@dataclass(frozen=True)
class UnboundedMode:
    anchor: np.ndarray
    search_radius_hint: float

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.atleast_1d(np.asarray(self.anchor, dtype=float)))
        if not self.search_radius_hint > 0.0:
            raise ValueError("search_radius_hint must be positive")


@dataclass(frozen=True, eq=False)
class AcquisitionContext:
    """Models (one per hyperparameter draw), improvement target, and search mode.

    `target_fn`, when set, supplies a location-dependent target (the
    minimum-improvement view of regularization); otherwise the scalar `target`
    applies everywhere.
    """

    models: tuple[GpModel, ...]
    target: float
    mode: BoundedMode | UnboundedMode
    target_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        models = tuple(self.models)
        object.__setattr__(self, "models", models)
        if not models:
            raise ValueError("at least one model is required")
        first = models[0]
        for m in models[1:]:
            if m.dim != first.dim or not np.array_equal(m.data.inputs, first.data.inputs):
                raise ValueError("all models must share the dimension and dataset")
        if isinstance(self.mode, BoundedMode) and self.mode.box.dim != first.dim:
            raise ValueError("box dimension must match the models")

    @property
    def dim(self) -> int:
        return self.models[0].dim


def _priors_equal(a, b) -> bool:
    return (
        a.variant == b.variant
        and a.bias == b.bias
        and a.penalty_scale == b.penalty_scale
        and a.radius == b.radius
        and a.curvature == b.curvature
        and (a.center is None) == (b.center is None)
        and (a.center is None or np.array_equal(a.center, b.center))
        and (a.widths is None) == (b.widths is None)
        and (a.widths is None or np.array_equal(a.widths, b.widths))
    )


class _Ensemble:
    """Models stacked along a leading axis so a posterior query over all
    hyperparameter draws is a handful of batched matmuls."""

    def __init__(self, models: tuple[GpModel, ...]):
        self.models = models
        m0 = models[0]
        self.n = m0.data.n
        self.theta0 = np.array([m.hyperparams.amplitude for m in models])
        self.bias = np.array([m.hyperparams.bias for m in models])
        self.ls = np.stack([m.hyperparams.length_scales for m in models])
        self.shared_prior = all(_priors_equal(m.prior_mean, m0.prior_mean) for m in models[1:])
        if self.n:
            X = m0.data.inputs
            self.scaled = X[None, :, :] / self.ls[:, None, :]
            self.sq_norms = np.sum(self.scaled**2, axis=2)
            self.weights = np.stack([m.weights for m in models])
            self.chol_inv = np.stack([m.chol_inv for m in models])

    def _priors(self, X: np.ndarray) -> np.ndarray:
        if self.shared_prior:
            return self.models[0].prior_mean.value_batch(X)[None, :] + self.bias[:, None]
        return np.stack([m.prior_value(X) for m in self.models])

    def posterior(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances with shape (models, points)."""
        prior = self._priors(X)
        if self.n == 0:
            return prior, np.broadcast_to(self.theta0[:, None], prior.shape).copy()
        Q = X[None, :, :] / self.ls[:, None, :]
        r2 = self.sq_norms[:, :, None] + np.sum(Q * Q, axis=2)[:, None, :] - 2.0 * (self.scaled @ Q.transpose(0, 2, 1))
        np.maximum(r2, 0.0, out=r2)
        kx = self.theta0[:, None, None] * np.exp(-0.5 * r2)
        means = prior + np.einsum("mnb,mn->mb", kx, self.weights)
        v = self.chol_inv @ kx
        variances = self.theta0[:, None] - np.sum(v * v, axis=1)
        np.clip(variances, 0.0, self.theta0[:, None], out=variances)
        return means, variances


def _ensemble(ctx: AcquisitionContext) -> _Ensemble:
    cached = getattr(ctx, "_ens", None)
    if cached is None:
        cached = _Ensemble(ctx.models)
        object.__setattr__(ctx, "_ens", cached)
    return cached


def acquisition_values(ctx: AcquisitionContext, X: np.ndarray) -> np.ndarray:
    """Draw-averaged expected improvement at (B, d) points."""
    X = np.asarray(X, dtype=float)
    targets = ctx.target_fn(X) if ctx.target_fn is not None else np.full(X.shape[0], ctx.target)
    means, variances = _ensemble(ctx).posterior(X)
    return _ei_vector(means, np.sqrt(variances), targets[None, :]).mean(axis=0)


def acquisition_value(ctx: AcquisitionContext, x: np.ndarray) -> float:
    """Draw-averaged expected improvement at a single point."""
    return float(acquisition_values(ctx, np.asarray(x, dtype=float).reshape(1, -1))[0])


def improvement_target(model: GpModel) -> float:
    """Scalar target: the best observation as seen through the fitted model
    (resolved bias plus the centered best)."""
    return model.prior_mean.bias + model.hyperparams.bias + model.prior_mean.penalty_scale


def min_improvement_target(regularized_model: GpModel) -> Callable[[np.ndarray], np.ndarray]:
    """Location-dependent target demanding extra improvement far out: the
    minimum-improvement view of the model's regularizer."""
    pm = regularized_model.prior_mean
    base = improvement_target(regularized_model)

    def targets(X: np.ndarray) -> np.ndarray:
        return base + pm.penalty_scale * pm.regularizer_batch(np.asarray(X, dtype=float))

    return targets


def duality_gap(ctx_priormean: AcquisitionContext, ctx_minimp: AcquisitionContext, x: np.ndarray) -> float:
    """Signed difference between the prior-mean and minimum-improvement views
    of regularized EI at a point. Zero wherever the regularizer vanishes on
    both the query and the data; small far from all data."""
    a = ctx_priormean.models[0].data
    b = ctx_minimp.models[0].data
    if not (np.array_equal(a.inputs, b.inputs) and np.array_equal(a.observations, b.observations)):
        raise ValueError("both contexts must be built from the same dataset")
    return acquisition_value(ctx_priormean, x) - acquisition_value(ctx_minimp, x)


_REFINE_SEEDS = 4  # plus one per dimension
_SHRINK_REL_TOL = 1e-8
_STEP_KILL = 1e-9  # step fraction of its initial size at which a seed is done


def _pattern_search(fn, starts: np.ndarray, step0: np.ndarray, budget_per_seed: int,
                    lower=None, upper=None):
    """Lockstep coordinate search: all seeds sweep axes together so each
    poll is one batched evaluation. Steps halve whenever a sweep gains less
    than _SHRINK_REL_TOL relative; a seed stops once its steps are negligible
    or its evaluation budget is spent."""
    X = np.array(starts, dtype=float)
    S, d = X.shape
    f = fn(X)
    steps = np.tile(np.asarray(step0, dtype=float), (S, 1))
    floor = _STEP_KILL * np.asarray(step0, dtype=float)
    evals = np.zeros(S, dtype=int)
    active = np.ones(S, dtype=bool)
    while np.any(active):
        f_before = f.copy()
        for axis in range(d):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            plus = X[idx].copy()
            minus = X[idx].copy()
            plus[:, axis] += steps[idx, axis]
            minus[:, axis] -= steps[idx, axis]
            if lower is not None:
                np.clip(plus, lower, upper, out=plus)
                np.clip(minus, lower, upper, out=minus)
            fc = fn(np.concatenate([plus, minus], axis=0))
            f_plus, f_minus = fc[: idx.size], fc[idx.size :]
            take_plus = f_plus >= f_minus
            best = np.where(take_plus, f_plus, f_minus)
            coord = np.where(take_plus, plus[:, axis], minus[:, axis])
            gain = best > f[idx]
            moved = idx[gain]
            X[moved, axis] = coord[gain]
            f[moved] = best[gain]
            evals[idx] += 2
            active[idx[evals[idx] >= budget_per_seed]] = False
        rel = (f - f_before) / np.maximum(np.abs(f_before), 1e-300)
        stalled = active & (rel < _SHRINK_REL_TOL)
        steps[stalled] *= 0.5
        active &= ~np.all(steps <= floor, axis=1)
    return X, f


def _fallback_probe(ctx: AcquisitionContext, probes: np.ndarray) -> np.ndarray:
    variance = _ensemble(ctx).posterior(probes)[1].mean(axis=0)
    warnings.warn(
        "acquisition is zero everywhere probed; returning the highest-variance probe",
        ExplorationFallbackWarning,
    )
    return probes[int(np.argmax(variance))]


def _median_length_scales(models: Sequence[GpModel]) -> np.ndarray:
    return np.median(np.stack([m.hyperparams.length_scales for m in models]), axis=0)


def maximize(ctx: AcquisitionContext, rng: np.random.Generator, *, objective_fn=None) -> np.ndarray:
    """Return a point (approximately) maximizing the acquisition surface.

    Bounded mode probes 500*d uniform points in the box and refines the best
    probes by clipped coordinate search. Unbounded mode seeds from the
    observed points, Gaussian perturbations of the incumbent at 0.1/1/10 times
    the median length scale, and uniform draws in the anchor box inflated
    fourfold, then refines without constraints. Deterministic given the
    generator. `objective_fn` replaces the acquisition surface, for testing.
    """
    fn = objective_fn if objective_fn is not None else (lambda X: acquisition_values(ctx, X))
    d = ctx.dim
    n_refine = _REFINE_SEEDS + d

    if isinstance(ctx.mode, BoundedMode):
        box = ctx.mode.box
        probes = box.sample_uniform(500 * d, rng)
        lower, upper = box.lower, box.upper
        step0 = box.widths / 8.0
    else:
        anchor, hint = ctx.mode.anchor, ctx.mode.search_radius_hint
        data = ctx.models[0].data
        med_ls = _median_length_scales(ctx.models)
        seeds = [data.inputs] if data.n else []
        if data.n:
            means = _ensemble(ctx).posterior(data.inputs)[0].mean(axis=0)
            incumbent = data.inputs[int(np.argmax(means))]
        else:
            incumbent = anchor
        for scale in (0.1, 1.0, 10.0):
            seeds.append(incumbent + scale * med_ls * rng.standard_normal((4, d)))
        wide = Box(anchor - hint, anchor + hint).inflate(4.0)
        seeds.append(wide.sample_uniform(10 * d + 10, rng))
        probes = np.vstack(seeds)
        lower = upper = None
        step0 = med_ls

    values = fn(probes)
    order = np.argsort(values)[::-1][:n_refine]
    refined, refined_vals = _pattern_search(fn, probes[order], step0, 200 * d, lower, upper)

    best_refined = int(np.argmax(refined_vals))
    best_probe = int(np.argmax(values))
    if refined_vals[best_refined] >= values[best_probe]:
        result, best_value = refined[best_refined], refined_vals[best_refined]
    else:
        result, best_value = probes[best_probe], values[best_probe]

    if best_value <= 0.0:
        result = _fallback_probe(ctx, probes)
    if not np.all(np.isfinite(result)):
        raise RuntimeError("acquisition maximizer produced non-finite coordinates")
    return np.array(result, dtype=float)
