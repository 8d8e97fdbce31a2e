"""Gaussian-process regression with configurable prior means.

The surrogate is a GP with a squared-exponential ARD kernel whose prior mean
may be a constant or a coercive penalty (quadratic or hinge-quadratic) that
pulls the mean down far from a fixed center. Hyperparameters are handled by
coordinate-wise slice sampling over a log-uniform prior.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cholesky, solve_triangular

LOG_2PI = math.log(2.0 * math.pi)

JITTER_BASE = 1e-10  # first diagonal nudge, relative to the kernel amplitude
JITTER_MAX = 1e-4  # give up past this relative jitter


class IllConditionedModelError(RuntimeError):
    """Gram matrix failed to factorize even at the maximum jitter."""


class DegradedSamplingWarning(UserWarning):
    """Slice sampler could not evaluate the likelihood anywhere and fell back."""


@dataclass(frozen=True, eq=False)
class HyperParams:
    """One draw of the GP hyperparameters.

    amplitude is the kernel variance (output units squared), length_scales has
    one positive entry per input dimension, noise_variance is the observation
    noise, and bias shifts the prior mean.
    """

    amplitude: float
    length_scales: np.ndarray
    noise_variance: float = 0.0
    bias: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "bias", float(self.bias))
        if not self.amplitude > 0.0:
            raise ValueError("amplitude must be positive")
        if ls.ndim != 1 or not np.all(ls > 0.0):
            raise ValueError("length_scales must be a 1-d array of positive reals")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def dim(self) -> int:
        return self.length_scales.size


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed inputs (n, d) and observations (n,)."""

    inputs: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.atleast_1d(np.asarray(self.observations, dtype=float))
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ValueError("inputs must be an (n, d) array")
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and observations must have equal length")
        if y.size and not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "observations", y)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.empty((0, dim)), np.empty(0))

    @property
    def n(self) -> int:
        return self.observations.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def append(self, x: np.ndarray, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.inputs, x]), np.append(self.observations, y))


CONSTANT = "constant"
QUADRATIC = "quadratic"
HINGE_QUADRATIC = "hinge_quadratic"


@dataclass(frozen=True, eq=False)
class PriorMean:
    """Prior mean b - penalty_scale * xi(x).

    xi is zero for the constant variant, an anisotropic quadratic bowl for the
    quadratic variant, and a hinged radial ramp (zero inside the ball of the
    given radius) for the hinge-quadratic variant. The geometry (center,
    widths, radius) is frozen at construction and never refit from data;
    penalty_scale is the only field a fit updates, via `replace`.
    """

    variant: str
    bias: float = 0.0
    center: np.ndarray | None = None
    widths: np.ndarray | None = None
    radius: float | None = None
    curvature: float = 1.0
    penalty_scale: float = 0.0

    def __post_init__(self):
        if self.variant not in (CONSTANT, QUADRATIC, HINGE_QUADRATIC):
            raise ValueError(f"unknown prior mean variant {self.variant!r}")
        if self.center is not None:
            object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.variant == QUADRATIC:
            w = np.atleast_1d(np.asarray(self.widths, dtype=float))
            if self.center is None or w.shape != self.center.shape or not np.all(w > 0.0):
                raise ValueError("quadratic prior mean needs a center and positive widths")
            object.__setattr__(self, "widths", w)
        if self.variant == HINGE_QUADRATIC:
            if self.center is None or self.radius is None or not self.radius > 0.0:
                raise ValueError("hinge-quadratic prior mean needs a center and a positive radius")
            if not self.curvature > 0.0:
                raise ValueError("curvature must be positive")

    @classmethod
    def constant(cls, bias: float = 0.0) -> "PriorMean":
        return cls(CONSTANT, bias=bias)

    @classmethod
    def quadratic(cls, center, widths, bias: float = 0.0) -> "PriorMean":
        return cls(QUADRATIC, bias=bias, center=center, widths=np.asarray(widths, dtype=float))

    @classmethod
    def hinge_quadratic(cls, center, radius: float, curvature: float = 1.0, bias: float = 0.0) -> "PriorMean":
        return cls(HINGE_QUADRATIC, bias=bias, center=center, radius=float(radius), curvature=float(curvature))

    def regularizer(self, x: np.ndarray) -> float:
        """Penalty xi(x) >= 0 at a single point."""
        return float(self.regularizer_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def regularizer_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.variant == CONSTANT:
            return np.zeros(X.shape[0])
        self._check_dim(X)
        delta = X - self.center
        if self.variant == QUADRATIC:
            return np.sum((delta / self.widths) ** 2, axis=1)
        r = np.linalg.norm(delta, axis=1)
        return np.maximum(r - self.radius, 0.0) / (self.curvature * self.radius)

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        return self.bias - self.penalty_scale * self.regularizer_batch(X)

    def _check_dim(self, X: np.ndarray) -> None:
        if self.center is not None and X.shape[1] != self.center.size:
            raise ValueError(f"expected dimension {self.center.size}, got {X.shape[1]}")


def eval_prior_mean(pm: PriorMean, x: np.ndarray) -> float:
    """Prior mean value b - penalty_scale * xi(x) at a single point."""
    x = np.asarray(x, dtype=float)
    return float(pm.value_batch(x.reshape(1, -1))[0])


def se_kernel(x: np.ndarray, x2: np.ndarray, hp: HyperParams) -> float:
    """Squared-exponential ARD covariance between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.size != hp.dim:
        raise ValueError("point dimensions must match the hyperparameters")
    r2 = float(np.sum(((x - x2) / hp.length_scales) ** 2))
    return hp.amplitude * math.exp(-0.5 * r2)


def kernel_matrix(X: np.ndarray, X2: np.ndarray, hp: HyperParams) -> np.ndarray:
    """Cross-covariance matrix between two point sets, shape (len(X), len(X2))."""
    A = X / hp.length_scales
    B = X2 / hp.length_scales
    r2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(r2, 0.0, out=r2)
    return hp.amplitude * np.exp(-0.5 * r2)


def _chol_with_jitter(gram: np.ndarray, amplitude: float, base: float = JITTER_BASE):
    """Lower-Cholesky factor of gram + jitter*I, escalating jitter tenfold as needed."""
    jitter = base * amplitude
    limit = JITTER_MAX * amplitude
    A = gram.copy()
    n = gram.shape[0]
    idx = np.arange(n)
    while True:
        A[idx, idx] = gram[idx, idx] + jitter
        try:
            L = cholesky(A, lower=True, check_finite=False)
            return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter *= 10.0
        if jitter > limit * (1.0 + 1e-12):
            raise IllConditionedModelError(
                f"Gram matrix not positive definite at maximum jitter {limit:.3e}"
            )


def _resolve_prior_mean(pm: PriorMean, data: Dataset) -> PriorMean:
    """Fold the empirical observation mean into the bias and set the penalty scale.

    The penalty scale becomes the best centered observation; when the centered
    best is non-positive (all observations equal) it is floored at a small
    positive value so the penalty keeps its sign.
    """
    if data.n == 0:
        return pm
    y = data.observations
    ybar = float(np.mean(y))
    centered = y - ybar
    yplus = float(np.max(centered))
    if yplus <= 0.0:
        yplus = 1e-6 * (float(np.max(np.abs(centered))) + 1.0)
    return replace(pm, bias=pm.bias + ybar, penalty_scale=yplus)


@dataclass(frozen=True, eq=False)
class GpModel:
    """Immutable fitted surrogate: data, resolved prior mean, and factorization.

    `prior_mean` is the resolved mean (observation mean folded into the bias,
    penalty scale set); `weights` holds (K + noise*I)^{-1} (y - m). Models are
    rebuilt, never mutated, so the caches can never go stale. `chol_inv` and
    the scaled-input caches exist so that batched posterior queries are single
    matmuls.
    """

    data: Dataset
    hyperparams: HyperParams
    prior_mean: PriorMean
    chol: np.ndarray | None
    weights: np.ndarray
    jitter: float
    chol_inv: np.ndarray | None = None
    scaled_inputs: np.ndarray | None = None
    scaled_sq_norms: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.hyperparams.dim

    def prior_value(self, X: np.ndarray) -> np.ndarray:
        """Effective prior mean (including the hyperparameter bias) at (B, d) points."""
        return self.prior_mean.value_batch(X) + self.hyperparams.bias


def fit(data: Dataset, hp: HyperParams, pm: PriorMean, *, jitter_base: float = JITTER_BASE) -> GpModel:
    """Fit a GP to the dataset; an empty dataset yields the prior itself."""
    if data.n and data.dim != hp.dim:
        raise ValueError("dataset dimension must match the hyperparameters")
    resolved = _resolve_prior_mean(pm, data)
    if data.n == 0:
        return GpModel(data, hp, resolved, None, np.empty(0), 0.0)
    m = resolved.value_batch(data.inputs) + hp.bias
    gram = kernel_matrix(data.inputs, data.inputs, hp)
    gram[np.arange(data.n), np.arange(data.n)] += hp.noise_variance
    L, jitter = _chol_with_jitter(gram, hp.amplitude, jitter_base)
    resid = data.observations - m
    v = solve_triangular(L, resid, lower=True, check_finite=False)
    weights = solve_triangular(L.T, v, lower=False, check_finite=False)
    chol_inv = solve_triangular(L, np.eye(data.n), lower=True, check_finite=False)
    scaled = data.inputs / hp.length_scales
    return GpModel(
        data, hp, resolved, L, weights, jitter,
        chol_inv=chol_inv, scaled_inputs=scaled, scaled_sq_norms=np.sum(scaled**2, axis=1),
    )


def _cross_kernel(model: GpModel, X: np.ndarray) -> np.ndarray:
    """Covariance between the training inputs and (B, d) test points."""
    B = X / model.hyperparams.length_scales
    r2 = model.scaled_sq_norms[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * (model.scaled_inputs @ B.T)
    np.maximum(r2, 0.0, out=r2)
    return model.hyperparams.amplitude * np.exp(-0.5 * r2)


def posterior_many(model: GpModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances at (B, d) test points."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValueError(f"expected points of dimension {model.dim}")
    prior = model.prior_value(X)
    theta0 = model.hyperparams.amplitude
    if model.data.n == 0:
        return prior, np.full(X.shape[0], theta0)
    kx = _cross_kernel(model, X)
    means = prior + kx.T @ model.weights
    v = model.chol_inv @ kx
    variances = theta0 - np.sum(v * v, axis=0)
    return means, np.clip(variances, 0.0, theta0)


def posterior(model: GpModel, x: np.ndarray) -> tuple[float, float]:
    """Posterior mean and variance at a single point."""
    means, variances = posterior_many(model, np.asarray(x, dtype=float).reshape(1, -1))
    return float(means[0]), float(variances[0])


def _lml_from_gram(gram: np.ndarray, resid: np.ndarray, amplitude: float) -> float:
    L, _ = _chol_with_jitter(gram, amplitude)
    v = solve_triangular(L, resid, lower=True, check_finite=False)
    n = resid.size
    return float(-0.5 * (v @ v) - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)


def log_marginal_likelihood(data: Dataset, hp: HyperParams, pm: PriorMean) -> float:
    """Log evidence log N(y; m, K + noise*I) of the data under the GP.

    The prior mean is used exactly as given (no centering); centering is a fit
    policy, not part of the evidence.
    """
    if data.n == 0:
        raise ValueError("log marginal likelihood requires a non-empty dataset")
    m = pm.value_batch(data.inputs) + hp.bias
    gram = kernel_matrix(data.inputs, data.inputs, hp)
    gram[np.arange(data.n), np.arange(data.n)] += hp.noise_variance
    return _lml_from_gram(gram, data.observations - m, hp.amplitude)


@dataclass(frozen=True, eq=False)
class HyperPrior:
    """Independent log-uniform prior over (amplitude, length scales, noise variance).

    Bounds are stored in natural-log space, ordered amplitude first, then one
    length scale per dimension, then the noise variance. The bias is not
    sampled; it is handled by observation centering at fit time.
    """

    log_lower: np.ndarray
    log_upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.log_lower, dtype=float)
        hi = np.asarray(self.log_upper, dtype=float)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("prior bounds must satisfy lower < upper")
        object.__setattr__(self, "log_lower", lo)
        object.__setattr__(self, "log_upper", hi)

    @classmethod
    def from_data(cls, data: Dataset, box_widths: np.ndarray | None = None) -> "HyperPrior":
        """Scale-free default: amplitude and noise relative to the observation
        variance, length scales relative to the per-axis search widths (the
        data span when no box is given)."""
        var = float(np.var(data.observations)) if data.n else 0.0
        if var <= 0.0:
            var = 1.0
        if box_widths is None:
            span = np.ptp(data.inputs, axis=0) if data.n else np.ones(data.dim)
            box_widths = np.where(span > 0.0, span, 1.0)
        widths = np.asarray(box_widths, dtype=float)
        lo = np.concatenate([[1e-4 * var], 1e-3 * widths, [1e-8 * var]])
        hi = np.concatenate([[1e4 * var], 1e1 * widths, [1.0 * var]])
        return cls(np.log(lo), np.log(hi))

    @property
    def dim(self) -> int:
        return self.log_lower.size - 2

    def to_log(self, hp: HyperParams) -> np.ndarray:
        return np.log(np.concatenate([[hp.amplitude], hp.length_scales, [hp.noise_variance]]))

    def from_log(self, z: np.ndarray, bias: float = 0.0) -> HyperParams:
        theta = np.exp(z)
        return HyperParams(theta[0], theta[1:-1], theta[-1], bias)

    def contains(self, hp: HyperParams) -> bool:
        if hp.noise_variance <= 0.0:
            return False
        z = self.to_log(hp)
        return bool(np.all(z >= self.log_lower) and np.all(z <= self.log_upper))

    def sample(self, rng: np.random.Generator, bias: float = 0.0) -> HyperParams:
        z = rng.uniform(self.log_lower, self.log_upper)
        return self.from_log(z, bias)


_SLICE_WIDTH = math.log(10.0)  # one decade per step-out
_MAX_STEP_OUT = 100
_STARTUP_PROBES = 50


def _cached_loglik(data: Dataset, pm_resolved: PriorMean, bias: float):
    """Likelihood closure over log-space coordinates, reusing the per-axis
    squared-difference tensor across evaluations."""
    X = data.inputs
    diffs = (X[:, None, :] - X[None, :, :]) ** 2  # (n, n, d)
    resid = data.observations - (pm_resolved.value_batch(X) + bias)
    n = data.n
    idx = np.arange(n)

    def loglik(z: np.ndarray) -> float:
        theta = np.exp(z)
        gram = theta[0] * np.exp(-0.5 * (diffs @ (1.0 / theta[1:-1] ** 2)))
        gram[idx, idx] += theta[-1]
        return _lml_from_gram(gram, resid, theta[0])

    return loglik


def slice_sample_hyperparams(
    data: Dataset,
    init: HyperParams,
    pm: PriorMean,
    count: int,
    burn_in: int,
    rng: np.random.Generator,
    *,
    prior: HyperPrior | None = None,
    log_likelihood=None,
) -> list[HyperParams]:
    """Draw hyperparameters from the posterior via coordinate-wise slice sampling.

    Sampling runs in log-space where the log-uniform prior is flat, with
    step-out and shrinkage per coordinate. Returns `count` draws taken after
    `burn_in` discarded sweeps; deterministic given the generator state. The
    `log_likelihood` hook (HyperParams -> float) replaces the GP evidence, for
    testing. If no likelihood evaluation ever succeeds the sampler warns and
    returns `count` copies of `init`.
    """
    if data.n == 0:
        raise ValueError("slice sampling requires a non-empty dataset")
    if count < 1 or burn_in < 0:
        raise ValueError("count must be positive and burn_in non-negative")
    if prior is None:
        prior = HyperPrior.from_data(data)
    if not prior.contains(init):
        raise ValueError("init must lie inside the prior support")

    if log_likelihood is None:
        cached = _cached_loglik(data, _resolve_prior_mean(pm, data), init.bias)

        def raw_loglik(z):
            return cached(z)

    else:

        def raw_loglik(z):
            return float(log_likelihood(prior.from_log(z, init.bias)))

    lo, hi = prior.log_lower, prior.log_upper

    def target(z: np.ndarray) -> float:
        if np.any(z < lo) or np.any(z > hi):
            return -np.inf
        try:
            value = raw_loglik(z)
        except IllConditionedModelError:
            return -np.inf
        return value if np.isfinite(value) else -np.inf

    z = prior.to_log(init)
    lp = target(z)
    if not np.isfinite(lp):
        for _ in range(_STARTUP_PROBES):
            z_try = rng.uniform(lo, hi)
            lp_try = target(z_try)
            if np.isfinite(lp_try):
                z, lp = z_try, lp_try
                break
        else:
            warnings.warn(
                "likelihood evaluation failed everywhere; returning copies of init",
                DegradedSamplingWarning,
            )
            return [init] * count

    draws: list[HyperParams] = []
    k = z.size
    for sweep in range(burn_in + count):
        for i in range(k):
            level = lp + math.log(rng.random())
            u = rng.random()
            left = z[i] - u * _SLICE_WIDTH
            right = left + _SLICE_WIDTH
            z_probe = z.copy()
            for _ in range(_MAX_STEP_OUT):
                if left <= lo[i]:
                    break
                z_probe[i] = left
                if target(z_probe) <= level:
                    break
                left -= _SLICE_WIDTH
            for _ in range(_MAX_STEP_OUT):
                if right >= hi[i]:
                    break
                z_probe[i] = right
                if target(z_probe) <= level:
                    break
                right += _SLICE_WIDTH
            left = max(left, lo[i])
            right = min(right, hi[i])
            while True:
                proposal = left + rng.random() * (right - left)
                z_probe[i] = proposal
                lp_new = target(z_probe)
                if lp_new > level:
                    z[i] = proposal
                    lp = lp_new
                    break
                if proposal < z[i]:
                    left = proposal
                else:
                    right = proposal
                if right - left < 1e-14:
                    z_probe[i] = z[i]  # interval collapsed onto the current point
                    break
        if sweep >= burn_in:
            draws.append(prior.from_log(z, init.bias))
    return draws
