"""Expected improvement, its regularized duality, and acquisition maximization."""

import numpy as np
import pytest

from ubo.acquisition import (
    AcquisitionContext,
    BoundedMode,
    ExplorationFallbackWarning,
    UnboundedMode,
    acquisition_value,
    acquisition_values,
    duality_gap,
    expected_improvement,
    improvement_target,
    maximize,
    min_improvement_target,
)
from ubo.box import Box
from ubo.surrogate import Dataset, HyperParams, PriorMean, fit, posterior

from _support import oracle_gram, oracle_kernel, random_dataset, random_hyperparams


class TestExpectedImprovement:
    def test_at_target_with_unit_std(self):
        # (mean - tau) = 0 leaves only std * pdf(0)
        assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(0.3989422804014327, abs=1e-12)

    def test_degenerate_std_below_target(self):
        assert expected_improvement(-1.0, 0.0, 0.0) == 0.0

    def test_degenerate_std_above_target(self):
        assert expected_improvement(2.5, 0.0, 1.0) == 1.5

    def test_matches_monte_carlo_oracle(self):
        mean, std, tau = 0.3, 0.7, 0.1
        rng = np.random.default_rng(2024)
        draws = mean + std * rng.standard_normal(10_000_000)
        estimate = float(np.mean(np.maximum(draws - tau, 0.0)))
        assert expected_improvement(mean, std, tau) == pytest.approx(estimate, abs=3e-3)

    def test_monotone_in_mean(self):
        for std in (0.1, 1.0, 3.0):
            values = [expected_improvement(m, std, 0.0) for m in np.linspace(-5, 5, 41)]
            assert all(b >= a for a, b in zip(values, values[1:]))

    def test_monotone_in_std_below_target(self):
        for mean in (-2.0, -0.5, 0.0):
            values = [expected_improvement(mean, s, 0.0) for s in np.linspace(0.0, 3.0, 31)]
            assert all(b >= a for a, b in zip(values, values[1:]))

    def test_non_negative_and_finite(self):
        rng = np.random.default_rng(8)
        for _ in range(500):
            v = expected_improvement(rng.normal(), abs(rng.normal()), rng.normal())
            assert np.isfinite(v) and v >= 0.0

    def test_extreme_tails_stay_finite(self):
        assert expected_improvement(-1e6, 1.0, 0.0) == 0.0
        assert expected_improvement(1e6, 1.0, 0.0) == pytest.approx(1e6)
        assert expected_improvement(-80.0, 1.0, 0.0) == 0.0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            expected_improvement(float("nan"), 1.0, 0.0)
        with pytest.raises(ValueError):
            expected_improvement(0.0, -1.0, 0.0)


def _fit_models(data, pm, hps):
    return tuple(fit(data, hp, pm) for hp in hps)


class TestAcquisitionValue:
    def test_single_model_equals_scalar_ei(self):
        rng = np.random.default_rng(21)
        data = random_dataset(rng, 6, 2)
        model = fit(data, random_hyperparams(rng, 2), PriorMean.constant())
        tau = improvement_target(model)
        ctx = AcquisitionContext((model,), tau, BoundedMode(Box([-1, -1], [1, 1])))
        for x in rng.uniform(-1, 1, size=(10, 2)):
            mean, var = posterior(model, x)
            # scalar path uses erfc, vector path ndtr; they agree to ~1e-11 in the tails
            assert acquisition_value(ctx, x) == pytest.approx(
                expected_improvement(mean, np.sqrt(var), tau), rel=1e-9, abs=1e-300
            )

    def test_identical_models_average_is_idempotent(self):
        rng = np.random.default_rng(22)
        data = random_dataset(rng, 5, 1)
        hp = random_hyperparams(rng, 1)
        m1 = fit(data, hp, PriorMean.constant())
        m2 = fit(data, hp, PriorMean.constant())
        tau = improvement_target(m1)
        one = AcquisitionContext((m1,), tau, BoundedMode(Box([-1], [1])))
        two = AcquisitionContext((m1, m2), tau, BoundedMode(Box([-1], [1])))
        x = np.array([0.3])
        assert acquisition_value(one, x) == acquisition_value(two, x)

    def test_non_negative_everywhere(self):
        rng = np.random.default_rng(23)
        data = random_dataset(rng, 8, 2)
        pm = PriorMean.hinge_quadratic([0.0, 0.0], 1.0)
        models = _fit_models(data, pm, [random_hyperparams(rng, 2) for _ in range(3)])
        ctx = AcquisitionContext(models, improvement_target(models[0]), UnboundedMode([0.0, 0.0], 1.0))
        X = rng.uniform(-30, 30, size=(200, 2))
        assert np.all(acquisition_values(ctx, X) >= 0.0)


def _hinge_fixture(rng, n=8, d=1, radius=1.0, spread_y=2.0):
    """Data inside the hinge ball with O(1) observation spread, so the
    regularized acquisition visibly decays outside."""
    X = rng.uniform(-0.6 * radius / np.sqrt(d), 0.6 * radius / np.sqrt(d), size=(n, d))
    y = spread_y * rng.standard_normal(n)
    data = Dataset(X, y)
    pm = PriorMean.hinge_quadratic(np.zeros(d), radius)
    var_y = float(np.var(y))
    hp = HyperParams(var_y, np.full(d, 0.3), 1e-4 * var_y)
    return data, pm, hp


class TestRegularizedDecay:
    def test_far_value_negligible_next_to_incumbent(self):
        rng = np.random.default_rng(31)
        data, pm, hp = _hinge_fixture(rng, d=2)
        model = fit(data, hp, pm)
        ctx = AcquisitionContext((model,), improvement_target(model), UnboundedMode(np.zeros(2), 1.0))
        means = [posterior(model, x)[0] for x in data.inputs]
        incumbent = data.inputs[int(np.argmax(means))]
        at_incumbent = acquisition_value(ctx, incumbent)
        direction = np.array([1.0, 1.0]) / np.sqrt(2)
        far = pm.center + 20.0 * pm.radius * direction  # no data within 10 length scales
        assert acquisition_value(ctx, far) <= 1e-6 * at_incumbent

    def test_decay_along_rays(self):
        rng = np.random.default_rng(32)
        data, pm, hp = _hinge_fixture(rng, d=2)
        model = fit(data, hp, pm)
        ctx = AcquisitionContext((model,), improvement_target(model), UnboundedMode(np.zeros(2), 1.0))
        means = [posterior(model, x)[0] for x in data.inputs]
        at_incumbent = acquisition_value(ctx, data.inputs[int(np.argmax(means))])
        scale = max(pm.radius, 1.0)
        for _ in range(5):
            u = rng.standard_normal(2)
            u /= np.linalg.norm(u)
            values = [acquisition_value(ctx, pm.center + r * scale * u) for r in (4, 8, 16, 32)]
            assert all(a >= b for a, b in zip(values, values[1:]))
            assert values[-1] <= 1e-8 * at_incumbent


class TestDuality:
    def _views(self, rng, d=1, radius=1.5):
        data, pm, hp = _hinge_fixture(rng, n=6, d=d, radius=radius)
        reg_model = fit(data, hp, pm)
        const_model = fit(data, hp, PriorMean.constant())
        tau = improvement_target(reg_model)
        assert tau == pytest.approx(improvement_target(const_model))
        mode = UnboundedMode(np.zeros(d), radius)
        ctx_pm = AcquisitionContext((reg_model,), tau, mode)
        ctx_mi = AcquisitionContext((const_model,), tau, mode, target_fn=min_improvement_target(reg_model))
        return data, pm, hp, reg_model, const_model, ctx_pm, ctx_mi

    def test_gap_zero_inside_hinge_ball(self):
        rng = np.random.default_rng(41)
        data, pm, hp, _, _, ctx_pm, ctx_mi = self._views(rng)
        for _ in range(20):
            x = rng.uniform(-pm.radius, pm.radius, size=1) * 0.9
            assert duality_gap(ctx_pm, ctx_mi, x) == 0.0

    def test_gap_negligible_far_from_data(self):
        rng = np.random.default_rng(42)
        data, pm, hp, _, _, ctx_pm, ctx_mi = self._views(rng)
        for sign in (-1.0, 1.0):
            x = np.array([sign * 10.0])  # >= 10 length scales from any data
            assert abs(duality_gap(ctx_pm, ctx_mi, x)) <= 1e-6 * hp.amplitude

    def test_gap_matches_extra_term_oracle(self):
        rng = np.random.default_rng(43)
        data, pm, hp, reg_model, const_model, ctx_pm, ctx_mi = self._views(rng)
        yplus = reg_model.prior_mean.penalty_scale
        tau = improvement_target(const_model)
        A = oracle_gram(data.inputs, hp.amplitude, hp.length_scales, hp.noise_variance, reg_model.jitter)
        xi_train = pm.regularizer_batch(data.inputs)
        for x_adj in (np.array([1.9]), np.array([-2.2]), np.array([2.6])):
            mean_c, var = posterior(const_model, x_adj)
            sigma = float(np.sqrt(var))
            k = np.array([oracle_kernel(x_adj, xi, hp.amplitude, hp.length_scales) for xi in data.inputs])
            extra = yplus * float(k @ np.linalg.solve(A, xi_train))
            xi_x = pm.regularizer(x_adj)
            expected = expected_improvement(mean_c - yplus * xi_x + extra, sigma, tau) - expected_improvement(
                mean_c, sigma, tau + yplus * xi_x
            )
            assert duality_gap(ctx_pm, ctx_mi, x_adj) == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_mismatched_datasets_rejected(self):
        rng = np.random.default_rng(44)
        _, _, _, _, _, ctx_pm, _ = self._views(rng)
        _, _, _, _, _, _, ctx_other = self._views(rng)
        with pytest.raises(ValueError):
            duality_gap(ctx_pm, ctx_other, np.array([0.0]))


class TestMaximize:
    def test_bounded_quadratic_finds_center(self):
        box = Box([-1.0, 2.0], [3.0, 6.0])
        center = box.center
        rng = np.random.default_rng(51)
        data = random_dataset(rng, 4, 2)
        model = fit(data, random_hyperparams(rng, 2), PriorMean.constant())
        ctx = AcquisitionContext((model,), 0.0, BoundedMode(box))

        def surface(X):
            return 1.0 - np.sum((X - center) ** 2, axis=1)

        result = maximize(ctx, np.random.default_rng(52), objective_fn=surface)
        assert np.all(np.abs(result - center) <= 1e-4)

    def test_bounded_result_feasible_and_beats_probes(self):
        rng = np.random.default_rng(53)
        data = random_dataset(rng, 10, 2)
        box = Box([-1.0, -1.0], [1.0, 1.0])
        models = _fit_models(data, PriorMean.constant(), [random_hyperparams(rng, 2) for _ in range(3)])
        ctx = AcquisitionContext(models, improvement_target(models[0]), BoundedMode(box))
        result = maximize(ctx, np.random.default_rng(54))
        assert box.contains(result)
        assert np.all(np.isfinite(result))
        probes = box.sample_uniform(500 * 2, np.random.default_rng(12345))
        assert acquisition_value(ctx, result) >= float(np.max(acquisition_values(ctx, probes)))

    def test_unbounded_matches_dense_grid(self):
        rng = np.random.default_rng(55)
        data, pm, hp = _hinge_fixture(rng, n=6, d=1)
        models = _fit_models(data, pm, [hp, HyperParams(hp.amplitude * 1.5, hp.length_scales * 1.3, hp.noise_variance)])
        ctx = AcquisitionContext(models, improvement_target(models[0]), UnboundedMode([0.0], 1.0))
        result = maximize(ctx, np.random.default_rng(56))
        grid = np.linspace(-8.0, 8.0, 1_000_000).reshape(-1, 1)
        grid_best = -np.inf
        for chunk in np.array_split(grid, 20):
            grid_best = max(grid_best, float(np.max(acquisition_values(ctx, chunk))))
        assert acquisition_value(ctx, result) >= grid_best - 1e-6

    def test_unbounded_deterministic(self):
        rng = np.random.default_rng(57)
        data, pm, hp = _hinge_fixture(rng, d=2)
        models = _fit_models(data, pm, [hp])
        ctx = AcquisitionContext(models, improvement_target(models[0]), UnboundedMode(np.zeros(2), 1.0))
        a = maximize(ctx, np.random.default_rng(99))
        b = maximize(ctx, np.random.default_rng(99))
        assert np.array_equal(a, b)

    def test_zero_acquisition_falls_back_to_variance(self):
        rng = np.random.default_rng(58)
        data = random_dataset(rng, 6, 1)
        model = fit(data, HyperParams(1.0, [0.5], 1e-4), PriorMean.constant())
        box = Box([-1.0], [1.0])
        ctx = AcquisitionContext((model,), 1e12, BoundedMode(box))  # unreachable target
        with pytest.warns(ExplorationFallbackWarning):
            result = maximize(ctx, np.random.default_rng(59))
        assert box.contains(result)

    def test_context_validation(self):
        rng = np.random.default_rng(60)
        with pytest.raises(ValueError):
            AcquisitionContext((), 0.0, BoundedMode(Box([0.0], [1.0])))
        d1 = fit(random_dataset(rng, 3, 1), random_hyperparams(rng, 1), PriorMean.constant())
        d2 = fit(random_dataset(rng, 4, 1), random_hyperparams(rng, 1), PriorMean.constant())
        with pytest.raises(ValueError):
            AcquisitionContext((d1, d2), 0.0, BoundedMode(Box([0.0], [1.0])))
