import numpy as np
import pytest

from mlpsel.mlp_core import Architecture, Dataset, ParamVector, mse, mse_and_gradient, predict
from mlpsel.optimizer import (
    FitConfig,
    FitError,
    NonFiniteError,
    bfgs_minimize,
    derive_seed,
    fit,
    traces_to_csv,
)
from mlpsel.simulation import gen_true_data


def quadratic(x):
    r = x - 1.0
    return float(r @ r), 2 * r


def rosenbrock(x):
    a, b = x
    value = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    grad = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return value, grad


def assert_monotone(trace):
    values = [v for _, v, _ in trace]
    assert all(later <= earlier for earlier, later in zip(values, values[1:]))


class TestBFGS:
    def test_quadratic(self):
        res = bfgs_minimize(quadratic, np.zeros(6))
        assert res.converged
        assert res.value < 1e-12
        np.testing.assert_allclose(res.x, 1.0, atol=1e-6)

    def test_rosenbrock(self):
        res = bfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), FitConfig(max_iterations=2000, gradient_tolerance=1e-9))
        assert res.converged
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)
        assert_monotone(res.trace)

    def test_never_worse_than_start(self, rng):
        data = Dataset(rng.normal(size=(40, 2)), rng.normal(size=40))
        arch = Architecture(2, 3)
        start = rng.uniform(-1, 1, arch.dim)
        res = bfgs_minimize(lambda v: mse_and_gradient(arch, v, data.inputs, data.targets), start)
        assert res.value <= mse(ParamVector(arch, start), data)
        assert_monotone(res.trace)

    def test_box_is_respected(self):
        # unconstrained minimizer at 5, box at 2
        def obj(x):
            r = x - 5.0
            return float(r @ r), 2 * r

        res = bfgs_minimize(obj, np.zeros(3), FitConfig(box_bound=2.0, init_half_width=1.0))
        np.testing.assert_array_equal(res.x, 2.0)
        assert res.converged

    def test_realizable_data_recovered(self, rng):
        arch = Architecture(2, 2)
        truth = ParamVector(arch, [0.3, 1.2, -0.8, 0.1, -0.4, 1.0, 0.5, -0.7, 1.1])
        inputs = rng.normal(size=(200, 2))
        data = Dataset(inputs, predict(truth, inputs))
        start = truth.values + 0.05 * rng.normal(size=arch.dim)
        res = bfgs_minimize(
            lambda v: mse_and_gradient(arch, v, data.inputs, data.targets),
            start,
            FitConfig(max_iterations=2000, gradient_tolerance=1e-10),
        )
        assert res.value < 1e-8
        np.testing.assert_allclose(predict(ParamVector(arch, res.x), inputs), data.targets, atol=1e-3)

    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteError):
            bfgs_minimize(lambda x: (float("nan"), np.zeros_like(x)), np.zeros(2))

    def test_converged_flag_means_small_gradient(self):
        res = bfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), FitConfig(max_iterations=3))
        assert not res.converged
        assert res.iterations == 3


class TestFitConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(restarts=0), dict(init_half_width=5, box_bound=1), dict(gradient_tolerance=0), dict(rng_seed=-1)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitConfig(**kwargs)


class TestFit:
    def test_true_model_noise_level(self):
        data = gen_true_data(1000, np.random.default_rng(11))
        res = fit(Architecture(2, 3), data, FitConfig(rng_seed=5))
        assert 0.28 <= res.mse_hat <= 0.38

    def test_constant_target(self, rng):
        data = Dataset(rng.normal(size=(30, 2)), np.full(30, 2.5))
        res = fit(Architecture(2, 2), data, FitConfig(rng_seed=1, restarts=3))
        assert res.mse_hat < 1e-10
        np.testing.assert_allclose(predict(res.theta_hat, data.inputs), 2.5, atol=1e-5)

    def test_deterministic(self):
        data = gen_true_data(200, np.random.default_rng(3))
        config = FitConfig(rng_seed=99, restarts=4)
        a = fit(Architecture(2, 3), data, config)
        b = fit(Architecture(2, 3), data, config)
        assert a.theta_hat.values.tobytes() == b.theta_hat.values.tobytes()
        assert (a.mse_hat, a.restart_index, a.iterations_used, a.converged) == (
            b.mse_hat,
            b.restart_index,
            b.iterations_used,
            b.converged,
        )

    def test_result_invariants(self):
        data = gen_true_data(200, np.random.default_rng(4))
        config = FitConfig(rng_seed=2, restarts=5)
        res = fit(Architecture(2, 4), data, config, keep_traces=True)
        assert res.mse_hat == pytest.approx(mse(res.theta_hat, data), abs=1e-12)
        finals = [trace[-1][1] for trace in res.traces.values()]
        assert res.mse_hat == pytest.approx(min(finals), abs=1e-12)
        assert res.theta_hat.in_box(config.box_bound)
        for trace in res.traces.values():
            assert_monotone(trace)

    def test_trace_csv(self):
        data = gen_true_data(50, np.random.default_rng(4))
        res = fit(Architecture(2, 1), data, FitConfig(rng_seed=2, restarts=2), keep_traces=True)
        lines = traces_to_csv(res.traces).splitlines()
        assert lines[0] == "restart_index,iteration,objective,gradient_norm"
        assert len(lines) == 1 + sum(len(t) for t in res.traces.values())

    def test_all_restarts_fail(self, monkeypatch):
        import mlpsel.optimizer as opt

        def broken(*args, **kwargs):
            raise NonFiniteError("boom")

        monkeypatch.setattr(opt, "bfgs_minimize", broken)
        data = Dataset(np.zeros((3, 1)), np.zeros(3))
        with pytest.raises(FitError, match="no successful restart"):
            opt.fit(Architecture(1, 1), data, FitConfig(restarts=2))

    def test_nesting(self):
        # larger families contain smaller ones; slack covers optimizer misses
        ok = 0
        trials = 20
        for t in range(trials):
            data = gen_true_data(150, np.random.default_rng(1000 + t))
            config = FitConfig(rng_seed=derive_seed(7, t), restarts=4)
            small = fit(Architecture(2, 1), data, config).mse_hat
            large = fit(Architecture(2, 2), data, config).mse_hat
            ok += large <= small + 1e-6
        assert ok >= 0.95 * trials


def test_derive_seed_distinct():
    seeds = {derive_seed(1, k) for k in range(100)}
    assert len(seeds) == 100
    assert derive_seed(1, 5) == derive_seed(1, 5)
