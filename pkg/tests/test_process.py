import numpy as np
import pytest

from riscon.process import (
    PlantState,
    ProcessModel,
    init_state,
    measure,
    sample_gaussian,
    step_process,
)

TINY = 1e-300


def scalar_model(a=1.0, **kw):
    return ProcessModel.scalar(a, **kw)


class TestModelValidation:
    def test_rejects_nonsymmetric_cov(self):
        with pytest.raises(ValueError, match="symmetric"):
            ProcessModel(
                A=np.eye(2), B=np.eye(2), C=np.eye(2),
                W=np.array([[1.0, 0.5], [0.0, 1.0]]),
                V=np.eye(2), D=np.eye(2), E=np.eye(2), P0=np.eye(2),
            )

    def test_rejects_indefinite_weight(self):
        with pytest.raises(ValueError, match="positive definite"):
            scalar_model(d=-1.0)

    def test_rejects_negative_initial_cov(self):
        with pytest.raises(ValueError, match="semidefinite"):
            scalar_model(p0=-0.1)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ProcessModel(
                A=np.eye(2), B=np.eye(2), C=np.eye(3),
                W=np.eye(2), V=np.eye(3), D=np.eye(2), E=np.eye(2), P0=np.eye(2),
            )

    def test_singular_initial_cov_allowed(self):
        scalar_model(p0=0.0)


class TestInitState:
    def test_zero_covariance_is_deterministic(self):
        model = scalar_model(p0=0.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert init_state(model, rng).x[0] == 0.0

    def test_unit_variance(self):
        model = scalar_model(p0=1.0)
        rng = np.random.default_rng(1)
        draws = np.array([init_state(model, rng).x[0] for _ in range(100_000)])
        assert abs(draws.var() - 1.0) < 0.05

    def test_identity_covariance_uncorrelated(self):
        model = ProcessModel(
            A=np.eye(2), B=np.eye(2), C=np.eye(2),
            W=np.eye(2), V=np.eye(2), D=np.eye(2), E=np.eye(2), P0=np.eye(2),
        )
        rng = np.random.default_rng(2)
        draws = sample_gaussian(model.P0, rng, size=100_000)
        offdiag = np.cov(draws.T)[0, 1]
        assert abs(offdiag) < 0.02
        assert init_state(model, rng).t == 0


class TestStepProcess:
    def test_noiseless_scalar(self):
        model = scalar_model(1.0, w=TINY)
        rng = np.random.default_rng(0)
        out = step_process(PlantState(x=[2.0]), np.array([-1.0]), model, rng)
        assert out.x[0] == pytest.approx(1.0, abs=1e-12)
        assert out.t == 1

    def test_pure_noise_variance(self):
        model = scalar_model(0.0, b=TINY, w=1.0)
        rng = np.random.default_rng(3)
        state = PlantState(x=[0.0])
        draws = np.array([
            step_process(state, np.zeros(1), model, rng).x[0] for _ in range(100_000)
        ])
        assert abs(draws.var() - 1.0) < 0.05

    def test_double_integrator(self):
        model = ProcessModel(
            A=np.array([[1.0, 1.0], [0.0, 1.0]]),
            B=np.zeros((2, 1)), C=np.eye(2),
            W=TINY * np.eye(2), V=np.eye(2), D=np.eye(2), E=np.eye(1),
            P0=np.eye(2),
        )
        rng = np.random.default_rng(0)
        out = step_process(PlantState(x=[1.0, 1.0]), np.zeros(1), model, rng)
        np.testing.assert_allclose(out.x, [2.0, 1.0], atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        model = scalar_model(1.0)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            step_process(PlantState(x=[1.0]), np.array([1.0, 2.0]), model, rng)


class TestMeasure:
    def test_noiseless(self):
        model = scalar_model(1.0, v=TINY)
        rng = np.random.default_rng(0)
        y = measure(PlantState(x=[3.0]), model, rng)
        assert y[0] == pytest.approx(3.0, abs=1e-12)

    def test_pure_noise_variance(self):
        model = scalar_model(1.0, c=0.0, v=1.0)
        rng = np.random.default_rng(4)
        state = PlantState(x=[5.0])
        draws = np.array([measure(state, model, rng)[0] for _ in range(100_000)])
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.05

    def test_projection(self):
        model = ProcessModel(
            A=np.eye(2), B=np.eye(2), C=np.array([[1.0, 0.0]]),
            W=np.eye(2), V=TINY * np.eye(1), D=np.eye(2), E=np.eye(2), P0=np.eye(2),
        )
        rng = np.random.default_rng(0)
        y = measure(PlantState(x=[4.0, -7.0]), model, rng)
        assert y[0] == pytest.approx(4.0, abs=1e-12)


class TestProperties:
    def test_stationary_variance_matches_lyapunov(self):
        # scalar fixed point of P = a^2 P + W is W / (1 - a^2)
        a, w = 0.8, 1.0
        model = scalar_model(a, b=TINY, w=w)
        rng = np.random.default_rng(5)
        state = PlantState(x=[0.0])
        xs = np.empty(100_000)
        for i in range(100_000):
            state = step_process(state, np.zeros(1), model, rng)
            xs[i] = state.x[0]
        stationary = w / (1.0 - a * a)
        assert abs(xs[200:].var() - stationary) / stationary < 0.05

    def test_noise_independent_across_plants_and_slots(self):
        model = scalar_model(0.0, b=TINY, w=1.0)
        rng_a = np.random.default_rng(6)
        rng_b = np.random.default_rng(7)
        state = PlantState(x=[0.0])
        wa = np.array([step_process(state, np.zeros(1), model, rng_a).x[0]
                       for _ in range(10_000)])
        wb = np.array([step_process(state, np.zeros(1), model, rng_b).x[0]
                       for _ in range(10_000)])
        assert abs(np.corrcoef(wa, wb)[0, 1]) < 0.04          # across plants
        assert abs(np.corrcoef(wa[:-1], wa[1:])[0, 1]) < 0.04  # across slots

    def test_reproducible_trajectories(self):
        model = scalar_model(1.1, w=0.5)
        def run(seed):
            rng = np.random.default_rng(seed)
            state = init_state(model, rng)
            traj = [state.x[0]]
            for _ in range(50):
                state = step_process(state, np.array([0.1]), model, rng)
                traj.append(state.x[0])
            return traj
        assert run(42) == run(42)
        assert run(42) != run(43)
