import math

import numpy as np
import pytest

from riscon.channel import (
    ChannelStatistics,
    PhaseVector,
    _sample_batch,
    estimate_gamma,
    estimate_moments,
    estimate_outage,
)
from riscon.estimation import expected_cov_trajectory, kf_posterior_schedule
from riscon.lqr import riccati_backward
from riscon.phase_opt import (
    InfeasibleGammaError,
    assemble_q,
    build_sdp_instance,
    choose_phase_sdp,
    dp_oracle,
    expected_signal_margin,
    g_matrix,
    lookahead_objective,
    lookahead_on_grid,
    markov_error_bound,
    random_phase_baseline,
    rate_threshold,
    uniform_phase_grid,
)
from riscon.process import ProcessModel
from riscon.sdp import rank_one_objective


def close_stats(K=1, M=1, rician_k=2.0, gain=1.0):
    """Short-range geometry where the erasure bound is informative."""
    sensors = [[2.0, 1.0 + 0.8 * i] for i in range(K)]
    controllers = [[-2.0 - 0.6 * i, 1.5 + 0.5 * i] for i in range(K)]
    return ChannelStatistics(
        sensor_positions=np.array(sensors),
        controller_positions=np.array(controllers),
        M=M, rician_k=rician_k, alpha_direct=3.5, alpha_ris=2.2,
        reference_gain=gain,
    )


class TestAssembleQ:
    def test_single_plant_has_no_interference_terms(self):
        stats = close_stats(K=1, M=3)
        moments = estimate_moments(stats, 500, np.random.default_rng(0))
        q_mats, deltas = assemble_q(moments, 1.0)
        np.testing.assert_allclose(q_mats[0][:3, :3], np.conj(moments.E_HH[0, 0]),
                                   atol=1e-12)
        assert deltas[0] == pytest.approx(moments.E_hh[0, 0])

    def test_zero_direct_links(self):
        from riscon.channel import MomentSet

        m = 2
        e_hh = np.zeros((1, 1, m, m), dtype=complex)
        e_hh[0, 0] = np.eye(m)
        moments = MomentSet(E_HH=e_hh, E_Hh=np.zeros((1, 1, m), dtype=complex),
                            E_hh=np.zeros((1, 1)), sample_count=1)
        q_mats, deltas = assemble_q(moments, 1.0)
        np.testing.assert_allclose(q_mats[0][:m, m], 0.0)
        np.testing.assert_allclose(q_mats[0][m, :m], 0.0)
        assert deltas[0] == 0.0

    def test_quadratic_form_reproduces_expected_margin(self):
        # theta~^H Q theta~ + Delta equals a fresh Monte-Carlo estimate of
        # E[S - (2^R - 1) I] within combined standard errors
        stats = close_stats(K=2, M=3)
        rate, n1, n2 = 1.0, 20_000, 20_000
        moments = estimate_moments(stats, n1, np.random.default_rng(1))
        q_mats, deltas = assemble_q(moments, rate)
        h_sc, h_rc, h_sr = _sample_batch(stats, np.random.default_rng(2), n2)
        rng = np.random.default_rng(3)
        for _ in range(5):
            theta = PhaseVector.from_phases(rng.uniform(0, 2 * math.pi, 3))
            reflected = np.einsum("bli,bki,i->blk", np.conj(h_sr), h_rc, theta.theta)
            powers = np.abs(h_sc + reflected) ** 2
            for k in range(2):
                S = powers[:, k, k]
                I = powers[:, :, k].sum(axis=1) - S
                values = S - (2.0 ** rate - 1.0) * I
                predicted = expected_signal_margin(q_mats[k], deltas[k], theta)
                se = values.std(ddof=1) * math.sqrt(1.0 / n1 + 1.0 / n2)
                assert abs(predicted - values.mean()) <= 3.0 * se


class TestMarkovBound:
    def test_zero_when_gamma_equals_margin(self):
        stats = close_stats()
        moments = estimate_moments(stats, 2_000, np.random.default_rng(4))
        theta = PhaseVector.from_phases([0.7])
        q_mats, deltas = assemble_q(moments, 1.0)
        margin = expected_signal_margin(q_mats[0], deltas[0], theta)
        assert markov_error_bound(moments, theta, margin, 1.0, 1e-4) == 0.0

    def test_one_when_threshold_equals_margin(self):
        stats = close_stats()
        moments = estimate_moments(stats, 2_000, np.random.default_rng(5))
        theta = PhaseVector.from_phases([0.7])
        q_mats, deltas = assemble_q(moments, 1.0)
        margin = expected_signal_margin(q_mats[0], deltas[0], theta)
        noise = margin / (2.0 ** 1.0 - 1.0)
        assert markov_error_bound(moments, theta, 10.0 * margin, 1.0, noise) == 1.0

    def test_clamped_to_unit_interval(self):
        stats = close_stats()
        moments = estimate_moments(stats, 2_000, np.random.default_rng(6))
        rng = np.random.default_rng(7)
        gamma = estimate_gamma(stats, 1.0, 2_000, np.random.default_rng(6))[0]
        for _ in range(50):
            theta = PhaseVector.from_phases(rng.uniform(0, 2 * math.pi, 1))
            noise = 10.0 ** rng.uniform(-6, 0)
            if gamma <= rate_threshold(1.0, noise):
                continue
            bound = markov_error_bound(moments, theta, gamma, 1.0, noise)
            assert 0.0 <= bound <= 1.0

    def test_infeasible_gamma_raises(self):
        stats = close_stats()
        moments = estimate_moments(stats, 500, np.random.default_rng(8))
        with pytest.raises(InfeasibleGammaError):
            markov_error_bound(moments, PhaseVector.from_phases([0.0]),
                               gamma=1e-9, rate=1.0, noise=1.0)

    def test_dominates_empirical_outage_on_grid(self):
        stats = close_stats(K=1, M=1, rician_k=math.inf)
        samples = 20_000
        moments = estimate_moments(stats, 64, np.random.default_rng(9))
        gamma = estimate_gamma(stats, 1.0, 64, np.random.default_rng(9))[0]
        rate, noise = 4.0, 2e-4
        for phi in np.linspace(0, 2 * math.pi, 36, endpoint=False):
            theta = PhaseVector.from_phases([phi])
            bound = markov_error_bound(moments, theta, gamma, rate, noise)
            outage = estimate_outage(stats, theta, rate, noise, samples,
                                     np.random.default_rng(10))[0]
            se = math.sqrt(max(outage * (1.0 - outage), 1e-12) / samples)
            assert outage <= bound + 3.0 * se


class TestLookaheadObjective:
    def _fixture(self, K=1, M=1, seed=11):
        stats = close_stats(K=K, M=M)
        moments = estimate_moments(stats, 5_000, np.random.default_rng(seed))
        gammas = estimate_gamma(stats, 1.0, 5_000, np.random.default_rng(seed))
        q_mats, deltas = assemble_q(moments, 1.0)
        return stats, moments, gammas, q_mats, deltas

    def test_zero_weights_zero_objective(self):
        _, _, gammas, q_mats, deltas = self._fixture()
        theta = PhaseVector.from_phases([1.0])
        value = lookahead_objective([np.zeros((1, 1))], [np.eye(1)], q_mats, deltas,
                                    gammas, 1.0, 1e-4, theta)
        assert value == 0.0

    def test_affine_in_quadratic_form(self):
        _, _, gammas, q_mats, deltas = self._fixture()
        F = [np.array([[2.0]])]
        G = [np.array([[3.0]])]
        noise = 1e-4
        thetas = [PhaseVector.from_phases([p]) for p in (0.1, 2.0, 4.0)]
        quads = [rank_one_objective(q_mats[0], th) for th in thetas]
        values = [lookahead_objective(F, G, q_mats, deltas, gammas, 1.0, noise, th)
                  for th in thetas]
        # value = w * (gamma - delta - quad) / (gamma - thr): affine, slope < 0
        slope01 = (values[1] - values[0]) / (quads[1] - quads[0])
        slope12 = (values[2] - values[1]) / (quads[2] - quads[1])
        assert slope01 == pytest.approx(slope12, rel=1e-9)
        assert slope01 < 0.0

    def test_grid_argmin_matches_offdiagonal_alignment(self):
        _, _, gammas, q_mats, deltas = self._fixture(seed=12)
        F = [np.array([[1.0]])]
        G = [np.array([[1.0]])]
        grid = np.linspace(0, 2 * math.pi, 360, endpoint=False)
        values = [
            lookahead_objective(F, G, q_mats, deltas, gammas, 1.0, 1e-4,
                                PhaseVector.from_phases([p]))
            for p in grid
        ]
        best = grid[int(np.argmin(values))]
        closed_form = (-np.angle(q_mats[0][1, 0])) % (2.0 * math.pi)
        gap = abs((best - closed_form + math.pi) % (2.0 * math.pi) - math.pi)
        assert gap <= 2.0 * math.pi / 360 + 1e-12


class TestChoosePhase:
    def test_single_element_matches_aligned_phase(self):
        stats = close_stats(K=1, M=1)
        moments = estimate_moments(stats, 10_000, np.random.default_rng(13))
        gammas = estimate_gamma(stats, 1.0, 10_000, np.random.default_rng(13))
        q_mats, deltas = assemble_q(moments, 1.0)
        decision = choose_phase_sdp(
            [np.eye(1)], [np.eye(1)], q_mats, deltas, gammas, 1.0, 1e-4,
            np.random.default_rng(14), trials=200,
        )
        aligned = PhaseVector.from_unit_complex(
            [np.exp(-1j * np.angle(q_mats[0][1, 0]))]
        )
        best = rank_one_objective(q_mats[0], aligned)
        achieved = rank_one_objective(q_mats[0], decision.theta)
        assert achieved >= best - 1e-3 * abs(best)
        assert not decision.fallback

    def test_zero_weights_fall_back_to_random(self):
        stats = close_stats(K=1, M=2)
        moments = estimate_moments(stats, 2_000, np.random.default_rng(15))
        gammas = estimate_gamma(stats, 1.0, 2_000, np.random.default_rng(15))
        q_mats, deltas = assemble_q(moments, 1.0)
        decision = choose_phase_sdp(
            [np.zeros((1, 1))], [np.eye(1)], q_mats, deltas, gammas, 1.0, 1e-4,
            np.random.default_rng(16),
        )
        assert decision.fallback
        assert len(decision.theta) == 2

    def test_negative_weights_floored(self):
        stats = close_stats(K=1, M=2)
        moments = estimate_moments(stats, 2_000, np.random.default_rng(17))
        gammas = estimate_gamma(stats, 1.0, 2_000, np.random.default_rng(17))
        q_mats, deltas = assemble_q(moments, 1.0)
        instance, infeasible, floored = build_sdp_instance(
            q_mats, deltas, gammas, np.array([1.0]), 1e-4, np.array([-5.0])
        )
        assert instance is None
        assert floored[0]
        assert not infeasible[0]

    def test_dominates_random_phases(self):
        # short direct links keep every bound interior, so clamping never
        # reorders the surrogate the relaxation optimizes
        stats = ChannelStatistics(
            sensor_positions=np.array([[2.0, 1.0], [-2.0, -1.0]]),
            controller_positions=np.array([[2.4, 1.3], [-2.4, -1.3]]),
            M=4, rician_k=2.0,
        )
        moments = estimate_moments(stats, 10_000, np.random.default_rng(18))
        gammas = estimate_gamma(stats, 1.0, 10_000, np.random.default_rng(18))
        q_mats, deltas = assemble_q(moments, 1.0)
        F = [np.array([[3.0]]), np.array([[1.5]])]
        G = [np.array([[1.0]]), np.array([[2.0]])]
        noise = 2.0
        rng = np.random.default_rng(19)
        wins = 0
        for _ in range(50):
            decision = choose_phase_sdp(F, G, q_mats, deltas, gammas, 1.0, noise,
                                        rng, trials=100)
            chosen = lookahead_objective(F, G, q_mats, deltas, gammas, 1.0, noise,
                                         decision.theta)
            best_random = min(
                lookahead_objective(F, G, q_mats, deltas, gammas, 1.0, noise,
                                    random_phase_baseline(4, rng))
                for _ in range(100)
            )
            if chosen <= best_random:
                wins += 1
        assert wins >= 48   # >= 95% of 50 trials

    def test_offset_identity(self):
        # weighted bound sum equals constants - tr(Q_bar Sigma) for any
        # feasible Sigma, by construction of the aggregate instance
        stats = close_stats(K=2, M=3)
        moments = estimate_moments(stats, 5_000, np.random.default_rng(20))
        gammas = estimate_gamma(stats, 1.0, 5_000, np.random.default_rng(20))
        q_mats, deltas = assemble_q(moments, 1.0)
        fg = np.array([2.0, 0.7])
        noise = 1e-4
        instance, _, _ = build_sdp_instance(q_mats, deltas, gammas,
                                            np.array([1.0, 1.0]), noise, fg)
        rng = np.random.default_rng(21)
        z = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        sigma = z @ z.conj().T
        d = np.real(np.diag(sigma))
        sigma = sigma / np.sqrt(np.outer(d, d))
        lhs = sum(
            fg[k] * (gammas[k] - deltas[k] - np.real(np.trace(q_mats[k] @ sigma)))
            / (gammas[k] - rate_threshold(1.0, noise))
            for k in range(2)
        )
        rhs = instance.constants - np.real(np.trace(instance.Q_bar @ sigma))
        assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(rhs)))


class TestRandomPhaseBaseline:
    def test_uniform_mean_resultant_vanishes(self):
        rng = np.random.default_rng(22)
        draws = np.concatenate([random_phase_baseline(10, rng).theta
                                for _ in range(10_000)])
        assert abs(draws.mean()) < 0.01

    def test_length_and_range(self):
        theta = random_phase_baseline(6, np.random.default_rng(23))
        assert len(theta) == 6
        assert np.all(theta.phi >= 0) and np.all(theta.phi < 2 * math.pi)

    def test_seeded_determinism(self):
        a = random_phase_baseline(4, np.random.default_rng(24))
        b = random_phase_baseline(4, np.random.default_rng(24))
        np.testing.assert_array_equal(a.phi, b.phi)


class TestGMatrix:
    def test_definition_and_symmetry(self):
        model = ProcessModel.scalar(2.0)
        g = g_matrix(np.array([[1.5]]), np.array([[0.3]]), model)
        assert g[0, 0] == pytest.approx(4.0 * 1.5 + 1.0 - 0.3)

    def test_psd_for_consistent_inputs(self):
        rng = np.random.default_rng(25)
        for _ in range(10):
            n = 2
            x = rng.normal(size=(n, n))
            model = ProcessModel(
                A=rng.normal(size=(n, n)), B=np.zeros((n, 1)), C=np.eye(n),
                W=x @ x.T + 0.2 * np.eye(n), V=np.eye(n), D=np.eye(n),
                E=np.eye(1), P0=np.eye(n),
            )
            ps = kf_posterior_schedule(model, 3)
            traj = expected_cov_trajectory(model, [0.4, 0.4, 0.4], ps)
            g = g_matrix(traj[1].P_bar_c, ps[2], model)
            assert np.linalg.eigvalsh(g).min() > -1e-9


def oracle_scenario(M=1, K=1, rician_k=2.0):
    stats = close_stats(K=K, M=M, rician_k=rician_k)
    models = [ProcessModel.scalar(1.4 + 0.3 * k) for k in range(K)]
    return stats, models


class TestDpOracle:
    def _pe_table(self, stats, grid, rate, noise, samples=20_000, seed=26):
        rng = np.random.default_rng(seed)
        return np.stack([
            estimate_outage(stats, theta, rate, noise, samples, rng)
            for theta in grid
        ])

    def test_horizon_one_is_greedy(self):
        stats, models = oracle_scenario()
        grid = uniform_phase_grid(1, 8)
        pe = self._pe_table(stats, grid, 5.0, 2e-4)
        table = dp_oracle(models, grid, pe, T=1)
        indices, value = lookahead_on_grid(models, grid, pe, T=1)
        assert table.best_indices == indices
        assert table.best_value == pytest.approx(value, rel=1e-12)

    def test_constant_outage_ties_all_sequences(self):
        stats, models = oracle_scenario()
        grid = uniform_phase_grid(1, 4)
        pe = np.full((4, 1), 0.37)
        T = 3
        table = dp_oracle(models, grid, pe, T)
        traj = expected_cov_trajectory(models[0], [0.37] * T)
        schedule = riccati_backward(models[0], T)
        closed = sum(
            float(np.trace(schedule.F[t] @ traj[t].P_bar_c)) for t in range(T)
        )
        assert table.best_value == pytest.approx(closed, rel=1e-12)

    def test_lookahead_never_beats_oracle(self):
        stats, models = oracle_scenario()
        grid = uniform_phase_grid(1, 8)
        pe = self._pe_table(stats, grid, 5.0, 2e-4)
        T = 3
        table = dp_oracle(models, grid, pe, T)
        _, greedy_value = lookahead_on_grid(models, grid, pe, T)
        assert table.best_value <= greedy_value + 1e-12

    def test_refined_grid_does_not_increase_value(self):
        stats, models = oracle_scenario()
        fine = uniform_phase_grid(1, 16)
        pe_fine = self._pe_table(stats, fine, 5.0, 2e-4)
        coarse_idx = list(range(0, 16, 2))   # the 8-point grid is a subset
        coarse = [fine[i] for i in coarse_idx]
        pe_coarse = pe_fine[coarse_idx]
        v_fine = dp_oracle(models, fine, pe_fine, T=2).best_value
        v_coarse = dp_oracle(models, coarse, pe_coarse, T=2).best_value
        assert v_fine <= v_coarse + 1e-12

    def test_budget_enforced(self):
        stats, models = oracle_scenario()
        grid = uniform_phase_grid(1, 101)
        pe = np.zeros((101, 1))
        with pytest.raises(ValueError, match="budget"):
            dp_oracle(models, grid, pe, T=3)
