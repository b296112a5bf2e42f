"""Phase-shift selection at the reflecting surface.

Everything here runs on statistical channel knowledge only: the
quadratic-form matrices built from second-order link moments, the Markov
upper bound on the erasure probability, the one-step lookahead objective
that weighs each plant by its control-cost sensitivity, the SDP
relaxation with Gaussian randomization, the random baseline, and an
exhaustive dynamic-programming oracle over a finite phase grid.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .channel import MomentSet, PhaseVector
from .estimation import expected_cov_first, expected_cov_step, kf_posterior_schedule
from .lqr import riccati_backward
from .process import ProcessModel, symmetrize
from .sdp import (
    SdpInstance,
    SdpSolution,
    SolverConfig,
    gaussian_randomization,
    rank_one_objective,
    solve_sdp,
)

logger = logging.getLogger(__name__)


class InfeasibleGammaError(RuntimeError):
    """The peak-signal estimate cannot support the Markov bound."""


def rate_threshold(rate: float, noise: float) -> float:
    """Noise-scaled decoding threshold N0 (2^R - 1)."""
    return noise * (2.0 ** rate - 1.0)


def g_matrix(P_bar_prev, P_s_posterior, model: ProcessModel) -> np.ndarray:
    """Covariance gap G = A P_bar A^T + W - P_s priced by the lookahead."""
    P_bar_prev = np.atleast_2d(np.asarray(P_bar_prev, dtype=float))
    P_s = np.atleast_2d(np.asarray(P_s_posterior, dtype=float))
    return symmetrize(model.A @ P_bar_prev @ model.A.T + model.W - P_s)


def assemble_q(moments: MomentSet, rates):
    """Per-plant quadratic-form matrices Q_k and offsets Delta_k.

    The stored moments use E[H conj(h)] and E[H H^H]; the quadratic form
    needs their conjugates so that theta~^H Q_k theta~ + Delta_k equals
    E[S_k - (2^R_k - 1) I_k] for the reflection convention
    g = h_sc + sum_i theta_i H[i].
    """
    K, M = moments.K, moments.M
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (K,))
    q_mats = []
    deltas = np.zeros(K)
    for k in range(K):
        scale = 2.0 ** rates[k] - 1.0
        block = np.conj(moments.E_HH[k, k]).copy()
        vec = np.conj(moments.E_Hh[k, k]).copy()
        delta = moments.E_hh[k, k]
        for l in range(K):
            if l == k:
                continue
            block -= scale * np.conj(moments.E_HH[l, k])
            vec -= scale * np.conj(moments.E_Hh[l, k])
            delta -= scale * moments.E_hh[l, k]
        q = np.zeros((M + 1, M + 1), dtype=complex)
        q[:M, :M] = block
        q[:M, M] = vec
        q[M, :M] = np.conj(vec)
        q_mats.append(0.5 * (q + q.conj().T))
        deltas[k] = delta
    return q_mats, deltas


def expected_signal_margin(q_k: np.ndarray, delta_k: float, theta: PhaseVector) -> float:
    """E[S_k - (2^R_k - 1) I_k] at the given phases."""
    return rank_one_objective(q_k, theta) + float(delta_k)


def _bound_from_margin(margin: float, gamma: float, threshold: float) -> float:
    denom = gamma - threshold
    if denom <= 0.0:
        raise InfeasibleGammaError(
            f"gamma={gamma} does not exceed the decoding threshold {threshold}"
        )
    return float(min(1.0, max(0.0, (gamma - margin) / denom)))


def markov_error_bound(
    moments: MomentSet,
    theta: PhaseVector,
    gamma: float,
    rate: float,
    noise: float,
    k: int = 0,
) -> float:
    """Markov upper bound on the erasure probability, clamped to [0, 1]."""
    q_mats, deltas = assemble_q(moments, rate)
    margin = expected_signal_margin(q_mats[k], deltas[k], theta)
    return _bound_from_margin(margin, gamma, rate_threshold(rate, noise))


def lookahead_objective(
    F_mats,
    G_mats,
    q_mats,
    deltas,
    gammas,
    rates,
    noise: float,
    theta: PhaseVector,
) -> float:
    """One-slot objective sum_k tr(F_k G_k) * bound_k(theta)."""
    K = len(F_mats)
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (K,))
    total = 0.0
    for k in range(K):
        weight = float(np.trace(np.atleast_2d(F_mats[k]) @ np.atleast_2d(G_mats[k])))
        margin = expected_signal_margin(q_mats[k], deltas[k], theta)
        total += weight * _bound_from_margin(margin, gammas[k], rate_threshold(rates[k], noise))
    return total


@dataclass
class PhaseDecision:
    """Per-slot record of what the optimizer chose and predicted."""

    theta: PhaseVector
    predicted_bounds: np.ndarray
    weights: np.ndarray
    objective_value: float
    solver_iterations: int
    solver_residuals: tuple
    solver_converged: bool
    fallback: bool
    infeasible: np.ndarray
    floored: np.ndarray
    solution: SdpSolution | None = None


def build_sdp_instance(q_mats, deltas, gammas, rates, noise, fg_traces):
    """Aggregate the per-plant relaxations into one objective matrix.

    Plants whose gamma cannot support the bound are excluded (their
    erasure bound is the constant 1); negative lookahead weights are
    floored at zero so the aggregate stays a nonnegative combination.
    Returns (instance, infeasible mask, floored mask); the instance is
    None when no plant contributes a positive weight.
    """
    K = len(q_mats)
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (K,))
    gammas = np.asarray(gammas, dtype=float)
    fg_traces = np.asarray(fg_traces, dtype=float)
    infeasible = np.zeros(K, dtype=bool)
    floored = np.zeros(K, dtype=bool)
    weights = np.zeros(K)
    constants = 0.0
    dim = q_mats[0].shape[0]
    q_bar = np.zeros((dim, dim), dtype=complex)
    for k in range(K):
        denom = gammas[k] - rate_threshold(rates[k], noise)
        if denom <= 0.0:
            infeasible[k] = True
            continue
        fg = fg_traces[k]
        if fg < 0.0:
            floored[k] = True
            fg = 0.0
        weights[k] = fg / denom
        q_bar += weights[k] * q_mats[k]
        constants += weights[k] * (gammas[k] - deltas[k])
    if not np.any(weights > 0.0):
        return None, infeasible, floored
    instance = SdpInstance(
        Q_bar=0.5 * (q_bar + q_bar.conj().T), weights=weights, constants=constants
    )
    return instance, infeasible, floored


def choose_phase_sdp(
    F_mats,
    G_mats,
    q_mats,
    deltas,
    gammas,
    rates,
    noise: float,
    rng,
    trials: int = 100,
    solver_config: SolverConfig | None = None,
    warm_start: SdpSolution | None = None,
) -> PhaseDecision:
    """Pick the slot's phases by SDP relaxation plus randomization."""
    K = len(q_mats)
    rates_arr = np.broadcast_to(np.asarray(rates, dtype=float), (K,))
    fg_traces = np.array(
        [float(np.trace(np.atleast_2d(F_mats[k]) @ np.atleast_2d(G_mats[k]))) for k in range(K)]
    )
    instance, infeasible, floored = build_sdp_instance(
        q_mats, deltas, gammas, rates_arr, noise, fg_traces
    )
    if np.any(floored):
        logger.info("floored negative lookahead weights for plants %s",
                    np.flatnonzero(floored).tolist())
    if instance is None:
        logger.warning("no plant contributes a positive weight; using a random phase")
        m = q_mats[0].shape[0] - 1
        theta = random_phase_baseline(m, rng)
        bounds = _predicted_bounds(q_mats, deltas, gammas, rates_arr, noise, infeasible, theta)
        return PhaseDecision(
            theta=theta,
            predicted_bounds=bounds,
            weights=np.zeros(K),
            objective_value=0.0,
            solver_iterations=0,
            solver_residuals=(0.0, 0.0),
            solver_converged=True,
            fallback=True,
            infeasible=infeasible,
            floored=floored,
        )
    solution = solve_sdp(instance, config=solver_config, warm_start=warm_start)
    theta = gaussian_randomization(solution, instance, trials, rng)
    bounds = _predicted_bounds(q_mats, deltas, gammas, rates_arr, noise, infeasible, theta)
    return PhaseDecision(
        theta=theta,
        predicted_bounds=bounds,
        weights=instance.weights,
        objective_value=solution.objective_value,
        solver_iterations=solution.solver_iterations,
        solver_residuals=solution.residuals,
        solver_converged=solution.converged,
        fallback=False,
        infeasible=infeasible,
        floored=floored,
        solution=solution,
    )


def _predicted_bounds(q_mats, deltas, gammas, rates, noise, infeasible, theta):
    K = len(q_mats)
    bounds = np.ones(K)
    for k in range(K):
        if infeasible[k]:
            continue
        margin = expected_signal_margin(q_mats[k], deltas[k], theta)
        bounds[k] = _bound_from_margin(margin, gammas[k], rate_threshold(rates[k], noise))
    return bounds


def random_phase_baseline(M: int, rng) -> PhaseVector:
    """Independent uniform phases on [0, 2pi)."""
    return PhaseVector.from_phases(rng.uniform(0.0, 2.0 * np.pi, size=M))


def uniform_phase_grid(M: int, points: int) -> list:
    """Cartesian grid of evenly spaced per-element phases."""
    if points < 1:
        raise ValueError("need at least one grid point per element")
    base = np.arange(points) * (2.0 * np.pi / points)
    return [
        PhaseVector.from_phases(np.array(combo))
        for combo in itertools.product(base, repeat=M)
    ]


@dataclass
class ValueTable:
    """Result of exact enumeration over a phase grid."""

    horizon: int
    phase_grid: list
    best_indices: list
    best_value: float


DP_GRID_BUDGET = 1_000_000


def dp_oracle(models, phase_grid, pe_table, T: int) -> ValueTable:
    """Exhaustively minimize the expected-covariance cost over the grid.

    ``pe_table[g, k]`` is the true erasure probability of plant k at grid
    phase g (estimated by Monte-Carlo outage counts, not the Markov
    bound). All grid^T phase sequences are evaluated through a shared-
    prefix depth-first walk of the deterministic covariance recursion;
    the value is sum over slots and plants of tr(F_k(t) P_bar_k(t|t)).
    """
    n_grid = len(phase_grid)
    if n_grid < 1:
        raise ValueError("phase grid is empty")
    if n_grid ** T > DP_GRID_BUDGET:
        raise ValueError(
            f"grid^T = {n_grid}^{T} exceeds the enumeration budget {DP_GRID_BUDGET}"
        )
    pe_table = np.asarray(pe_table, dtype=float)
    K = len(models)
    schedules = [riccati_backward(m, T) for m in models]
    ps_schedules = [kf_posterior_schedule(m, T) for m in models]

    best_value = np.inf
    best_indices: list = []

    def advance(P_prev, t, g):
        covs = []
        cost = 0.0
        for k in range(K):
            if t == 0:
                cov = expected_cov_first(ps_schedules[k][0], pe_table[g, k], models[k])
            else:
                cov = expected_cov_step(P_prev[k], ps_schedules[k][t], pe_table[g, k], models[k])
            covs.append(cov)
            cost += float(np.trace(schedules[k].F[t] @ cov.P_bar_c))
        return covs, cost

    def walk(t, P_prev, acc, prefix):
        nonlocal best_value, best_indices
        if t == T:
            if acc < best_value:
                best_value = acc
                best_indices = list(prefix)
            return
        for g in range(n_grid):
            covs, cost = advance(P_prev, t, g)
            prefix.append(g)
            walk(t + 1, covs, acc + cost, prefix)
            prefix.pop()

    walk(0, [None] * K, 0.0, [])
    return ValueTable(
        horizon=T, phase_grid=list(phase_grid), best_indices=best_indices,
        best_value=float(best_value),
    )


def lookahead_on_grid(models, phase_grid, pe_table, T: int):
    """Greedy one-step lookahead over the same grid and true erasure rates.

    Returns (indices, value) accumulated with the same cost as the
    oracle, for gap comparisons against :func:`dp_oracle`.
    """
    n_grid = len(phase_grid)
    pe_table = np.asarray(pe_table, dtype=float)
    K = len(models)
    schedules = [riccati_backward(m, T) for m in models]
    ps_schedules = [kf_posterior_schedule(m, T) for m in models]
    P_prev = [None] * K
    indices = []
    total = 0.0
    for t in range(T):
        best_g, best_cost, best_covs = None, np.inf, None
        for g in range(n_grid):
            covs = []
            cost = 0.0
            for k in range(K):
                if t == 0:
                    cov = expected_cov_first(ps_schedules[k][0], pe_table[g, k], models[k])
                else:
                    cov = expected_cov_step(P_prev[k], ps_schedules[k][t], pe_table[g, k], models[k])
                covs.append(cov)
                cost += float(np.trace(schedules[k].F[t] @ cov.P_bar_c))
            if cost < best_cost:
                best_g, best_cost, best_covs = g, cost, covs
        indices.append(best_g)
        total += best_cost
        P_prev = best_covs
    return indices, float(total)
