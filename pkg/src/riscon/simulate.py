"""Closed-loop orchestration: plants, filters, channel, surface, controllers.

Per-slot order: the surface picks its phases from statistics and the
tracked covariance recursion, the channel realization is drawn, sensors
measure and filter, transmissions succeed or fail by the realized SINR,
controllers update their estimates, controls are applied, and the
plants step. Replications share plant and channel noise streams across
policies (common random numbers); every stream is derived from the
scenario seed, so runs are reproducible to the byte.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import estimate_gamma, estimate_moments, estimate_outage, sample_realization, sinr_and_outcome
from .estimation import (
    ControllerEstimate,
    controller_update,
    kf_posterior_schedule,
    kf_predict,
    kf_update,
    replicate_controller_estimate,
    sensor_filter_init,
)
from .lqr import control_action, riccati_backward, stage_cost
from .phase_opt import (
    PhaseDecision,
    _predicted_bounds,
    assemble_q,
    choose_phase_sdp,
    dp_oracle,
    g_matrix,
    random_phase_baseline,
    rate_threshold,
    uniform_phase_grid,
)
from .process import init_state, measure, step_process, symmetrize
from .scenario import Scenario

DIVERGENCE_MAGNITUDE = 1e150

MOMENT_STREAM = 202
ORACLE_STREAM = 203
PLANT_STREAM = 301
CHANNEL_STREAM = 302
POLICY_STREAM = 303
TRUE_PE_STREAM = 304
POLICY_IDS = {"sdp_lookahead": 1, "random_phase": 2, "dp_oracle": 3}


class SimulationError(RuntimeError):
    """Aborted run, annotated with where the failure happened."""

    def __init__(self, message, policy=None, replication=None, slot=None):
        super().__init__(message)
        self.policy = policy
        self.replication = replication
        self.slot = slot


def derive_rng(seed, *tags):
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, *tags)))


@dataclass
class ScenarioRuntime:
    """Per-scenario precomputation shared by every replication.

    Channel statistics are stationary, so moments and peak-signal
    estimates are sampled once; Riccati schedules and filter covariance
    schedules are deterministic per plant.
    """

    scenario: Scenario
    schedules: list
    ps_schedules: list
    moments: object
    gammas: np.ndarray
    q_mats: list
    deltas: np.ndarray
    infeasible: np.ndarray
    oracle_grid: list | None = None
    oracle_pe_table: np.ndarray | None = None
    oracle_indices: list | None = None
    # per-slot warm starts: instances barely move between replications
    slot_cache: dict = field(default_factory=dict)


def build_runtime(scenario: Scenario) -> ScenarioRuntime:
    rng = derive_rng(scenario.seed, MOMENT_STREAM)
    moments = estimate_moments(scenario.stats, scenario.moment_samples, rng)
    gammas = estimate_gamma(scenario.stats, float(scenario.rates.max()),
                            scenario.gamma_samples, rng, margin=scenario.gamma_margin)
    q_mats, deltas = assemble_q(moments, scenario.rates)
    thresholds = np.array([rate_threshold(r, scenario.noise_power) for r in scenario.rates])
    infeasible = gammas <= thresholds
    runtime = ScenarioRuntime(
        scenario=scenario,
        schedules=[riccati_backward(m, scenario.T) for m in scenario.models],
        ps_schedules=[kf_posterior_schedule(m, scenario.T) for m in scenario.models],
        moments=moments,
        gammas=gammas,
        q_mats=q_mats,
        deltas=deltas,
        infeasible=infeasible,
    )
    if "dp_oracle" in scenario.policies:
        prepare_oracle(runtime)
    if "sdp_lookahead" in scenario.policies and not bool(infeasible.all()):
        F0 = [runtime.schedules[k].F[0] for k in range(scenario.K)]
        G0 = [scenario.models[k].P0 - runtime.ps_schedules[k][0] for k in range(scenario.K)]
        decision = choose_phase_sdp(
            F0, G0, q_mats, deltas, gammas, scenario.rates, scenario.noise_power,
            derive_rng(scenario.seed, MOMENT_STREAM, 1), trials=1,
            solver_config=scenario.solver_config,
        )
        if decision.solution is not None:
            runtime.slot_cache[0] = decision.solution
    return runtime


def prepare_oracle(runtime: ScenarioRuntime):
    """Grid, per-grid-phase outage table, and the optimal phase sequence."""
    scenario = runtime.scenario
    grid = uniform_phase_grid(scenario.M, scenario.oracle_grid_points)
    rng = derive_rng(scenario.seed, ORACLE_STREAM)
    pe_table = np.stack([
        estimate_outage(scenario.stats, theta, scenario.rates, scenario.noise_power,
                        scenario.oracle_outage_samples, rng)
        for theta in grid
    ])
    table = dp_oracle(scenario.models, grid, pe_table, scenario.T)
    runtime.oracle_grid = grid
    runtime.oracle_pe_table = pe_table
    runtime.oracle_indices = table.best_indices
    return table


@dataclass
class RunTrace:
    """Everything observed in one closed-loop run."""

    policy: str
    replication: int
    states: np.ndarray             # (T+1, K, n)
    sensor_estimates: np.ndarray   # (T, K, n)
    controller_estimates: np.ndarray
    replica_estimates: np.ndarray
    controls: np.ndarray           # (T, K, m)
    delta: np.ndarray              # (T, K)
    sinr: np.ndarray               # (T, K)
    phases: np.ndarray             # (T, M)
    predicted_pe: np.ndarray       # (T, K)
    expected_cov_trace: np.ndarray  # (T, K) tr(P_bar)
    stage_costs: np.ndarray        # (T+1, K); slot T holds the terminal state cost
    cost_to_come: np.ndarray       # (T+1, K); slot T repeats the full-horizon value
    realized_total: float
    per_plant_total: np.ndarray
    wall_clock: float
    solver_log: list = field(default_factory=list)
    diverged: bool = False
    divergence_log: list = field(default_factory=list)

    @property
    def horizon(self):
        return self.controls.shape[0]

    def total_cost_to_come(self):
        """Cost-to-come summed over plants, per slot (length T+1)."""
        return self.cost_to_come.sum(axis=1)


class _SdpLookaheadPolicy:
    def __init__(self, runtime: ScenarioRuntime, rng):
        self.runtime = runtime
        self.rng = rng
        self._warm = None

    def choose(self, t, loss_covs) -> PhaseDecision:
        rt = self.runtime
        sc = rt.scenario
        F_mats = [rt.schedules[k].F[t] for k in range(sc.K)]
        G_mats = [loss_covs[k] - rt.ps_schedules[k][t] for k in range(sc.K)]
        decision = choose_phase_sdp(
            F_mats, G_mats, rt.q_mats, rt.deltas, rt.gammas, sc.rates,
            sc.noise_power, self.rng, trials=sc.randomization_trials,
            solver_config=sc.solver_config,
            warm_start=rt.slot_cache.get(t, self._warm),
        )
        if decision.solution is not None:
            self._warm = decision.solution
            rt.slot_cache.setdefault(t, decision.solution)
        return decision


class _RandomPhasePolicy:
    def __init__(self, runtime: ScenarioRuntime, rng):
        self.runtime = runtime
        self.rng = rng

    def choose(self, t, loss_covs) -> PhaseDecision:
        rt = self.runtime
        sc = rt.scenario
        theta = random_phase_baseline(sc.M, self.rng)
        bounds = _predicted_bounds(rt.q_mats, rt.deltas, rt.gammas, sc.rates,
                                   sc.noise_power, rt.infeasible, theta)
        return PhaseDecision(
            theta=theta, predicted_bounds=bounds, weights=np.zeros(sc.K),
            objective_value=0.0, solver_iterations=0, solver_residuals=(0.0, 0.0),
            solver_converged=True, fallback=False, infeasible=rt.infeasible,
            floored=np.zeros(sc.K, dtype=bool),
        )


class _OraclePolicy:
    def __init__(self, runtime: ScenarioRuntime, rng):
        if runtime.oracle_indices is None:
            prepare_oracle(runtime)
        self.runtime = runtime

    def choose(self, t, loss_covs) -> PhaseDecision:
        rt = self.runtime
        sc = rt.scenario
        g = rt.oracle_indices[t]
        theta = rt.oracle_grid[g]
        return PhaseDecision(
            theta=theta,
            predicted_bounds=rt.oracle_pe_table[g].copy(), weights=np.zeros(sc.K),
            objective_value=0.0, solver_iterations=0, solver_residuals=(0.0, 0.0),
            solver_converged=True, fallback=False, infeasible=rt.infeasible,
            floored=np.zeros(sc.K, dtype=bool),
        )


def _make_policy(name, runtime, rng):
    if name == "sdp_lookahead":
        return _SdpLookaheadPolicy(runtime, rng)
    if name == "random_phase":
        return _RandomPhasePolicy(runtime, rng)
    if name == "dp_oracle":
        return _OraclePolicy(runtime, rng)
    raise ValueError(f"unknown policy {name!r}")


def run_closed_loop(
    scenario: Scenario,
    policy_name: str,
    replication: int = 0,
    runtime: ScenarioRuntime | None = None,
) -> RunTrace:
    """Simulate one replication under the named phase policy."""
    start = time.perf_counter()
    rt = runtime if runtime is not None else build_runtime(scenario)
    sc = scenario
    K, T, M = sc.K, sc.T, sc.M
    n = sc.models[0].n
    m = sc.models[0].m

    plant_rng = derive_rng(sc.seed, PLANT_STREAM, replication)
    channel_rng = derive_rng(sc.seed, CHANNEL_STREAM, replication)
    policy_rng = derive_rng(sc.seed, POLICY_STREAM, replication, POLICY_IDS[policy_name])
    truepe_rng = derive_rng(sc.seed, TRUE_PE_STREAM, replication)
    policy = _make_policy(policy_name, rt, policy_rng)

    plants = [init_state(sc.models[k], plant_rng) for k in range(K)]
    filters = [sensor_filter_init(sc.models[k]) for k in range(K)]
    controllers = [ControllerEstimate(x_hat_c=np.zeros(n)) for _ in range(K)]
    replicas = [ControllerEstimate(x_hat_c=np.zeros(n)) for _ in range(K)]
    u_prev = [np.zeros(m) for _ in range(K)]
    loss_covs = [sc.models[k].P0.copy() for k in range(K)]

    states = np.zeros((T + 1, K, n))
    sensor_estimates = np.zeros((T, K, n))
    controller_estimates = np.zeros((T, K, n))
    replica_estimates = np.zeros((T, K, n))
    controls = np.zeros((T, K, m))
    delta = np.zeros((T, K), dtype=int)
    sinr = np.zeros((T, K))
    phases = np.zeros((T, M))
    predicted_pe = np.zeros((T, K))
    expected_cov_trace = np.zeros((T, K))
    stage_costs = np.zeros((T + 1, K))
    ctc = np.zeros((T + 1, K))

    # Prior term of the expected-cost decomposition, accumulated per plant.
    ctc_acc = np.array([
        float(np.trace(rt.schedules[k].Omega[0] @ sc.models[k].P0)) for k in range(K)
    ])
    solver_log = []
    diverged = False
    divergence_log = []

    for t in range(T):
        for k in range(K):
            states[t, k] = plants[k].x

        decision = policy.choose(t, loss_covs)
        theta = decision.theta
        phases[t] = theta.phi
        if policy_name == "sdp_lookahead":
            solver_log.append({
                "slot": t,
                "iterations": decision.solver_iterations,
                "residuals": decision.solver_residuals,
                "converged": decision.solver_converged,
                "objective": decision.objective_value,
                "fallback": decision.fallback,
            })

        if sc.cov_update == "true_pe":
            pe_used = estimate_outage(sc.stats, theta, sc.rates, sc.noise_power,
                                      sc.true_pe_samples, truepe_rng)
        else:
            pe_used = decision.predicted_bounds
        predicted_pe[t] = pe_used

        realization = sample_realization(sc.stats, channel_rng, slot=t)

        for k in range(K):
            model = sc.models[k]
            if t > 0:
                filters[k] = kf_predict(filters[k], u_prev[k], model)
            y = measure(plants[k], model, plant_rng)
            filters[k] = kf_update(filters[k], y, model)
            sensor_estimates[t, k] = filters[k].x_hat_s

            sinr[t, k], delta[t, k] = sinr_and_outcome(
                realization, theta, k, float(sc.rates[k]), sc.noise_power
            )

            controllers[k] = controller_update(
                controllers[k], int(delta[t, k]), filters[k].x_hat_s, model,
                u_prev[k], literal_propagation=sc.literal_loss_propagation,
            )
            replicas[k] = replicate_controller_estimate(
                replicas[k], int(delta[t, k]), filters[k].x_hat_s, model,
                u_prev[k], literal_propagation=sc.literal_loss_propagation,
            )
            controller_estimates[t, k] = controllers[k].x_hat_c
            replica_estimates[t, k] = replicas[k].x_hat_c

            u = control_action(rt.schedules[k].L[t], controllers[k].x_hat_c)
            controls[t, k] = u
            stage_costs[t, k] = stage_cost(plants[k].x, u, model)

            # Advance the tracked expected covariance at the chosen phases.
            P_bar = symmetrize(
                rt.ps_schedules[k][t]
                + (loss_covs[k] - rt.ps_schedules[k][t]) * pe_used[k]
            )
            expected_cov_trace[t, k] = float(np.trace(P_bar))
            ctc_acc[k] += float(np.trace(rt.schedules[k].Omega[t + 1] @ model.W))
            ctc_acc[k] += float(np.trace(rt.schedules[k].F[t] @ P_bar))
            ctc[t, k] = ctc_acc[k]
            loss_covs[k] = symmetrize(model.A @ P_bar @ model.A.T + model.W)

            plants[k] = step_process(plants[k], u, model, plant_rng)
            mag = float(np.abs(plants[k].x).max())
            if not math.isfinite(mag):
                raise SimulationError(
                    f"state of plant {k} became non-finite at slot {t}",
                    policy=policy_name, replication=replication, slot=t,
                )
            if mag > DIVERGENCE_MAGNITUDE and not diverged:
                diverged = True
                divergence_log.append(
                    {"slot": t, "plant": k, "log10_magnitude": math.log10(mag)}
                )
            u_prev[k] = u

    for k in range(K):
        states[T, k] = plants[k].x
        stage_costs[T, k] = stage_cost(plants[k].x, None, sc.models[k])
        ctc[T, k] = ctc_acc[k]

    per_plant_total = stage_costs.sum(axis=0)
    return RunTrace(
        policy=policy_name,
        replication=replication,
        states=states,
        sensor_estimates=sensor_estimates,
        controller_estimates=controller_estimates,
        replica_estimates=replica_estimates,
        controls=controls,
        delta=delta,
        sinr=sinr,
        phases=phases,
        predicted_pe=predicted_pe,
        expected_cov_trace=expected_cov_trace,
        stage_costs=stage_costs,
        cost_to_come=ctc,
        realized_total=float(per_plant_total.sum()),
        per_plant_total=per_plant_total,
        wall_clock=time.perf_counter() - start,
        solver_log=solver_log,
        diverged=diverged,
        divergence_log=divergence_log,
    )


@dataclass
class ExperimentResult:
    scenario: Scenario
    policies: list
    replications: int
    traces: dict                   # policy -> list[RunTrace]

    def cost_to_come_matrix(self, policy):
        """(replications, T+1) totals across plants."""
        return np.stack([tr.total_cost_to_come() for tr in self.traces[policy]])

    def summary_rows(self):
        """(policy, slot, mean cost-to-come, standard error) records."""
        rows = []
        for policy in self.policies:
            if not self.traces[policy]:
                continue
            ctc = self.cost_to_come_matrix(policy)
            reps = ctc.shape[0]
            means = ctc.mean(axis=0)
            if reps > 1:
                stderr = ctc.std(axis=0, ddof=1) / math.sqrt(reps)
            else:
                stderr = np.zeros_like(means)
            for slot in range(ctc.shape[1]):
                rows.append((policy, slot, float(means[slot]), float(stderr[slot])))
        return rows

    def realized_totals(self, policy):
        return np.array([tr.realized_total for tr in self.traces[policy]])


def run_experiment(
    scenario: Scenario,
    policies=None,
    replications=None,
    runtime: ScenarioRuntime | None = None,
) -> ExperimentResult:
    """Run paired replications of every policy on one scenario.

    Replication r reuses the same plant and channel streams for every
    policy, so policy comparisons are common-random-number paired.
    """
    policies = list(policies) if policies is not None else list(scenario.policies)
    replications = replications if replications is not None else scenario.replications
    if replications < 1:
        raise ValueError("need at least one replication")
    rt = runtime if runtime is not None else build_runtime(scenario)
    if "dp_oracle" in policies and rt.oracle_indices is None:
        prepare_oracle(rt)
    traces = {p: [] for p in policies}
    for rep in range(replications):
        for policy in policies:
            traces[policy].append(run_closed_loop(scenario, policy, rep, runtime=rt))
    return ExperimentResult(
        scenario=scenario, policies=policies, replications=replications, traces=traces
    )
