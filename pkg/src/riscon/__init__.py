"""Surface-assisted networked control: simulation and phase optimization."""

__version__ = "0.1.0"

from .channel import (
    ChannelRealization,
    ChannelStatistics,
    MomentSet,
    PhaseVector,
    cascade,
    effective_gain,
    estimate_gamma,
    estimate_moments,
    estimate_outage,
    sample_realization,
    sinr_and_outcome,
)
from .estimation import (
    ControllerEstimate,
    ExpectedCovariance,
    SensorFilterState,
    controller_update,
    expected_cov_first,
    expected_cov_step,
    expected_cov_trajectory,
    kf_posterior_schedule,
    kf_predict,
    kf_update,
    replicate_controller_estimate,
    sensor_filter_init,
)
from .lqr import RiccatiSchedule, control_action, cost_to_come, realized_cost, riccati_backward
from .phase_opt import (
    InfeasibleGammaError,
    PhaseDecision,
    ValueTable,
    assemble_q,
    choose_phase_sdp,
    dp_oracle,
    g_matrix,
    lookahead_objective,
    lookahead_on_grid,
    markov_error_bound,
    random_phase_baseline,
    uniform_phase_grid,
)
from .process import PlantState, ProcessModel, init_state, measure, step_process
from .scenario import ConfigError, Scenario, generate_scenario, load_config, validate_config
from .sdp import (
    SdpInstance,
    SdpSolution,
    SolverConfig,
    gaussian_randomization,
    rank_one_objective,
    solve_sdp,
)
from .simulate import (
    ExperimentResult,
    RunTrace,
    ScenarioRuntime,
    SimulationError,
    build_runtime,
    run_closed_loop,
    run_experiment,
)
