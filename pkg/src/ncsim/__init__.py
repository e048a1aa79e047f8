"""Networked control loops over stochastic channels: hybrid simulation,
transmission-interval bounds, and Lyapunov verification."""

from .core_sim import (
    DivergenceError,
    HybridArc,
    HybridState,
    NcsSystem,
    TransmissionSchedule,
    flow_step,
    next_interval,
    simulate_trajectory,
)
from .mati_bounds import (
    ArctanhDomainError,
    InfeasibleError,
    MatiResult,
    ProtocolConstants,
    StabilityCertificate,
    prop5_constants,
    sweep_lambda_rho,
    sweep_ps,
    tau_star,
    tau_star_ode,
    ugasp_protocol_check,
)
from .lyapunov_verify import (
    NotHurwitzError,
    QuadraticV,
    UFunction,
    WFunction,
    check_flow_decrease,
    check_jump_expectation,
    check_jump_supermartingale,
    l2_gain,
    robot_arm_certificate,
    u_eval,
    verify_w_conditions,
    w_eval,
)
from .protocols import (
    DimensionError,
    DropoutModel,
    ProtocolSpec,
    markov_stationary,
    rr_update,
    sample_upsilon,
    selection_matrix,
    stochastic_jump,
    success_probability,
    tod_update,
    wirelesshart_jump,
)
from .bench import (
    build_batch_reactor,
    build_robot_arm,
    monte_carlo_stability,
    reproduce,
)

__version__ = "0.1.0"
