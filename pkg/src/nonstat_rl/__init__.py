"""Optimistic average-reward learning in drifting tabular MDPs."""

from .agents import VBUCRL, agent_from_config, make_baseline, restart_schedule
from .envs import GeneratorSpec, chain_testbed, generate, load_trace, random_garnet
from .evi import (
    ConfidenceModel,
    ExtendedValueIteration,
    SufficientStats,
    build_confidence,
    extended_value_iteration,
    inner_max_transition,
)
from .exceptions import (
    IncompatibleShapesError,
    InfeasibleBoxError,
    InvalidSnapshotError,
    NonConvergenceError,
    NonstatRLError,
    NotCommunicatingError,
    ProtocolError,
    RunError,
    SingularSystemError,
)
from .harness import RunRecord, SweepSummary, emit, run_episode_loop, sweep
from .mdp import (
    MdpSnapshot,
    NonStationaryEnv,
    RelativeValueIteration,
    StationaryPolicy,
    diameter,
    finite_horizon_value,
    optimal_gain,
    policy_gain_bias,
    validate_snapshot,
    variation_budgets,
)

__version__ = "0.1.0"

__all__ = [
    "ConfidenceModel",
    "ExtendedValueIteration",
    "GeneratorSpec",
    "IncompatibleShapesError",
    "InfeasibleBoxError",
    "InvalidSnapshotError",
    "MdpSnapshot",
    "NonConvergenceError",
    "NonStationaryEnv",
    "NonstatRLError",
    "NotCommunicatingError",
    "ProtocolError",
    "RelativeValueIteration",
    "RunError",
    "RunRecord",
    "SingularSystemError",
    "StationaryPolicy",
    "SufficientStats",
    "SweepSummary",
    "VBUCRL",
    "agent_from_config",
    "build_confidence",
    "chain_testbed",
    "diameter",
    "emit",
    "extended_value_iteration",
    "finite_horizon_value",
    "generate",
    "inner_max_transition",
    "load_trace",
    "make_baseline",
    "optimal_gain",
    "policy_gain_bias",
    "random_garnet",
    "restart_schedule",
    "run_episode_loop",
    "sweep",
    "validate_snapshot",
    "variation_budgets",
    "__version__",
]
