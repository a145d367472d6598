"""Fair selection among the optimal solutions of integer linear programs."""

from .bench import ExperimentConfig, axiom_audit, prepare, run_audit, run_experiment, run_rule
from .colgen import ConvexObjective, kkt_residuals, leximin, maximin, minimize_convex
from .enumeration import (
    brute_force_rule,
    enumerate_optimal,
    greedy_cover,
    instance_from_outcomes,
    uniform_rule,
)
from .errors import *  # noqa: F401,F403
from .model import (
    CARDINAL,
    DICHOTOMOUS,
    EXACT,
    IlpInstance,
    Lottery,
    NearOptConfig,
    Row,
    RuleReport,
    Solution,
    SolutionPool,
    SolverConfig,
    realizes,
    reduce_support,
    solve,
    solve_optimal,
    solve_pricing,
)
from .instances import (
    KidneyInstance,
    KidneyParams,
    TardinessInstance,
    build_kidney_ilp,
    build_tardiness_ilp,
    gen_kidney,
    gen_tardiness,
    read_kidney,
    read_tardiness,
)
from .partition import AgentPartition, Bounds, compute_bounds, partition_agents
from .rsd import (
    Ordering,
    PerturbationVector,
    heuristic,
    rsd_distribution,
    rsd_perturbation,
    serial_dictatorship,
    serial_dictatorship_cardinal,
)

__version__ = "0.1.0"
