"""Search for revenue-improving dynamic affine-maximizer mechanisms on tabular MDPs."""

from amalab.audit import (
    ExhaustiveGrid,
    PerturbGaussian,
    Resample,
    Scale,
    ZeroReport,
    deviation_gain,
    draw_untied_profile,
    ic_audit,
    ir_audit,
    tie_gap,
)
from amalab.environments import (
    GridworldEnv,
    GridworldGoals,
    SequentialSalesEnv,
    TaskSchedulingEnv,
    UniformAsymmetric,
    UniformSymmetric,
    build_gridworld,
    build_sequential_sales,
    build_task_scheduling,
    make_sampler,
)
from amalab.experiments import (
    RunOutput,
    compare_records,
    run_deep_audit,
    run_experiment,
)
from amalab.mdp import (
    Discounted,
    Episodic,
    OccupancyMeasure,
    Policy,
    TabularMdp,
    evaluate_policy,
    occupancy_flow_residual,
    policy_from_occupancy,
    solve_exact,
    solve_exact_batch,
)
from amalab.mechanism import (
    AmaParams,
    LossSpec,
    MechanismOutcome,
    RewardProfile,
    exact_loss_batch,
    loss_to_metric,
    run_ama,
    smoothed_loss_batch,
    truthful_utilities_batch,
    vcg_baseline,
    vcg_params,
)
from amalab.optimizers import (
    OptimizerConfig,
    OptimizeResult,
    SearchBounds,
    optimize,
    sample_batch,
)
from amalab.regularized import RegularizationConfig, solve_regularized
from amalab.schemas import ExperimentConfig, ResultRecord

__version__ = "0.1.0"

__all__ = [
    "AmaParams",
    "Discounted",
    "Episodic",
    "ExhaustiveGrid",
    "ExperimentConfig",
    "GridworldEnv",
    "GridworldGoals",
    "LossSpec",
    "MechanismOutcome",
    "OccupancyMeasure",
    "OptimizeResult",
    "OptimizerConfig",
    "PerturbGaussian",
    "Policy",
    "RegularizationConfig",
    "Resample",
    "ResultRecord",
    "RewardProfile",
    "RunOutput",
    "Scale",
    "SearchBounds",
    "SequentialSalesEnv",
    "TabularMdp",
    "TaskSchedulingEnv",
    "UniformAsymmetric",
    "UniformSymmetric",
    "ZeroReport",
    "build_gridworld",
    "build_sequential_sales",
    "build_task_scheduling",
    "compare_records",
    "deviation_gain",
    "draw_untied_profile",
    "evaluate_policy",
    "exact_loss_batch",
    "ic_audit",
    "ir_audit",
    "loss_to_metric",
    "make_sampler",
    "occupancy_flow_residual",
    "optimize",
    "policy_from_occupancy",
    "run_ama",
    "run_deep_audit",
    "run_experiment",
    "sample_batch",
    "smoothed_loss_batch",
    "solve_exact",
    "solve_exact_batch",
    "solve_regularized",
    "tie_gap",
    "truthful_utilities_batch",
    "vcg_baseline",
    "vcg_params",
]
