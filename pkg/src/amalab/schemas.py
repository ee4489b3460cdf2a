"""JSON-facing models for experiment configs, result records and audit reports.

Every model rejects unknown keys, so a typo in a config file fails loudly at
parse time instead of silently falling back to a default. The config models
know how to build the runtime objects they describe; everything downstream
(runner, service, CLI) goes through them.
"""

from __future__ import annotations

from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from amalab.environments import (
    BuiltEnvironment,
    GridworldEnv,
    GridworldGoals,
    SequentialSalesEnv,
    TaskSchedulingEnv,
    UniformAsymmetric,
    UniformSymmetric,
    build_gridworld,
    build_sequential_sales,
    build_task_scheduling,
)
from amalab.mechanism import WEIGHT_FLOOR, LossSpec
from amalab.optimizers import OptimizerConfig, SearchBounds
from amalab.regularized import RegularizationConfig

EXPERIMENT_METHODS = ("vcg", "grid", "zeroth", "first")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SalesEnvModel(StrictModel):
    """n unit-demand bidders, m identical items sold one per round."""

    kind: Literal["sequential_sales"]
    n: int = Field(ge=1)
    m: int = Field(ge=1)

    def build(self) -> BuiltEnvironment:
        return build_sequential_sales(SequentialSalesEnv(n=self.n, m=self.m))


class SchedulingEnvModel(StrictModel):
    """n workers receiving one task per round for `tasks` rounds."""

    kind: Literal["task_scheduling"]
    n: int = Field(ge=1)
    tasks: int = Field(ge=1)

    def build(self) -> BuiltEnvironment:
        return build_task_scheduling(TaskSchedulingEnv(n=self.n, tasks=self.tasks))


class GridworldEnvModel(StrictModel):
    """side x side discounted grid with per-agent replenishing goal rewards."""

    kind: Literal["gridworld"]
    side: int = Field(ge=2)
    n: int = Field(ge=1)
    gamma: float = Field(default=0.9, gt=0.0, lt=1.0)
    start: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _start_on_grid(self) -> "GridworldEnvModel":
        if self.start >= self.side * self.side:
            raise ValueError("start must be a cell index below side*side")
        return self

    def build(self) -> BuiltEnvironment:
        return build_gridworld(
            GridworldEnv(side=self.side, n=self.n, gamma=self.gamma, start=self.start)
        )


EnvironmentModel = Annotated[
    Union[SalesEnvModel, SchedulingEnvModel, GridworldEnvModel],
    Field(discriminator="kind"),
]


class UniformSymmetricModel(StrictModel):
    """All agents share one uniform range [lo, hi]."""

    kind: Literal["uniform_symmetric"]
    lo: float = 0.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _ordered(self) -> "UniformSymmetricModel":
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")
        return self

    def build(self) -> UniformSymmetric:
        return UniformSymmetric(lo=self.lo, hi=self.hi)


class UniformAsymmetricModel(StrictModel):
    """Per-agent uniform ranges [0, hi_i]; searching weights makes sense here."""

    kind: Literal["uniform_asymmetric"]
    his: list[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _positive(self) -> "UniformAsymmetricModel":
        if any(h <= 0 for h in self.his):
            raise ValueError("his must be positive")
        return self

    def build(self) -> UniformAsymmetric:
        return UniformAsymmetric(his=tuple(self.his))


class GridworldGoalsModel(StrictModel):
    """Per-agent goal cell uniform over non-start cells, value in [lo, hi]."""

    kind: Literal["gridworld_goals"]
    lo: float = 0.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _ordered(self) -> "GridworldGoalsModel":
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")
        return self

    def build(self) -> GridworldGoals:
        return GridworldGoals(lo=self.lo, hi=self.hi)


DistributionModel = Annotated[
    Union[UniformSymmetricModel, UniformAsymmetricModel, GridworldGoalsModel],
    Field(discriminator="kind"),
]


class OptimizerModel(StrictModel):
    """Search budgets and step sizes.

    The experiment seed is the only seed: the optimizer's master seed is
    derived from it, never set here. alpha is the entropy-smoothing strength
    the gradient methods differentiate through.
    """

    grid_points: int = Field(default=10_000, ge=1)
    grid_eval_profiles: int = Field(default=2_000, ge=1)
    zo_perturbations: int = Field(default=20, ge=1)
    zo_sigma: float = Field(default=0.05, gt=0.0)
    zo_lr: float = Field(default=0.1, gt=0.0)
    fo_lr: float = Field(default=1e-2, gt=0.0)
    batch_profiles: int = Field(default=20, ge=1)
    num_iterations: int = Field(default=100, ge=0)
    num_starts: int = Field(default=4, ge=1)
    bootstrap_points: int = Field(default=256, ge=1)
    bootstrap_profiles: int = Field(default=200, ge=1)
    final_eval_profiles: int = Field(default=10_000, ge=1)
    alpha: float = Field(default=1e-2, gt=0.0)

    def build(self, seed: int) -> OptimizerConfig:
        fields = self.model_dump()
        fields.pop("alpha")
        return OptimizerConfig(master_seed=seed, **fields)

    def regularization(self) -> RegularizationConfig:
        return RegularizationConfig(alpha=self.alpha)


class BoundsModel(StrictModel):
    """Axis-aligned search box; omitted bounds default to one reward horizon."""

    boost_lo: float
    boost_hi: float
    weight_lo: float = WEIGHT_FLOOR
    weight_hi: float = 2.0

    @model_validator(mode="after")
    def _ordered(self) -> "BoundsModel":
        if not self.boost_lo < self.boost_hi:
            raise ValueError("boost_lo must be < boost_hi")
        if not self.weight_lo < self.weight_hi:
            raise ValueError("weight_lo must be < weight_hi")
        if self.weight_lo < WEIGHT_FLOOR:
            raise ValueError(f"weight_lo must be >= {WEIGHT_FLOOR}")
        return self

    def build(self) -> SearchBounds:
        return SearchBounds(
            boost_lo=self.boost_lo,
            boost_hi=self.boost_hi,
            weight_lo=self.weight_lo,
            weight_hi=self.weight_hi,
        )


class ExperimentConfig(StrictModel):
    """One experiment: an environment, a type distribution, a loss, a method."""

    environment: EnvironmentModel
    distribution: DistributionModel
    loss: Literal["revenue", "neg_welfare", "makespan"]
    method: Literal["vcg", "grid", "zeroth", "first"]
    optimizer: OptimizerModel = OptimizerModel()
    bounds: BoundsModel | None = None
    eval_profiles: int = Field(default=10_000, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        env, dist = self.environment, self.distribution
        if self.loss == "makespan" and env.kind != "task_scheduling":
            raise ValueError("makespan loss applies to task_scheduling only")
        if (env.kind == "gridworld") != (dist.kind == "gridworld_goals"):
            raise ValueError(
                "gridworld environments pair with gridworld_goals distributions"
            )
        if dist.kind == "uniform_asymmetric" and len(dist.his) != env.n:
            raise ValueError("his must list one bound per agent")
        if dist.kind == "uniform_symmetric":
            if env.kind == "task_scheduling" and dist.lo != 0.0:
                raise ValueError("duration ranges start at 0")
            if env.kind == "sequential_sales" and dist.lo < 0.0:
                raise ValueError("sales values must be nonnegative")
        return self

    def loss_spec(self, built: BuiltEnvironment) -> LossSpec:
        if self.loss == "makespan":
            return LossSpec(kind="makespan", cost_tables=built.cost_tables)
        return LossSpec(kind=self.loss)


class ParamsModel(StrictModel):
    """Selected mechanism parameters, JSON-shaped."""

    weights: list[float]
    boosts: list[list[float]]


class StartTraceModel(StrictModel):
    index: int
    grid_loss: float
    final_loss: float


class AuditSummaryModel(StrictModel):
    """Spot audit embedded in every run: misreport gains and truthful utility.

    tied_profiles counts audited profiles containing a sub-tolerance argmax
    margin somewhere; informational, since the gain measurement compares
    optimal values and is indifferent to how a tie resolves.
    """

    profiles: int
    misreports: int
    worst_ic_gain: float
    min_ir_utility: float
    tied_profiles: int


class ResultRecord(StrictModel):
    """One run's outcome; serialized canonically so reruns are byte-identical.

    Wall-clock time deliberately lives outside the record (the runner returns
    it alongside), otherwise identical runs could never produce identical
    bytes.
    """

    config: ExperimentConfig
    config_hash: str
    env: str
    n: int
    m: int
    method: str
    mean_loss: float
    std_err: float
    metric: float
    vcg_mean_loss: float
    vcg_metric: float
    improvement: str
    params: ParamsModel
    starts: list[StartTraceModel]
    audit: AuditSummaryModel
    status: Literal["ok", "FAILED"]
    seed: int


class AuditReportModel(StrictModel):
    """Deep incentive audit: exhaustive-grid misreports plus an IR sweep."""

    env: str
    n: int
    m: int
    method: str
    seed: int
    profiles: int
    misreports: int
    tied_profiles: int
    worst_ic_gain: float
    gain_tolerance: float
    ic_pass: bool
    ir_profiles: int
    min_ir_utility: float
    utility_floor: float
    ir_pass: bool
