"""Outer-loop search over mechanism parameters.

Three procedures share one parameter packing: a Sobol grid search, a
zeroth-order Gaussian-smoothing descent whose objective is the exact batch
loss, and a first-order descent on the entropy-smoothed loss. Gradient
methods start from the best candidates of a small bootstrap grid and the
winner is picked by a final exact evaluation on a fresh shared batch.

All randomness flows through named streams derived from the master seed, so
results are identical across runs and across thread counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import qmc

from amalab.environments import BuiltEnvironment, UniformAsymmetric, make_sampler
from amalab.mdp import TabularMdp
from amalab.mechanism import (
    WEIGHT_FLOOR,
    AmaParams,
    LossSpec,
    exact_loss_batch,
    grad_smoothed_loss_batch,
    stack_profiles,
)
from amalab.regularized import RegularizationConfig

METHODS = ("grid", "zeroth", "first")

# rng stream codes under the master seed
_STREAM_GRID = 0
_STREAM_BOOTSTRAP = 1
_STREAM_BATCH = 2
_STREAM_PERTURB = 3
_STREAM_FINAL = 4


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(list(key))


def _parallel_map(fn, items, threads: int) -> list:
    """Apply fn preserving item order; thread count never changes results."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class SearchBounds:
    """Axis-aligned box the Sobol candidates are mapped into."""

    boost_lo: float
    boost_hi: float
    weight_lo: float = WEIGHT_FLOOR
    weight_hi: float = 2.0

    def __post_init__(self):
        if not self.boost_lo < self.boost_hi:
            raise ValueError("boost_lo must be < boost_hi")
        if not self.weight_lo < self.weight_hi:
            raise ValueError("weight_lo must be < weight_hi")
        if self.weight_lo < WEIGHT_FLOOR:
            raise ValueError(f"weight_lo must be >= {WEIGHT_FLOOR}")


@dataclass(frozen=True)
class OptimizerConfig:
    grid_points: int = 10_000
    grid_eval_profiles: int = 2_000
    zo_perturbations: int = 20
    zo_sigma: float = 0.05
    zo_lr: float = 0.1
    fo_lr: float = 1e-2
    batch_profiles: int = 20
    num_iterations: int = 100
    num_starts: int = 4
    master_seed: int = 0
    bootstrap_points: int = 256
    bootstrap_profiles: int = 200
    final_eval_profiles: int = 10_000

    def __post_init__(self):
        counts = (
            self.grid_points,
            self.grid_eval_profiles,
            self.zo_perturbations,
            self.batch_profiles,
            self.num_starts,
            self.bootstrap_points,
            self.bootstrap_profiles,
            self.final_eval_profiles,
        )
        if any(int(c) != c or c < 1 for c in counts):
            raise ValueError("counts must be integers >= 1")
        if int(self.num_iterations) != self.num_iterations or self.num_iterations < 0:
            raise ValueError("num_iterations must be an integer >= 0")
        if self.zo_sigma <= 0 or self.zo_lr <= 0 or self.fo_lr <= 0:
            raise ValueError("zo_sigma, zo_lr and fo_lr must be positive")


@dataclass(frozen=True)
class ParamSpace:
    """Packing between flat search vectors and AmaParams.

    The vector lists the free boosts (row-major over the mask) followed by
    the n weights when they are not frozen at 1.
    """

    n_agents: int
    boost_mask: np.ndarray
    freeze_weights: bool
    weight_floor: float = WEIGHT_FLOOR

    def __post_init__(self):
        mask = np.asarray(self.boost_mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("boost_mask must be an S x A table")
        object.__setattr__(self, "boost_mask", mask)
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")

    @property
    def num_boosts(self) -> int:
        return int(self.boost_mask.sum())

    @property
    def dim(self) -> int:
        return self.num_boosts + (0 if self.freeze_weights else self.n_agents)

    def to_params(self, theta: np.ndarray) -> AmaParams:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")
        boosts = np.zeros(self.boost_mask.shape)
        boosts[self.boost_mask] = theta[: self.num_boosts]
        if self.freeze_weights:
            weights = np.ones(self.n_agents)
        else:
            weights = theta[self.num_boosts :]
        return AmaParams(
            weights=weights, boosts=boosts, weight_floor=self.weight_floor
        )

    def to_vector(self, params: AmaParams) -> np.ndarray:
        parts = [params.boosts[self.boost_mask]]
        if not self.freeze_weights:
            parts.append(params.weights)
        return np.concatenate(parts)

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        """Floor the weight coordinates; boosts are unconstrained."""
        theta = np.array(theta, dtype=np.float64)
        if not self.freeze_weights:
            nb = self.num_boosts
            theta[nb:] = np.maximum(theta[nb:], self.weight_floor)
        return theta

    def pack_grad(self, dw: np.ndarray, db: np.ndarray) -> np.ndarray:
        parts = [db[self.boost_mask]]
        if not self.freeze_weights:
            parts.append(dw)
        return np.concatenate(parts)


@dataclass(frozen=True)
class StartTrace:
    """One gradient-descent start: bootstrap estimate and final exact loss."""

    index: int
    grid_loss: float
    final_loss: float


@dataclass(frozen=True)
class OptimizeResult:
    params: AmaParams
    final_loss: float
    method: str
    starts: tuple[StartTrace, ...]


def sobol_unit_points(dim: int, count: int) -> np.ndarray:
    """First `count` points of the unscrambled Sobol sequence in [0,1)^dim.

    The leading all-zeros point is kept: mapped to the lower corner of the
    search box it is the natural no-boost candidate. Draws are made at the
    next power of two and sliced, which the sequence is balanced for.
    """
    if dim < 1:
        raise ValueError("need at least one free parameter")
    if count < 1:
        raise ValueError("count must be >= 1")
    engine = qmc.Sobol(d=dim, scramble=False)
    budget = 1 << max(0, int(np.ceil(np.log2(count))))
    return engine.random(budget)[:count]


def default_bounds(env: BuiltEnvironment, support_hi: float) -> SearchBounds:
    """Boost box of +- one horizon of the largest per-step reward magnitude."""
    span = env.mdp.horizon_mass * support_hi
    if span <= 0:
        raise ValueError("support_hi must be positive")
    return SearchBounds(boost_lo=-span, boost_hi=span)


def sobol_grid_search(
    objective: Callable[[AmaParams], float],
    bounds: SearchBounds,
    cfg: OptimizerConfig,
    space: ParamSpace,
    num_points: int | None = None,
    threads: int = 1,
) -> list[tuple[AmaParams, float]]:
    """Evaluate a Sobol box sweep and rank candidates by estimated loss.

    The objective must average the loss over one fixed profile batch so that
    candidates are comparable. Ties keep the earlier candidate.
    """
    count = cfg.grid_points if num_points is None else num_points
    unit = sobol_unit_points(space.dim, count)
    nb = space.num_boosts
    thetas = np.empty_like(unit)
    thetas[:, :nb] = bounds.boost_lo + unit[:, :nb] * (bounds.boost_hi - bounds.boost_lo)
    thetas[:, nb:] = bounds.weight_lo + unit[:, nb:] * (
        bounds.weight_hi - bounds.weight_lo
    )
    candidates = [space.to_params(theta) for theta in thetas]
    losses = _parallel_map(lambda p: float(objective(p)), candidates, threads)
    order = np.argsort(losses, kind="stable")
    return [(candidates[i], losses[i]) for i in order]


def gaussian_smoothing_grad(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    sigma: float,
    num_perturbations: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One-sided Gaussian-smoothing gradient estimate of f at theta."""
    theta = np.asarray(theta, dtype=np.float64)
    base = f(theta)
    grad = np.zeros_like(theta)
    for _ in range(num_perturbations):
        u = rng.standard_normal(theta.shape)
        grad += (f(theta + sigma * u) - base) / sigma * u
    return grad / num_perturbations


def zeroth_order_grad(
    objective_at: Callable[[AmaParams], float],
    params: AmaParams,
    space: ParamSpace,
    cfg: OptimizerConfig,
    seed,
) -> np.ndarray:
    """Zeroth-order gradient of the exact batch loss in the packed vector.

    Perturbed points are weight-floored before evaluation, so the estimate
    is taken on the clamped objective the descent actually walks on.
    """
    rng = np.random.default_rng(seed)

    def f(theta: np.ndarray) -> float:
        return float(objective_at(space.to_params(space.clamp(theta))))

    return gaussian_smoothing_grad(
        f, space.to_vector(params), cfg.zo_sigma, cfg.zo_perturbations, rng
    )


def first_order_grad(
    mdp: TabularMdp,
    params: AmaParams,
    per: np.ndarray,
    loss: LossSpec,
    reg: RegularizationConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Batch-mean gradient of the smoothed loss: (dw (n,), db (S, A))."""
    dw, db = grad_smoothed_loss_batch(mdp, params, per, loss, reg)
    return dw.mean(axis=0), db.mean(axis=0)


def sample_batch(sampler, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `count` profiles from one stream, stacked to (count, n, S, A)."""
    return stack_profiles([sampler.sample(rng) for _ in range(count)])


def _mean_loss(mdp, params, per, loss) -> float:
    return float(exact_loss_batch(mdp, params, per, loss).mean())


def optimize(
    env: BuiltEnvironment,
    loss: LossSpec,
    distribution,
    cfg: OptimizerConfig,
    bounds: SearchBounds | None = None,
    method: str = "grid",
    threads: int = 1,
    freeze_weights: bool | None = None,
    reg: RegularizationConfig | None = None,
) -> OptimizeResult:
    """Search the mechanism parameters that minimize the expected loss.

    method "grid" returns the top candidate of the full Sobol sweep. The
    gradient methods seed num_starts descents from the best bootstrap-grid
    candidates, re-sample the profile batch every step, and return the start
    with the best final exact evaluation on a fresh shared batch.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    sampler = make_sampler(env, distribution)
    if freeze_weights is None:
        # symmetric agents keep unit weights; asymmetric runs search them
        freeze_weights = not isinstance(distribution, UniformAsymmetric)
    space = ParamSpace(
        n_agents=env.n_agents,
        boost_mask=env.free_boosts,
        freeze_weights=freeze_weights,
    )
    if bounds is None:
        bounds = default_bounds(env, sampler.support_hi)
    mdp = env.mdp
    seed = cfg.master_seed

    if method == "grid":
        per = sample_batch(sampler, cfg.grid_eval_profiles, _rng(seed, _STREAM_GRID))
        ranked = sobol_grid_search(
            lambda p: _mean_loss(mdp, p, per, loss),
            bounds,
            cfg,
            space,
            num_points=cfg.grid_points,
            threads=threads,
        )
        best, best_loss = ranked[0]
        return OptimizeResult(
            params=best, final_loss=best_loss, method=method, starts=()
        )

    boot_per = sample_batch(
        sampler, cfg.bootstrap_profiles, _rng(seed, _STREAM_BOOTSTRAP)
    )
    ranked = sobol_grid_search(
        lambda p: _mean_loss(mdp, p, boot_per, loss),
        bounds,
        cfg,
        space,
        num_points=cfg.bootstrap_points,
        threads=threads,
    )
    starts = ranked[: cfg.num_starts]
    reg = reg if reg is not None else RegularizationConfig()

    def run_start(s: int) -> np.ndarray:
        theta = space.to_vector(starts[s][0])
        for t in range(cfg.num_iterations):
            batch = sample_batch(
                sampler, cfg.batch_profiles, _rng(seed, _STREAM_BATCH, s, t)
            )
            if method == "zeroth":
                grad = zeroth_order_grad(
                    lambda p: _mean_loss(mdp, p, batch, loss),
                    space.to_params(theta),
                    space,
                    cfg,
                    _rng(seed, _STREAM_PERTURB, s, t),
                )
                theta = space.clamp(theta - cfg.zo_lr * grad)
            else:
                dw, db = first_order_grad(mdp, space.to_params(theta), batch, loss, reg)
                theta = space.clamp(theta - cfg.fo_lr * space.pack_grad(dw, db))
        return theta

    thetas = _parallel_map(run_start, range(len(starts)), threads)
    final_per = sample_batch(
        sampler, cfg.final_eval_profiles, _rng(seed, _STREAM_FINAL)
    )
    traces = []
    for s, theta in enumerate(thetas):
        final = _mean_loss(mdp, space.to_params(theta), final_per, loss)
        traces.append(StartTrace(index=s, grid_loss=starts[s][1], final_loss=final))
    winner = int(np.argmin([trace.final_loss for trace in traces]))
    return OptimizeResult(
        params=space.to_params(thetas[winner]),
        final_loss=traces[winner].final_loss,
        method=method,
        starts=tuple(traces),
    )
