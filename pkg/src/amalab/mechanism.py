"""Dynamic affine-maximizer mechanisms over tabular MDPs.

An affine maximizer is parameterized by per-agent weights w and a boost table
b. It runs the policy that maximizes the affine social welfare
asw = sum_nu (sum_i w_i r_i + b) and charges each agent the weighted
externality it imposes: p_i = (asw_minus_i - bracket_i) / w_i, where
asw_minus_i is the optimum of the economy with agent i's weighted reward
removed (boosts stay) and bracket_i scores the chosen policy without agent
i's contribution. Computing bracket_i directly from the table c - w_i r_i,
rather than as asw - w_i value_i, keeps payments exact when the two economies
pick policies of identical score.

With w = 1 and b = 0 this is the dynamic VCG mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from amalab.mdp import OccupancyMeasure, TabularMdp, _check_rewards, solve_exact_batch
from amalab.regularized import RegularizationConfig, soft_linear_grad, soft_solve_batch

WEIGHT_FLOOR = 1e-3

LOSS_KINDS = ("revenue", "neg_welfare", "makespan")


@dataclass(frozen=True)
class AmaParams:
    """Affine-maximizer parameters: one weight per agent, one boost per state-action."""

    weights: np.ndarray
    boosts: np.ndarray
    weight_floor: float = WEIGHT_FLOOR

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.boosts, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a nonempty vector")
        if not np.isfinite(w).all() or (w < self.weight_floor).any():
            raise ValueError(f"weights must be finite and >= weight_floor ({self.weight_floor})")
        if b.ndim != 2 or not np.isfinite(b).all():
            raise ValueError("boosts must be a finite (S, A) table")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "boosts", b)

    @property
    def n_agents(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class RewardProfile:
    """Stacked per-agent reward tables, shape (n_agents, S, A)."""

    per_agent: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.per_agent, dtype=np.float64)
        if r.ndim != 3 or r.shape[0] < 1:
            raise ValueError("per_agent must be (n_agents, S, A)")
        if not np.isfinite(r).all():
            raise ValueError("reward entries must be finite")
        object.__setattr__(self, "per_agent", r)

    @property
    def n_agents(self) -> int:
        return self.per_agent.shape[0]


@dataclass(frozen=True)
class MechanismOutcome:
    """Everything the mechanism produces on one reward profile."""

    occupancy: OccupancyMeasure
    asw: float
    asw_minus: np.ndarray
    agent_values: np.ndarray
    payments: np.ndarray
    sw: float
    revenue: float


@dataclass(frozen=True)
class LossSpec:
    """Objective to minimize over mechanism parameters.

    kind is one of "revenue" (negated expected revenue), "neg_welfare"
    (negated utilitarian welfare of the chosen policy) or "makespan".
    Makespan needs cost_tables: a batched map from stacked profiles
    (B, n, S, A) to (B, S, A) tables whose inner product with the occupancy
    measure is the expected loss; environments that support it provide one.
    """

    kind: str
    cost_tables: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"kind must be one of {LOSS_KINDS}")
        if self.kind == "makespan" and self.cost_tables is None:
            raise ValueError("makespan loss needs cost_tables")


def loss_to_metric(kind: str, loss_values: np.ndarray) -> np.ndarray:
    """Map minimization losses to their reported domain metric.

    Revenue and welfare are maximized, so the metric is the negated loss;
    makespan is already the metric.
    """
    if kind == "makespan":
        return +np.asarray(loss_values)
    return -np.asarray(loss_values)


def stack_profiles(profiles: list[RewardProfile]) -> np.ndarray:
    return np.stack([p.per_agent for p in profiles])


def _check_profiles(mdp: TabularMdp, params: AmaParams, per: np.ndarray) -> np.ndarray:
    per = np.asarray(per, dtype=np.float64)
    if per.ndim != 4:
        raise ValueError("stacked profiles must be (B, n_agents, S, A)")
    if per.shape[1] != params.n_agents:
        raise ValueError("profile agent count does not match params")
    if per.shape[2:] != (mdp.num_states, mdp.num_actions):
        raise ValueError("profile tables do not match the MDP shape")
    if params.boosts.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("boost table does not match the MDP shape")
    if not np.isfinite(per).all():
        raise ValueError("profile entries must be finite")
    return per


def affine_reward(params: AmaParams, profile: RewardProfile) -> np.ndarray:
    """Weighted sum of agent rewards plus boosts: sum_i w_i r_i + b."""
    per = profile.per_agent
    if per.shape[0] != params.n_agents:
        raise ValueError("profile agent count does not match params")
    if per.shape[1:] != params.boosts.shape:
        raise ValueError("boost table does not match the profile shape")
    return np.einsum("i,isa->sa", params.weights, per) + params.boosts


def _affine_batch(params: AmaParams, per: np.ndarray) -> np.ndarray:
    return np.einsum("i,bisa->bsa", params.weights, per) + params.boosts


def _outcome_arrays(mdp: TabularMdp, params: AmaParams, per: np.ndarray) -> dict:
    """Batched mechanism run over stacked profiles (B, n, S, A)."""
    w = params.weights
    n = params.n_agents
    c = _affine_batch(params, per)
    nu, asw = solve_exact_batch(mdp, c)
    agent_values = np.einsum("bsa,bisa->bi", nu, per)
    sw = agent_values.sum(axis=1)
    asw_minus = np.empty((per.shape[0], n))
    bracket = np.empty((per.shape[0], n))
    for i in range(n):
        c_minus = c - w[i] * per[:, i]
        _, asw_minus[:, i] = solve_exact_batch(mdp, c_minus)
        bracket[:, i] = np.einsum("bsa,bsa->b", nu, c_minus)
    payments = (asw_minus - bracket) / w
    return {
        "nu": nu,
        "asw": asw,
        "asw_minus": asw_minus,
        "agent_values": agent_values,
        "payments": payments,
        "sw": sw,
        "revenue": payments.sum(axis=1),
    }


def run_ama(mdp: TabularMdp, params: AmaParams, profile: RewardProfile) -> MechanismOutcome:
    """Run the affine maximizer on one profile: chosen occupancy plus payments."""
    per = _check_profiles(mdp, params, profile.per_agent[None])
    out = _outcome_arrays(mdp, params, per)
    return MechanismOutcome(
        occupancy=OccupancyMeasure(out["nu"][0]),
        asw=float(out["asw"][0]),
        asw_minus=out["asw_minus"][0],
        agent_values=out["agent_values"][0],
        payments=out["payments"][0],
        sw=float(out["sw"][0]),
        revenue=float(out["revenue"][0]),
    )


def vcg_params(n_agents: int, mdp: TabularMdp) -> AmaParams:
    """Unit weights, zero boosts: the dynamic VCG mechanism."""
    return AmaParams(
        weights=np.ones(n_agents), boosts=np.zeros((mdp.num_states, mdp.num_actions))
    )


def truthful_utilities_batch(
    mdp: TabularMdp, params: AmaParams, per: np.ndarray
) -> np.ndarray:
    """Truthful expected utility value_i - payment_i for stacked profiles.

    (B, n, S, A) -> (B, n); row minima are the individual-rationality margin.
    """
    per = _check_profiles(mdp, params, per)
    out = _outcome_arrays(mdp, params, per)
    return out["agent_values"] - out["payments"]


def vcg_baseline(mdp: TabularMdp, profile: RewardProfile) -> MechanismOutcome:
    return run_ama(mdp, vcg_params(profile.n_agents, mdp), profile)


def exact_loss_batch(
    mdp: TabularMdp, params: AmaParams, per: np.ndarray, loss: LossSpec
) -> np.ndarray:
    """Exact per-profile loss for stacked profiles (B, n, S, A) -> (B,)."""
    per = _check_profiles(mdp, params, per)
    if loss.kind == "revenue":
        return -_outcome_arrays(mdp, params, per)["revenue"]
    nu, _ = solve_exact_batch(mdp, _affine_batch(params, per))
    if loss.kind == "neg_welfare":
        return -np.einsum("bsa,bisa->b", nu, per)
    return np.einsum("bsa,bsa->b", nu, loss.cost_tables(per))


def smoothed_loss_batch(
    mdp: TabularMdp,
    params: AmaParams,
    per: np.ndarray,
    loss: LossSpec,
    cfg: RegularizationConfig,
) -> np.ndarray:
    """Smoothed per-profile loss: the exact loss with the planner replaced by
    its entropy-regularized version (smoothed objectives include the entropy
    bonus, so smoothed revenue uses the smoothed asw values throughout)."""
    per = _check_profiles(mdp, params, per)
    c = _affine_batch(params, per)
    sol = soft_solve_batch(mdp, c, cfg)
    if loss.kind == "neg_welfare":
        return -np.einsum("bsa,bisa->b", sol.nu, per)
    if loss.kind == "makespan":
        return np.einsum("bsa,bsa->b", sol.nu, loss.cost_tables(per))
    w = params.weights
    inv_w = 1.0 / w
    sw = np.einsum("bsa,bisa->b", sol.nu, per)
    total = inv_w.sum() * sol.value - sw
    for i in range(params.n_agents):
        minus = soft_solve_batch(mdp, c - w[i] * per[:, i], cfg)
        total -= inv_w[i] * minus.value
    return total


def grad_smoothed_loss_batch(
    mdp: TabularMdp,
    params: AmaParams,
    per: np.ndarray,
    loss: LossSpec,
    cfg: RegularizationConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-profile gradient of the smoothed loss in the mechanism parameters.

    Returns (dw, db) with shapes (B, n) and (B, S, A). Smoothed values obey
    the envelope identities d asw / d b = nu_alpha and
    d asw / d w_i = sum nu_alpha r_i; only the welfare and makespan terms,
    which score a fixed q against the moving occupancy measure, need the
    reverse-mode pass through the planner.
    """
    per = _check_profiles(mdp, params, per)
    b_sz = per.shape[0]
    n = params.n_agents
    w = params.weights
    c = _affine_batch(params, per)
    sol = soft_solve_batch(mdp, c, cfg)
    if loss.kind in ("neg_welfare", "makespan"):
        if loss.kind == "neg_welfare":
            q = -per.sum(axis=1)
        else:
            q = loss.cost_tables(per)
        db = soft_linear_grad(mdp, sol, q, cfg)
        dw = np.einsum("bsa,bisa->bi", db, per)
        return dw, db
    inv_w = 1.0 / w
    q_sw = per.sum(axis=1)
    g_sw = soft_linear_grad(mdp, sol, q_sw, cfg)
    db = inv_w.sum() * sol.nu - g_sw
    r_dots = np.einsum("bsa,bjsa->bj", sol.nu, per)
    dw = inv_w.sum() * r_dots - sol.value[:, None] / w[None, :] ** 2
    dw -= np.einsum("bsa,bjsa->bj", g_sw, per)
    for i in range(n):
        minus = soft_solve_batch(mdp, c - w[i] * per[:, i], cfg)
        db -= inv_w[i] * minus.nu
        contrib = np.einsum("bsa,bjsa->bj", minus.nu, per)
        contrib[:, i] = 0.0  # the i-removed economy does not depend on w_i
        dw -= inv_w[i] * contrib
        dw[:, i] += minus.value / w[i] ** 2
    return dw, db


def grad_smoothed_loss(
    mdp: TabularMdp,
    params: AmaParams,
    profile: RewardProfile,
    loss: LossSpec,
    cfg: RegularizationConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-profile smoothed-loss gradient: (dw (n,), db (S, A))."""
    dw, db = grad_smoothed_loss_batch(mdp, params, profile.per_agent[None], loss, cfg)
    return dw[0], db[0]
