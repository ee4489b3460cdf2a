"""Empirical incentive audits.

ic_audit probes dominant-strategy incentive compatibility by replaying the
mechanism on adversarial misreports, scoring each deviation by the agent's
true rewards along the policy the misreport induced, minus the payment from
the misreported run. ir_audit checks that truthful participation is not
charged into negative expected utility.

Both audits are exact: all expectations run through occupancy measures, so
any gain above float noise is a bug in the mechanism, not sampling error.
Value profiles should be drawn through draw_untied_profile, which rejects
draws whose argmax is decided by less than a gap tolerance anywhere the
policy can reach; a deterministic tie rule on a knife-edge draw would
otherwise turn float roundoff into spurious apparent gains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from amalab.mdp import TabularMdp, greedy_action_gaps
from amalab.mechanism import (
    AmaParams,
    RewardProfile,
    affine_reward,
    run_ama,
)

GAP_TOL = 1e-7


@dataclass(frozen=True)
class Resample:
    """Fresh draw of the agent's type from its own marginal."""

    sampler: object

    def misreports(self, profile, agent, trials, rng) -> Iterator[np.ndarray]:
        for _ in range(trials):
            yield self.sampler.resample_agent(profile, agent, rng).per_agent[agent]


@dataclass(frozen=True)
class Scale:
    """Report the true table multiplied by a positive factor."""

    factor: float

    def __post_init__(self):
        if self.factor <= 0:
            raise ValueError("factor must be > 0")

    def misreports(self, profile, agent, trials, rng) -> Iterator[np.ndarray]:
        yield self.factor * profile.per_agent[agent]


@dataclass(frozen=True)
class ZeroReport:
    """Claim complete indifference."""

    def misreports(self, profile, agent, trials, rng) -> Iterator[np.ndarray]:
        yield np.zeros_like(profile.per_agent[agent])


@dataclass(frozen=True)
class PerturbGaussian:
    """Add independent Gaussian noise to every table entry."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")

    def misreports(self, profile, agent, trials, rng) -> Iterator[np.ndarray]:
        table = profile.per_agent[agent]
        for _ in range(trials):
            yield table + self.sigma * rng.standard_normal(table.shape)


@dataclass(frozen=True)
class ExhaustiveGrid:
    """Replace one entry at a time with every value of a fixed grid.

    Exhausts points x entries misreports per agent, so this is meant for
    small instances only.
    """

    lo: float
    hi: float
    points: int = 5

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")
        if self.points < 2:
            raise ValueError("points must be >= 2")

    def misreports(self, profile, agent, trials, rng) -> Iterator[np.ndarray]:
        table = profile.per_agent[agent]
        for value in np.linspace(self.lo, self.hi, self.points):
            for s in range(table.shape[0]):
                for a in range(table.shape[1]):
                    out = table.copy()
                    out[s, a] = value
                    yield out


def deviation_gain(
    mdp: TabularMdp,
    params: AmaParams,
    true_profile: RewardProfile,
    agent: int,
    misreport: np.ndarray,
) -> float:
    """Utility gain of one misreport over truthful reporting.

    The deviating utility values the agent's TRUE rewards along the policy
    the misreported profile induces, and pays the misreported run's payment.
    """
    truth = run_ama(mdp, params, true_profile)
    u_truth = truth.agent_values[agent] - truth.payments[agent]
    per = true_profile.per_agent.copy()
    per[agent] = misreport
    deviated = run_ama(mdp, params, RewardProfile(per))
    true_value = float(
        np.sum(deviated.occupancy.nu * true_profile.per_agent[agent])
    )
    return true_value - deviated.payments[agent] - u_truth


def ic_audit(
    mdp: TabularMdp,
    params: AmaParams,
    true_profile: RewardProfile,
    strategies,
    trials: int,
    seed,
) -> float:
    """Worst utility gain over all agents and sampled misreports.

    Strategies with inherent randomness draw `trials` misreports from a
    stream keyed by (seed, agent, strategy position); deterministic
    strategies contribute their fixed deviations once.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    truth = run_ama(mdp, params, true_profile)
    u_truth = truth.agent_values - truth.payments
    worst = -np.inf
    for agent in range(true_profile.n_agents):
        for pos, strategy in enumerate(strategies):
            rng = np.random.default_rng([int(seed), agent, pos])
            for misreport in strategy.misreports(true_profile, agent, trials, rng):
                per = true_profile.per_agent.copy()
                per[agent] = misreport
                deviated = run_ama(mdp, params, RewardProfile(per))
                true_value = float(
                    np.sum(deviated.occupancy.nu * true_profile.per_agent[agent])
                )
                gain = true_value - deviated.payments[agent] - u_truth[agent]
                worst = max(worst, gain)
    return float(worst)


def ir_audit(mdp: TabularMdp, params: AmaParams, profile: RewardProfile) -> float:
    """Minimum truthful expected utility over agents: min_i value_i - p_i."""
    out = run_ama(mdp, params, profile)
    return float((out.agent_values - out.payments).min())


def tie_gap(mdp: TabularMdp, params: AmaParams, profile: RewardProfile) -> float:
    """Smallest reachable argmax margin across the main and marginal economies."""
    smallest = np.inf
    c = affine_reward(params, profile)
    tables = [c]
    for i in range(profile.n_agents):
        tables.append(c - params.weights[i] * profile.per_agent[i])
    for table in tables:
        gaps, reachable = greedy_action_gaps(mdp, table)
        if reachable.any():
            smallest = min(smallest, float(gaps[reachable].min()))
    return smallest


def draw_untied_profile(
    mdp: TabularMdp,
    params: AmaParams,
    sampler,
    rng: np.random.Generator,
    gap_tol: float = GAP_TOL,
    max_redraws: int = 100,
) -> tuple[RewardProfile, int]:
    """Sample a profile whose chosen policies are decided by clear margins.

    Returns (profile, redraw count). Draws where any reachable state of the
    main or a marginal economy is an argmax tie within gap_tol are redrawn,
    so the audit tolerances never hinge on the deterministic tie rule.
    """
    for redraws in range(max_redraws + 1):
        profile = sampler.sample(rng)
        if tie_gap(mdp, params, profile) >= gap_tol:
            return profile, redraws
    raise RuntimeError(
        f"no tie-free profile within {max_redraws} redraws; "
        "the distribution concentrates on argmax ties"
    )
