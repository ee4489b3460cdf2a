"""Entropy-smoothed planning and exact gradients of smoothed functionals.

Replacing the hard per-state max with a log-sum-exp at temperature alpha turns
the planner into a smooth map from reward tables to occupancy measures. The
smoothed value includes the entropy bonus, so its gradient with respect to the
reward table is exactly the smoothed occupancy measure (an envelope identity),
and any linear functional q . nu_alpha of the occupancy measure can be
differentiated by the reverse-mode passes below. No autodiff framework is
involved; the adjoints mirror the solver recursions step by step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from amalab.mdp import Discounted, Episodic, OccupancyMeasure, TabularMdp, _check_rewards


@dataclass(frozen=True)
class RegularizationConfig:
    """Smoothing temperature and fixed-point iteration controls.

    alpha is the entropy weight; smaller values track the exact planner more
    closely at the cost of stiffer gradients. bellman_tol bounds the sup-norm
    difference between consecutive soft value iterates (discounted case only;
    episodic recursions are finite and exact).
    """

    alpha: float = 1e-2
    bellman_tol: float = 1e-10
    max_iters: int = 100_000

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.bellman_tol <= 0:
            raise ValueError("bellman_tol must be positive")


@dataclass(frozen=True)
class SoftSolution:
    """Smoothed planner output for a (B, S, A) reward stack.

    nu: (B, S, A) occupancy measures of the softmax policies.
    value: (B,) smoothed objective, entropy bonus included.
    policy: (B, S, A) softmax action distributions (zero rows on states the
        recursion never scores, e.g. episodic final-layer states).
    state_mass: (B, S) state visitation mass, nu summed over actions.
    """

    nu: np.ndarray
    value: np.ndarray
    policy: np.ndarray
    state_mass: np.ndarray


def _soft_episodic(mdp: TabularMdp, rewards: np.ndarray, alpha: float) -> SoftSolution:
    p = mdp.transition
    layers = mdp._layers
    t_max = mdp.horizon.num_steps
    b, s, a = rewards.shape
    v = np.zeros((b, s))
    pi = np.zeros((b, s, a))
    for t in range(t_max - 1, -1, -1):
        idx = layers[t]
        q_t = rewards[:, idx, :] + np.einsum("kaS,bS->bka", p[idx], v)
        v[:, idx] = alpha * logsumexp(q_t / alpha, axis=2)
        pi[:, idx, :] = softmax(q_t / alpha, axis=2)
    nu = np.zeros((b, s, a))
    mass = np.zeros((b, s))
    d = np.broadcast_to(mdp.initial_dist, (b, s)).copy()
    for t in range(t_max):
        idx = layers[t]
        mass[:, idx] = d[:, idx]
        nu[:, idx, :] = d[:, idx, None] * pi[:, idx]
        d_next = np.zeros((b, s))
        d_next += np.einsum("bka,kaS->bS", nu[:, idx, :], p[idx])
        d = d_next
    return SoftSolution(nu=nu, value=v @ mdp.initial_dist, policy=pi, state_mass=mass)


def _soft_discounted(mdp: TabularMdp, rewards: np.ndarray, cfg: RegularizationConfig) -> SoftSolution:
    p = mdp.transition
    gamma = mdp.horizon.gamma
    alpha = cfg.alpha
    b, s, a = rewards.shape
    v = np.zeros((b, s))
    for _ in range(cfg.max_iters):
        q = rewards + gamma * np.einsum("saS,bS->bsa", p, v)
        v_new = alpha * logsumexp(q / alpha, axis=2)
        done = np.abs(v_new - v).max() <= cfg.bellman_tol
        v = v_new
        if done:
            break
    else:
        raise RuntimeError("soft value iteration did not reach bellman_tol")
    q = rewards + gamma * np.einsum("saS,bS->bsa", p, v)
    pi = softmax(q / alpha, axis=2)
    eye = np.eye(s)
    p_pi = np.einsum("bsa,saS->bsS", pi, p)
    mass = np.linalg.solve(
        eye[None] - gamma * np.swapaxes(p_pi, 1, 2),
        np.broadcast_to(mdp.initial_dist, (b, s))[:, :, None],
    )[:, :, 0]
    nu = mass[:, :, None] * pi
    return SoftSolution(nu=nu, value=v @ mdp.initial_dist, policy=pi, state_mass=mass)


def soft_solve_batch(mdp: TabularMdp, rewards: np.ndarray, cfg: RegularizationConfig) -> SoftSolution:
    """Smoothed plan for a (B, S, A) reward stack at temperature cfg.alpha."""
    r = _check_rewards(mdp, rewards)
    if r.ndim != 3:
        raise ValueError("batched rewards must be (B, S, A)")
    if isinstance(mdp.horizon, Episodic):
        return _soft_episodic(mdp, r, cfg.alpha)
    return _soft_discounted(mdp, r, cfg)


def solve_regularized(
    mdp: TabularMdp, reward: np.ndarray, cfg: RegularizationConfig
) -> tuple[OccupancyMeasure, float]:
    """Smoothed occupancy measure and value (entropy bonus included) for one table."""
    r = _check_rewards(mdp, reward)
    if r.ndim != 2:
        raise ValueError("reward must be (S, A); use soft_solve_batch for stacks")
    sol = soft_solve_batch(mdp, r[None], cfg)
    return OccupancyMeasure(sol.nu[0]), float(sol.value[0])


def _softmax_backward(pi: np.ndarray, pi_bar: np.ndarray, alpha: float) -> np.ndarray:
    """Adjoint of pi = softmax(q / alpha) along the last axis."""
    inner = np.einsum("...a,...a->...", pi, pi_bar)
    return pi * (pi_bar - inner[..., None]) / alpha


def _linear_grad_episodic(
    mdp: TabularMdp, sol: SoftSolution, q_tables: np.ndarray, alpha: float
) -> np.ndarray:
    p = mdp.transition
    layers = mdp._layers
    t_max = mdp.horizon.num_steps
    b, s, a = sol.nu.shape
    # reverse the forward flow: accumulate nu_bar = q + P d_bar and split it
    # into the policy and state-mass adjoints layer by layer, last layer first
    pi_bar = np.zeros((b, s, a))
    d_bar = np.zeros((b, s))
    for t in range(t_max - 1, -1, -1):
        idx = layers[t]
        nu_bar = q_tables[:, idx, :] + np.einsum("kaS,bS->bka", p[idx], d_bar)
        pi_bar[:, idx, :] = sol.state_mass[:, idx, None] * nu_bar
        d_next = np.zeros((b, s))
        d_next[:, idx] = np.einsum("bka,bka->bk", sol.policy[:, idx, :], nu_bar)
        d_bar = d_next
    # reverse the backward induction: value adjoints flow from layer 0 forward
    c_bar = np.zeros((b, s, a))
    v_bar = np.zeros((b, s))
    for t in range(t_max):
        idx = layers[t]
        q_bar = _softmax_backward(sol.policy[:, idx, :], pi_bar[:, idx, :], alpha)
        q_bar += v_bar[:, idx, None] * sol.policy[:, idx, :]
        c_bar[:, idx, :] = q_bar
        v_next = np.zeros((b, s))
        v_next += np.einsum("bka,kaS->bS", q_bar, p[idx])
        v_bar = v_next
    return c_bar


def _linear_grad_discounted(
    mdp: TabularMdp, sol: SoftSolution, q_tables: np.ndarray, cfg: RegularizationConfig
) -> np.ndarray:
    p = mdp.transition
    gamma = mdp.horizon.gamma
    b, s, _ = sol.nu.shape
    eye = np.eye(s)
    pi = sol.policy
    d = sol.state_mass
    p_pi = np.einsum("bsa,saS->bsS", pi, p)
    # nu = d * pi with d the fixed point of d = mu0 + gamma P_pi^T d
    pi_bar = d[:, :, None] * q_tables
    d_bar = np.einsum("bsa,bsa->bs", pi, q_tables)
    lam = np.linalg.solve(eye[None] - gamma * p_pi, d_bar[:, :, None])[:, :, 0]
    pi_bar += gamma * d[:, :, None] * np.einsum("saS,bS->bsa", p, lam)
    q_bar = _softmax_backward(pi, pi_bar, cfg.alpha)
    c_bar = q_bar.copy()
    # V is itself a fixed point; push the value adjoint through (I - gamma P_pi^T)
    v_bar = gamma * np.einsum("bsa,saS->bS", q_bar, p)
    mu = np.linalg.solve(eye[None] - gamma * np.swapaxes(p_pi, 1, 2), v_bar[:, :, None])[:, :, 0]
    c_bar += mu[:, :, None] * pi
    return c_bar


def soft_linear_grad(
    mdp: TabularMdp, sol: SoftSolution, q_tables: np.ndarray, cfg: RegularizationConfig
) -> np.ndarray:
    """Gradient of sum_{s,a} q(s, a) nu_alpha(s, a) with respect to the reward table.

    q_tables is (B, S, A), matched to the solution stack; the result has the
    same shape. The coefficients q are treated as constants, so functionals
    whose q depends on the reward table need their own product-rule term; the
    smoothed value itself needs none, its gradient is sol.nu exactly.
    """
    q = np.asarray(q_tables, dtype=np.float64)
    if q.shape != sol.nu.shape:
        raise ValueError("q_tables must match the solution stack shape")
    if isinstance(mdp.horizon, Episodic):
        return _linear_grad_episodic(mdp, sol, q, cfg.alpha)
    return _linear_grad_discounted(mdp, sol, q, cfg)
