"""Smoothed-planner tests: closed forms, exact-limit behaviour, adjoint vs FD."""

import numpy as np
import pytest
from helpers import random_discounted_mdp, random_episodic_mdp, random_reward

from amalab.mdp import occupancy_flow_residual, solve_exact
from amalab.regularized import (
    RegularizationConfig,
    SoftSolution,
    soft_linear_grad,
    soft_solve_batch,
    solve_regularized,
)
from test_mdp import self_loop_mdp, single_decision_mdp


def central_fd(f, x, coords, step=1e-5):
    """Central finite difference of scalar f at the given flat coordinates."""
    grads = {}
    for c in coords:
        xp = x.copy()
        xm = x.copy()
        xp.flat[c] += step
        xm.flat[c] -= step
        grads[c] = (f(xp) - f(xm)) / (2 * step)
    return grads


def test_softmax_policy_on_two_arms():
    mdp = single_decision_mdp()
    reward = np.array([[1.0, 0.0], [0.0, 0.0]])
    occ, value = solve_regularized(mdp, reward, RegularizationConfig(alpha=1.0))
    e = np.exp(1.0)
    assert np.allclose(occ.nu[0], [e / (1 + e), 1 / (1 + e)], atol=1e-12)
    # soft value = log(e^1 + e^0) at alpha = 1
    assert np.isclose(value, np.log(e + 1.0), atol=1e-12)


def test_small_alpha_recovers_exact_plan():
    rng = np.random.default_rng(2)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 2, 2], num_actions=3)
    reward = random_reward(rng, mdp)
    occ_soft, _ = solve_regularized(mdp, reward, RegularizationConfig(alpha=1e-6))
    occ, value = solve_exact(mdp, reward)
    assert np.abs(occ_soft.nu - occ.nu).max() <= 1e-4


def test_value_gap_shrinks_with_alpha():
    rng = np.random.default_rng(5)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 1, 1], num_actions=3)
    assert mdp.num_states == 4
    reward = random_reward(rng, mdp)
    _, exact = solve_exact(mdp, reward)
    gaps = []
    for alpha in [1e-1, 1e-2, 1e-3]:
        _, val = solve_regularized(mdp, reward, RegularizationConfig(alpha=alpha))
        gaps.append(abs(val - exact))
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.parametrize("kind", ["episodic", "discounted"])
def test_entropy_bonus_bounds(kind):
    rng = np.random.default_rng(9)
    if kind == "episodic":
        mdp = random_episodic_mdp(rng, layer_sizes=[1, 3, 2], num_actions=3)
    else:
        mdp = random_discounted_mdp(rng, num_states=4, num_actions=3, gamma=0.9)
    reward = random_reward(rng, mdp)
    _, exact = solve_exact(mdp, reward)
    for alpha in [0.5, 1e-2]:
        _, val = solve_regularized(mdp, reward, RegularizationConfig(alpha=alpha))
        assert val >= exact - 1e-10
        assert val <= exact + alpha * mdp.horizon_mass * np.log(mdp.num_actions) + 1e-10


@pytest.mark.parametrize("kind", ["episodic", "discounted"])
def test_soft_occupancy_satisfies_flow(kind):
    rng = np.random.default_rng(13)
    if kind == "episodic":
        mdp = random_episodic_mdp(rng, layer_sizes=[2, 2, 3], num_actions=2)
    else:
        mdp = random_discounted_mdp(rng, num_states=5, num_actions=2)
    occ, _ = solve_regularized(mdp, random_reward(rng, mdp), RegularizationConfig())
    assert occupancy_flow_residual(mdp, occ) <= 1e-8
    assert occ.nu.min() >= 0.0
    assert abs(occ.nu.sum() - mdp.horizon_mass) <= 1e-8


@pytest.mark.parametrize("kind", ["episodic", "discounted"])
def test_value_gradient_is_soft_occupancy(kind):
    rng = np.random.default_rng(17)
    if kind == "episodic":
        mdp = random_episodic_mdp(rng, layer_sizes=[1, 2, 2], num_actions=2)
    else:
        mdp = random_discounted_mdp(rng, num_states=4, num_actions=2)
    reward = random_reward(rng, mdp)
    cfg = RegularizationConfig(alpha=1e-2, bellman_tol=1e-12)
    occ, _ = solve_regularized(mdp, reward, cfg)

    def value_at(r):
        return solve_regularized(mdp, r, cfg)[1]

    coords = rng.choice(reward.size, size=8, replace=False)
    fd = central_fd(value_at, reward, coords)
    for c, g in fd.items():
        assert abs(occ.nu.flat[c] - g) <= 1e-4 * max(1.0, abs(g))


@pytest.mark.parametrize("kind", ["episodic", "discounted"])
def test_linear_functional_gradient_matches_fd(kind):
    rng = np.random.default_rng(19)
    if kind == "episodic":
        mdp = random_episodic_mdp(rng, layer_sizes=[1, 3, 2], num_actions=3)
    else:
        mdp = random_discounted_mdp(rng, num_states=4, num_actions=3)
    reward = random_reward(rng, mdp)
    q = rng.uniform(-1, 1, size=reward.shape)
    cfg = RegularizationConfig(alpha=1e-2, bellman_tol=1e-12)
    sol = soft_solve_batch(mdp, reward[None], cfg)
    grad = soft_linear_grad(mdp, sol, q[None], cfg)[0]

    def functional(r):
        s = soft_solve_batch(mdp, r[None], cfg)
        return float((s.nu[0] * q).sum())

    coords = rng.choice(reward.size, size=10, replace=False)
    fd = central_fd(functional, reward, coords)
    for c, g in fd.items():
        assert abs(grad.flat[c] - g) <= 1e-4 * max(1.0, abs(g)), (c, grad.flat[c], g)


def test_soft_solution_batch_shapes_and_mass():
    rng = np.random.default_rng(23)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 2], num_actions=2)
    rewards = np.stack([random_reward(rng, mdp) for _ in range(4)])
    sol = soft_solve_batch(mdp, rewards, RegularizationConfig())
    assert isinstance(sol, SoftSolution)
    assert sol.nu.shape == rewards.shape
    assert np.allclose(sol.nu.sum(axis=(1, 2)), mdp.horizon.num_steps)
    assert np.allclose(sol.nu.sum(axis=2), sol.state_mass)


def test_config_validation():
    with pytest.raises(ValueError, match="alpha"):
        RegularizationConfig(alpha=0.0)
    with pytest.raises(ValueError, match="bellman_tol"):
        RegularizationConfig(bellman_tol=-1.0)


def test_discounted_solver_flags_nonconvergence():
    mdp = self_loop_mdp(gamma=0.9)
    cfg = RegularizationConfig(alpha=1e-2, max_iters=2)
    with pytest.raises(RuntimeError, match="bellman_tol"):
        soft_solve_batch(mdp, np.ones((1, 1, 1)), cfg)
