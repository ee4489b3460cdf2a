"""Mechanism-level tests: payments, identities, losses, smoothed gradients."""

import numpy as np
import pytest
from helpers import random_episodic_mdp, random_reward
from hypothesis import given, settings
from hypothesis import strategies as st

from amalab.mechanism import (
    AmaParams,
    LossSpec,
    MechanismOutcome,
    RewardProfile,
    affine_reward,
    exact_loss_batch,
    grad_smoothed_loss,
    loss_to_metric,
    run_ama,
    smoothed_loss_batch,
    stack_profiles,
    vcg_baseline,
    vcg_params,
)
from amalab.regularized import RegularizationConfig
from test_mdp import single_decision_mdp


def one_round_auction():
    """One sale round, two bidders, actions (sell-to-1, sell-to-2, withhold)."""
    return single_decision_mdp(num_actions=3)


def bidder_profile(v1, v2):
    per = np.zeros((2, 2, 3))
    per[0, 0, 0] = v1
    per[1, 0, 1] = v2
    return RewardProfile(per)


def test_affine_reward_weights_and_boosts():
    per = np.array([[[1.0, 0.0]], [[0.0, 2.0]]])
    params = AmaParams(weights=np.array([2.0, 1.0]), boosts=np.array([[0.5, -0.5]]))
    assert np.allclose(affine_reward(params, RewardProfile(per)), [[2.5, 1.5]])


def test_affine_reward_identity_at_unit_params():
    rng = np.random.default_rng(0)
    per = rng.normal(size=(3, 4, 2))
    params = AmaParams(weights=np.ones(3), boosts=np.zeros((4, 2)))
    assert np.array_equal(affine_reward(params, RewardProfile(per)), per.sum(axis=0))


def test_affine_reward_shape_mismatch():
    params = AmaParams(weights=np.ones(2), boosts=np.zeros((1, 2)))
    with pytest.raises(ValueError):
        affine_reward(params, RewardProfile(np.zeros((2, 3, 3))))


def test_weights_below_floor_rejected():
    with pytest.raises(ValueError, match="weight_floor"):
        AmaParams(weights=np.array([1.0, 1e-4]), boosts=np.zeros((1, 1)))


def test_second_price_payments():
    mdp = one_round_auction()
    out = vcg_baseline(mdp, bidder_profile(0.8, 0.3))
    assert isinstance(out, MechanismOutcome)
    assert np.allclose(out.payments, [0.3, 0.0], atol=1e-12)
    assert np.isclose(out.sw, 0.8)
    assert np.isclose(out.revenue, 0.3)


def test_tied_values_resolve_to_first_agent():
    mdp = one_round_auction()
    out = vcg_baseline(mdp, bidder_profile(0.5, 0.5))
    assert out.occupancy.nu[0, 0] == 1.0  # sale to agent 1
    assert np.isclose(out.revenue, 0.5)


def test_single_agent_pays_nothing_without_boosts():
    mdp = single_decision_mdp(num_actions=2)
    per = np.zeros((1, 2, 2))
    per[0, 0, 0] = 0.9
    out = vcg_baseline(mdp, RewardProfile(per))
    assert out.payments[0] == 0.0
    assert out.revenue == 0.0


def test_boost_can_force_no_sale():
    mdp = one_round_auction()
    boosts = np.zeros((2, 3))
    boosts[0, 2] = 0.5
    params = AmaParams(weights=np.ones(2), boosts=boosts)
    out = run_ama(mdp, params, bidder_profile(0.3, 0.2))
    assert out.occupancy.nu[0, 2] == 1.0  # withhold wins
    assert np.allclose(out.payments, [0.0, 0.0], atol=1e-12)
    assert out.revenue == 0.0
    assert out.sw == 0.0


def random_profile(rng, mdp, n_agents, lo=-1.0, hi=1.0):
    return RewardProfile(
        rng.uniform(lo, hi, size=(n_agents, mdp.num_states, mdp.num_actions))
    )


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_payment_identity_and_decomposition(seed):
    rng = np.random.default_rng(seed)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 2, 2], num_actions=2)
    profile = random_profile(rng, mdp, n_agents=3)
    params = AmaParams(
        weights=rng.uniform(0.2, 2.0, size=3),
        boosts=rng.uniform(-1, 1, size=(mdp.num_states, mdp.num_actions)),
    )
    out = run_ama(mdp, params, profile)
    expect = (out.asw_minus - out.asw) / params.weights + out.agent_values
    assert np.abs(out.payments - expect).max() <= 1e-9
    assert abs(out.sw - out.agent_values.sum()) <= 1e-9
    assert abs(out.revenue - out.payments.sum()) <= 1e-9
    # revenue decomposition: rev = -sum_i asw/w_i + sw + sum_i asw_minus_i/w_i
    inv_w = 1.0 / params.weights
    decomp = -inv_w.sum() * out.asw + out.sw + (inv_w * out.asw_minus).sum()
    assert abs(out.revenue - decomp) <= 1e-9


def test_positive_scaling_leaves_choice_unchanged():
    rng = np.random.default_rng(77)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 2], num_actions=3)
    profile = random_profile(rng, mdp, n_agents=2)
    params = AmaParams(
        weights=np.array([0.7, 1.4]),
        boosts=rng.uniform(-1, 1, size=(mdp.num_states, mdp.num_actions)),
    )
    scaled = AmaParams(weights=2.5 * params.weights, boosts=2.5 * params.boosts)
    out = run_ama(mdp, params, profile)
    out_scaled = run_ama(mdp, scaled, profile)
    assert np.abs(out.occupancy.nu - out_scaled.occupancy.nu).max() <= 1e-12
    assert np.abs(out.payments - out_scaled.payments).max() <= 1e-9


def test_exact_loss_batch_matches_run_ama():
    rng = np.random.default_rng(5)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 2, 2], num_actions=2)
    profiles = [random_profile(rng, mdp, n_agents=2, lo=0.0) for _ in range(6)]
    params = AmaParams(
        weights=np.array([1.0, 1.3]),
        boosts=rng.uniform(-0.5, 0.5, size=(mdp.num_states, mdp.num_actions)),
    )
    per = stack_profiles(profiles)
    losses = exact_loss_batch(mdp, params, per, LossSpec("revenue"))
    for i, profile in enumerate(profiles):
        assert abs(losses[i] + run_ama(mdp, params, profile).revenue) <= 1e-12
    welfare = exact_loss_batch(mdp, params, per, LossSpec("neg_welfare"))
    for i, profile in enumerate(profiles):
        assert abs(welfare[i] + run_ama(mdp, params, profile).sw) <= 1e-12


def test_loss_to_metric_signs():
    losses = np.array([-0.4, 0.9])
    assert np.allclose(loss_to_metric("revenue", losses), [0.4, -0.9])
    assert np.allclose(loss_to_metric("makespan", losses), [-0.4, 0.9])


def test_makespan_loss_requires_cost_tables():
    with pytest.raises(ValueError, match="cost_tables"):
        LossSpec("makespan")
    with pytest.raises(ValueError, match="kind"):
        LossSpec("profit")


def test_linear_cost_loss_uses_occupancy():
    mdp = single_decision_mdp(num_actions=2)
    per = np.zeros((1, 1, 2, 2))
    per[0, 0, 0, 1] = 1.0  # agent prefers action 1

    def tables(stack):
        q = np.zeros((stack.shape[0], 2, 2))
        q[:, 0, 1] = 3.0
        return q

    params = AmaParams(weights=np.ones(1), boosts=np.zeros((2, 2)))
    losses = exact_loss_batch(mdp, params, per, LossSpec("makespan", tables))
    assert np.allclose(losses, [3.0])


def test_smoothed_loss_converges_to_exact():
    rng = np.random.default_rng(40)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 2], num_actions=2)
    profiles = stack_profiles([random_profile(rng, mdp, 2, lo=0.0) for _ in range(30)])
    params = AmaParams(
        weights=np.ones(2),
        boosts=rng.uniform(-0.3, 0.3, size=(mdp.num_states, mdp.num_actions)),
    )
    loss = LossSpec("revenue")
    exact = exact_loss_batch(mdp, params, profiles, loss).mean()
    gaps = []
    for alpha in [1e-1, 1e-2, 1e-3]:
        cfg = RegularizationConfig(alpha=alpha)
        gaps.append(abs(smoothed_loss_batch(mdp, params, profiles, loss, cfg).mean() - exact))
    assert gaps[0] >= gaps[1] >= gaps[2]
    assert gaps[2] <= 0.01 * mdp.horizon.num_steps


@pytest.mark.parametrize("kind", ["revenue", "neg_welfare"])
def test_grad_smoothed_loss_matches_fd(kind):
    rng = np.random.default_rng(55)
    mdp = random_episodic_mdp(rng, layer_sizes=[1, 2, 2], num_actions=3)
    profile = random_profile(rng, mdp, n_agents=2, lo=0.0)
    params = AmaParams(
        weights=np.array([0.8, 1.2]),
        boosts=rng.uniform(-0.5, 0.5, size=(mdp.num_states, mdp.num_actions)),
    )
    cfg = RegularizationConfig(alpha=1e-2)
    loss = LossSpec(kind)
    dw, db = grad_smoothed_loss(mdp, params, profile, loss, cfg)

    def loss_at(w, b):
        p = AmaParams(weights=w, boosts=b)
        return float(smoothed_loss_batch(mdp, p, profile.per_agent[None], loss, cfg)[0])

    step = 1e-5
    for j in range(2):
        wp, wm = params.weights.copy(), params.weights.copy()
        wp[j] += step
        wm[j] -= step
        fd = (loss_at(wp, params.boosts) - loss_at(wm, params.boosts)) / (2 * step)
        assert abs(dw[j] - fd) <= 1e-3 * max(1.0, abs(fd)), (j, dw[j], fd)
    coords = rng.choice(params.boosts.size, size=6, replace=False)
    for c in coords:
        bp, bm = params.boosts.copy(), params.boosts.copy()
        bp.flat[c] += step
        bm.flat[c] -= step
        fd = (loss_at(params.weights, bp) - loss_at(params.weights, bm)) / (2 * step)
        assert abs(db.flat[c] - fd) <= 1e-3 * max(1.0, abs(fd)), (c, db.flat[c], fd)


def test_vcg_params_are_unit():
    mdp = single_decision_mdp()
    params = vcg_params(3, mdp)
    assert np.array_equal(params.weights, np.ones(3))
    assert not params.boosts.any()
