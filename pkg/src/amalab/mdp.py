"""Exact solvers for finite tabular MDPs.

Two horizon regimes are supported. Episodic MDPs encode the time step in the
state: every state carries a layer index, transitions move forward exactly one
layer, and states on the final layer are absorbing. Discounted MDPs run
forever with a factor gamma in (0, 1).

Everything here works on plain float64 arrays. Rewards are (S, A) tables;
batched entry points take (B, S, A) stacks and solve all B instances in one
pass so that large profile batches do not pay per-instance Python overhead.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

KERNEL_TOL = 1e-9
MASS_EPS = 1e-12


@dataclass(frozen=True)
class Episodic:
    """Finite horizon of `num_steps` decisions; `state_layer[s]` in 0..num_steps."""

    num_steps: int
    state_layer: np.ndarray


@dataclass(frozen=True)
class Discounted:
    """Infinite horizon with discount factor gamma in (0, 1)."""

    gamma: float


@dataclass(frozen=True)
class Policy:
    """Stochastic policy; `action_dist[s]` is a distribution over actions."""

    action_dist: np.ndarray


@dataclass(frozen=True)
class OccupancyMeasure:
    """Expected (discounted) visit counts per state-action pair."""

    nu: np.ndarray

    def state_mass(self) -> np.ndarray:
        return self.nu.sum(axis=1)


@dataclass(frozen=True)
class TabularMdp:
    """Tabular MDP with dense kernel `transition[s, a, s']` and start distribution.

    Episodic instances must put all initial mass on layer 0, move mass only to
    the next layer, and make final-layer states self-transition under every
    action. Rewards are not stored here; solvers take them as arguments.
    """

    transition: np.ndarray
    initial_dist: np.ndarray
    horizon: Episodic | Discounted

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=np.float64)
        mu0 = np.asarray(self.initial_dist, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must be (S, A, S), got {p.shape}")
        s = p.shape[0]
        if mu0.shape != (s,):
            raise ValueError(f"initial_dist must be ({s},), got {mu0.shape}")
        if not np.isfinite(p).all() or (p < -MASS_EPS).any():
            raise ValueError("transition entries must be finite and nonnegative")
        if np.abs(p.sum(axis=2) - 1.0).max() > KERNEL_TOL:
            raise ValueError("transition rows must sum to 1")
        if not np.isfinite(mu0).all() or (mu0 < -MASS_EPS).any():
            raise ValueError("initial_dist entries must be finite and nonnegative")
        if abs(mu0.sum() - 1.0) > KERNEL_TOL:
            raise ValueError("initial_dist must sum to 1")
        if isinstance(self.horizon, Episodic):
            layer = np.asarray(self.horizon.state_layer, dtype=np.int64)
            t_max = self.horizon.num_steps
            if t_max < 1:
                raise ValueError("num_steps must be >= 1")
            if layer.shape != (s,) or layer.min() < 0 or layer.max() > t_max:
                raise ValueError("state_layer must assign each state a layer in 0..num_steps")
            if mu0[layer != 0].sum() > KERNEL_TOL:
                raise ValueError("episodic initial mass must sit on layer 0")
            for t in range(t_max):
                idx = np.flatnonzero(layer == t)
                if idx.size == 0:
                    raise ValueError(f"layer {t} has no states")
                succ = layer[None, None, :] == t + 1
                if np.abs(np.where(succ, p[idx], 0.0).sum(axis=2) - 1.0).max() > KERNEL_TOL:
                    raise ValueError(f"layer {t} states must transition to layer {t + 1} only")
            term = np.flatnonzero(layer == t_max)
            eye = np.zeros((term.size, s))
            eye[np.arange(term.size), term] = 1.0
            if np.abs(p[term] - eye[:, None, :]).max() > KERNEL_TOL:
                raise ValueError("final-layer states must self-transition")
            object.__setattr__(self.horizon, "state_layer", layer)
        elif isinstance(self.horizon, Discounted):
            if not (0.0 < self.horizon.gamma < 1.0):
                raise ValueError("gamma must lie in (0, 1)")
        else:
            raise TypeError("horizon must be Episodic or Discounted")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "initial_dist", mu0)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def horizon_mass(self) -> float:
        """Total occupancy mass: T for episodic, 1/(1-gamma) for discounted."""
        if isinstance(self.horizon, Episodic):
            return float(self.horizon.num_steps)
        return 1.0 / (1.0 - self.horizon.gamma)

    @cached_property
    def _layers(self) -> tuple[np.ndarray, ...]:
        assert isinstance(self.horizon, Episodic)
        layer = self.horizon.state_layer
        return tuple(np.flatnonzero(layer == t) for t in range(self.horizon.num_steps + 1))

    @cached_property
    def decision_states(self) -> np.ndarray:
        """Indices of states where the action choice matters."""
        if isinstance(self.horizon, Episodic):
            return np.flatnonzero(self.horizon.state_layer < self.horizon.num_steps)
        return np.arange(self.num_states)


def _check_rewards(mdp: TabularMdp, rewards: np.ndarray) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    expect = (mdp.num_states, mdp.num_actions)
    if r.shape[-2:] != expect:
        raise ValueError(f"reward table must end in {expect}, got {r.shape}")
    if not np.isfinite(r).all():
        raise ValueError("reward entries must be finite")
    return r


def _solve_episodic_batch(mdp: TabularMdp, rewards: np.ndarray):
    """Backward induction plus forward flow for a (B, S, A) reward stack.

    Ties in the per-state argmax go to the lowest action index. Returns
    (nu, value, greedy, q) where nu is (B, S, A), value is (B,), greedy is the
    (B, S) chosen action and q the (B, S, A) action values (zero on the final
    layer, where occupancy is zero by convention).
    """
    p = mdp.transition
    layers = mdp._layers
    t_max = mdp.horizon.num_steps
    b, s, a = rewards.shape
    v = np.zeros((b, s))
    q = np.zeros((b, s, a))
    greedy = np.zeros((b, s), dtype=np.int64)
    for t in range(t_max - 1, -1, -1):
        idx = layers[t]
        q_t = rewards[:, idx, :] + np.einsum("kaS,bS->bka", p[idx], v)
        q[:, idx, :] = q_t
        greedy[:, idx] = np.argmax(q_t, axis=2)
        v[:, idx] = np.take_along_axis(q_t, greedy[:, idx][:, :, None], axis=2)[:, :, 0]
    value = v @ mdp.initial_dist
    nu = np.zeros((b, s, a))
    d = np.broadcast_to(mdp.initial_dist, (b, s)).copy()
    rows = np.arange(b)[:, None]
    for t in range(t_max):
        idx = layers[t]
        act = greedy[:, idx]
        nu[rows, idx[None, :], act] = d[:, idx]
        p_rows = p[idx[None, :], act, :]
        d_next = np.zeros((b, s))
        d_next += np.einsum("bk,bkS->bS", d[:, idx], p_rows)
        d = d_next
    return nu, value, greedy, q


def _policy_kernel(p: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Row-gather P under a deterministic (B, S) action choice -> (B, S, S)."""
    s = p.shape[0]
    return p[np.arange(s)[None, :], actions, :]


def _solve_discounted_batch(mdp: TabularMdp, rewards: np.ndarray, max_iters: int = 500):
    """Batched Howard policy iteration with exact policy evaluation.

    Each improvement step is guarded: an instance whose greedy policy changed
    without raising any state value by more than 1e-13 is frozen, which
    terminates float-level ties that would otherwise cycle forever.
    """
    p = mdp.transition
    gamma = mdp.horizon.gamma
    mu0 = mdp.initial_dist
    b, s, a = rewards.shape
    eye = np.eye(s)
    actions = np.argmax(rewards, axis=2)
    active = np.ones(b, dtype=bool)
    v_prev = None
    for it in range(max_iters):
        p_pi = _policy_kernel(p, actions)
        r_pi = np.take_along_axis(rewards, actions[:, :, None], axis=2)[:, :, 0]
        v = np.linalg.solve(eye[None] - gamma * p_pi, r_pi[:, :, None])[:, :, 0]
        if it > 0:
            stalled = (v - v_prev).max(axis=1) <= 1e-13
            active = active & ~stalled
        v_prev = v
        q = rewards + gamma * np.einsum("saS,bS->bsa", p, v)
        nxt = np.argmax(q, axis=2)
        changed = (nxt != actions).any(axis=1)
        active = active & changed
        if not active.any():
            break
        actions[active] = nxt[active]
    p_pi = _policy_kernel(p, actions)
    r_pi = np.take_along_axis(rewards, actions[:, :, None], axis=2)[:, :, 0]
    v = np.linalg.solve(eye[None] - gamma * p_pi, r_pi[:, :, None])[:, :, 0]
    d = np.linalg.solve(
        eye[None] - gamma * np.swapaxes(p_pi, 1, 2), np.broadcast_to(mu0, (b, s))[:, :, None]
    )[:, :, 0]
    nu = np.zeros((b, s, a))
    nu[np.arange(b)[:, None], np.arange(s)[None, :], actions] = d
    q = rewards + gamma * np.einsum("saS,bS->bsa", p, v)
    return nu, v @ mu0, actions, q


def solve_exact_batch(mdp: TabularMdp, rewards: np.ndarray):
    """Solve a (B, S, A) stack of reward tables; returns (nu (B, S, A), value (B,))."""
    r = _check_rewards(mdp, rewards)
    if r.ndim != 3:
        raise ValueError("batched rewards must be (B, S, A)")
    if isinstance(mdp.horizon, Episodic):
        nu, value, _, _ = _solve_episodic_batch(mdp, r)
    else:
        nu, value, _, _ = _solve_discounted_batch(mdp, r)
    return nu, value


def solve_exact(mdp: TabularMdp, reward: np.ndarray) -> tuple[OccupancyMeasure, float]:
    """Exact optimal occupancy measure and value for one (S, A) reward table.

    The optimum is attained by a deterministic policy; ties in the greedy
    argmax go to the lowest action index, so the result is reproducible.
    """
    r = _check_rewards(mdp, reward)
    if r.ndim != 2:
        raise ValueError("reward must be (S, A); use solve_exact_batch for stacks")
    nu, value = solve_exact_batch(mdp, r[None])
    return OccupancyMeasure(nu[0]), float(value[0])


def greedy_action_gaps(mdp: TabularMdp, reward: np.ndarray):
    """Per-state gap between the best and second-best action value.

    Returns (gaps, reachable): gaps is (S,) with inf where the MDP has a
    single action, reachable marks states visited with mass > 1e-12 by the
    greedy policy. Small gaps on reachable states signal argmax ties that
    make the chosen policy sensitive to perturbations.
    """
    r = _check_rewards(mdp, reward)
    if isinstance(mdp.horizon, Episodic):
        nu, _, _, q = _solve_episodic_batch(mdp, r[None])
    else:
        nu, _, _, q = _solve_discounted_batch(mdp, r[None])
    q = q[0]
    gaps = np.full(mdp.num_states, np.inf)
    if mdp.num_actions >= 2:
        part = np.partition(q, mdp.num_actions - 2, axis=1)
        gaps = part[:, -1] - part[:, -2]
    if isinstance(mdp.horizon, Episodic):
        gaps[mdp.horizon.state_layer == mdp.horizon.num_steps] = np.inf
    reachable = nu[0].sum(axis=1) > MASS_EPS
    return gaps, reachable


def evaluate_policy(
    mdp: TabularMdp, reward: np.ndarray, policy: Policy
) -> tuple[OccupancyMeasure, float]:
    """Occupancy measure and value of a fixed stochastic policy."""
    r = _check_rewards(mdp, reward)
    if r.ndim != 2:
        raise ValueError("reward must be (S, A)")
    pi = np.asarray(policy.action_dist, dtype=np.float64)
    if pi.shape != r.shape:
        raise ValueError(f"policy must be {r.shape}, got {pi.shape}")
    if (pi < -MASS_EPS).any() or np.abs(pi.sum(axis=1) - 1.0).max() > KERNEL_TOL:
        raise ValueError("policy rows must be distributions")
    p = mdp.transition
    s = mdp.num_states
    nu = np.zeros_like(r)
    if isinstance(mdp.horizon, Episodic):
        d = mdp.initial_dist.copy()
        for t in range(mdp.horizon.num_steps):
            idx = mdp._layers[t]
            nu[idx] = d[idx, None] * pi[idx]
            d = np.einsum("k,ka,kaS->S", d[idx], pi[idx], p[idx])
    else:
        gamma = mdp.horizon.gamma
        p_pi = np.einsum("sa,saS->sS", pi, p)
        d = np.linalg.solve(np.eye(s) - gamma * p_pi.T, mdp.initial_dist)
        nu = d[:, None] * pi
    return OccupancyMeasure(nu), float(np.sum(nu * r))


def policy_from_occupancy(occupancy: OccupancyMeasure) -> Policy:
    """Normalize occupancy rows into a policy; zero-mass states get uniform rows."""
    nu = np.asarray(occupancy.nu, dtype=np.float64)
    mass = nu.sum(axis=1)
    n_actions = nu.shape[1]
    pi = np.full_like(nu, 1.0 / n_actions)
    pos = mass > MASS_EPS
    pi[pos] = nu[pos] / mass[pos, None]
    return Policy(pi)


def occupancy_flow_residual(mdp: TabularMdp, occupancy: OccupancyMeasure) -> float:
    """Max absolute violation of the flow-conservation constraints.

    For each checked state: |sum_a nu(s, a) - mu0(s) - g * sum_{s', a'}
    P(s | s', a') nu(s', a')| with g = 1 (episodic) or gamma. Final-layer
    states of episodic MDPs are excluded: occupancy is zero there by
    convention while inflow is positive, so the constraint is not meaningful.
    """
    nu = np.asarray(occupancy.nu, dtype=np.float64)
    if nu.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("occupancy shape does not match the MDP")
    gamma = 1.0 if isinstance(mdp.horizon, Episodic) else mdp.horizon.gamma
    inflow = np.einsum("sa,saS->S", nu, mdp.transition)
    resid = np.abs(nu.sum(axis=1) - mdp.initial_dist - gamma * inflow)
    if isinstance(mdp.horizon, Episodic):
        resid = resid[mdp.horizon.state_layer < mdp.horizon.num_steps]
    return float(resid.max())
