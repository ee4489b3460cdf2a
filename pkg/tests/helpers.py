"""Shared test fixtures: random instance generators and brute-force oracles.

The oracles deliberately avoid the library's solver internals. Episodic
policies are scored by propagating the state distribution layer by layer with
plain Python loops; optima come from enumerating every deterministic policy.
"""

import itertools

import numpy as np

from amalab.mdp import Discounted, Episodic, TabularMdp


def random_episodic_mdp(rng, layer_sizes, num_actions):
    """Random layered MDP; `layer_sizes` covers decision layers, a terminal layer is added."""
    sizes = list(layer_sizes) + [layer_sizes[-1]]
    layers = []
    layer_of = []
    start = 0
    for t, size in enumerate(sizes):
        layers.append(list(range(start, start + size)))
        layer_of.extend([t] * size)
        start += size
    n_states = start
    p = np.zeros((n_states, num_actions, n_states))
    for t in range(len(sizes) - 1):
        for s in layers[t]:
            for a in range(num_actions):
                p[s, a, layers[t + 1]] = rng.dirichlet(np.ones(len(layers[t + 1])))
    for s in layers[-1]:
        p[s, :, s] = 1.0
    mu0 = np.zeros(n_states)
    mu0[layers[0]] = rng.dirichlet(np.ones(len(layers[0])))
    horizon = Episodic(num_steps=len(sizes) - 1, state_layer=np.array(layer_of))
    return TabularMdp(transition=p, initial_dist=mu0, horizon=horizon)


def random_discounted_mdp(rng, num_states, num_actions, gamma=0.9):
    p = np.array(
        [
            [rng.dirichlet(np.ones(num_states)) for _ in range(num_actions)]
            for _ in range(num_states)
        ]
    )
    mu0 = rng.dirichlet(np.ones(num_states))
    return TabularMdp(transition=p, initial_dist=mu0, horizon=Discounted(gamma=gamma))


def random_reward(rng, mdp, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=(mdp.num_states, mdp.num_actions))


def rollout_deterministic(mdp, reward, actions):
    """Score a deterministic policy by propagating the state distribution.

    Episodic: exact layer-by-layer pass. Discounted: geometric series summed
    until the residual tail is below 1e-14 of the horizon mass.
    """
    n_states, n_actions = mdp.num_states, mdp.num_actions
    nu = np.zeros((n_states, n_actions))
    if isinstance(mdp.horizon, Episodic):
        d = {s: mdp.initial_dist[s] for s in range(n_states) if mdp.initial_dist[s] > 0}
        for _ in range(mdp.horizon.num_steps):
            nxt = {}
            for s, mass in d.items():
                a = actions[s]
                nu[s, a] += mass
                for s2 in range(n_states):
                    w = mdp.transition[s, a, s2]
                    if w > 0:
                        nxt[s2] = nxt.get(s2, 0.0) + mass * w
            d = nxt
    else:
        gamma = mdp.horizon.gamma
        d = mdp.initial_dist.copy()
        scale = 1.0
        for _ in range(10_000):
            for s in range(n_states):
                nu[s, actions[s]] += scale * d[s]
            nxt = np.zeros(n_states)
            for s in range(n_states):
                nxt += d[s] * mdp.transition[s, actions[s]]
            d = nxt
            scale *= gamma
            if scale / (1 - gamma) < 1e-14:
                break
    value = float(sum(nu[s, a] * reward[s, a] for s in range(n_states) for a in range(n_actions)))
    return nu, value


def enumerate_optimum(mdp, reward):
    """Best deterministic policy by exhaustive enumeration; ties keep the first found.

    Policies are enumerated over decision states in lowest-action-first order,
    so the first optimum matches a lowest-index tie-break.
    """
    decision = list(mdp.decision_states)
    best = (None, -np.inf)
    for choice in itertools.product(range(mdp.num_actions), repeat=len(decision)):
        actions = np.zeros(mdp.num_states, dtype=int)
        for s, a in zip(decision, choice):
            actions[s] = a
        nu, value = rollout_deterministic(mdp, reward, actions)
        if value > best[1] + 1e-12:
            best = ((nu, actions), value)
    return best[0][0], best[1], best[0][1]
