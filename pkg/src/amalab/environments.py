"""The three benchmark environments: sequential sales, task scheduling, gridworld.

Each builder returns a BuiltEnvironment subclass bundling the tabular MDP, a
per-agent reward encoder, and environment extras (the task-scheduling builder
also provides the makespan cost tables consumed by the makespan loss).
Type distributions are small dataclasses; make_sampler pairs one with a built
environment and yields seeded RewardProfile draws.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from amalab.mdp import Discounted, Episodic, TabularMdp
from amalab.mechanism import RewardProfile


@dataclass(frozen=True)
class SequentialSalesEnv:
    """n unit-demand bidders, m identical items sold one per round."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")


@dataclass(frozen=True)
class TaskSchedulingEnv:
    """n workers; one task arrives per round for `tasks` rounds."""

    n: int
    tasks: int

    def __post_init__(self):
        if self.n < 1 or self.tasks < 1:
            raise ValueError("n and tasks must be >= 1")


@dataclass(frozen=True)
class GridworldEnv:
    """side x side grid, n agents with replenishing goal rewards, discounted."""

    side: int
    n: int
    gamma: float = 0.9
    start: int = 0

    def __post_init__(self):
        if self.side < 2:
            raise ValueError("side must be >= 2")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if not (0 <= self.start < self.side * self.side):
            raise ValueError("start must be a valid cell")


class BuiltEnvironment:
    """Common bundle: MDP, agent count, table size column, free-boost mask."""

    kind: str

    def __init__(self, mdp, n_agents, size_m, state_labels, free_boosts, label):
        self.mdp = mdp
        self.n_agents = n_agents
        self.size_m = size_m
        self.state_labels = state_labels
        self.free_boosts = free_boosts
        self.label = label


class BuiltSequentialSales(BuiltEnvironment):
    kind = "sequential_sales"

    def __init__(self, env: SequentialSalesEnv):
        self.env = env
        n, m = env.n, env.m
        states = []
        for t in range(m + 1):
            for size in range(0, min(t, n) + 1):
                for sub in itertools.combinations(range(n), size):
                    states.append((t, sub))
        index = {st: k for k, st in enumerate(states)}
        n_states = len(states)
        n_actions = n + 1  # sell-to-i for each agent, then withhold
        p = np.zeros((n_states, n_actions, n_states))
        layer = np.zeros(n_states, dtype=np.int64)
        for (t, sub), k in index.items():
            layer[k] = t
            if t == m:
                p[k, :, k] = 1.0
                continue
            for a in range(n_actions):
                if a < n and a not in sub:
                    nxt = (t + 1, tuple(sorted(sub + (a,))))
                else:
                    nxt = (t + 1, sub)
                p[k, a, index[nxt]] = 1.0
        mu0 = np.zeros(n_states)
        mu0[index[(0, ())]] = 1.0
        mdp = TabularMdp(p, mu0, Episodic(num_steps=m, state_layer=layer))
        free = np.zeros((n_states, n_actions), dtype=bool)
        free[layer < m] = True
        labels = tuple(f"t={t} sold={{{','.join(str(i + 1) for i in sub)}}}" for t, sub in states)
        super().__init__(mdp, n, m, labels, free, f"sequential_sales(n={n},m={m})")
        self._states = states
        self._unit_tables = np.zeros((n, n_states, n_actions))
        for (t, sub), k in index.items():
            if t == m:
                continue
            for i in range(n):
                if i not in sub:
                    self._unit_tables[i, k, i] = 1.0

    def value_table(self, agent: int, value: float) -> np.ndarray:
        """Reward table of one bidder with the given item value."""
        return value * self._unit_tables[agent]


class BuiltTaskScheduling(BuiltEnvironment):
    kind = "task_scheduling"

    def __init__(self, env: TaskSchedulingEnv):
        self.env = env
        n, t_max = env.n, env.tasks
        states = []
        for tau in range(t_max + 1):
            for hist in itertools.product(range(n), repeat=tau):
                states.append((tau, hist))
        index = {st: k for k, st in enumerate(states)}
        n_states = len(states)
        p = np.zeros((n_states, n, n_states))
        layer = np.zeros(n_states, dtype=np.int64)
        for (tau, hist), k in index.items():
            layer[k] = tau
            if tau == t_max:
                p[k, :, k] = 1.0
                continue
            for a in range(n):
                p[k, a, index[(tau + 1, hist + (a,))]] = 1.0
        mu0 = np.zeros(n_states)
        mu0[index[(0, ())]] = 1.0
        mdp = TabularMdp(p, mu0, Episodic(num_steps=t_max, state_layer=layer))
        free = np.zeros((n_states, n), dtype=bool)
        free[layer < t_max] = True
        labels = tuple(f"tau={tau} hist={hist}" for tau, hist in states)
        super().__init__(mdp, n, t_max, labels, free, f"task_scheduling(n={n},T={t_max})")
        self._layer = layer
        self._last_layer = [(k, hist) for (tau, hist), k in index.items() if tau == t_max - 1]

    def duration_table(self, agent: int, durations: np.ndarray) -> np.ndarray:
        """Reward table of one worker: -durations[tau] on its assignment action."""
        durations = np.asarray(durations, dtype=np.float64)
        if durations.shape != (self.env.tasks,):
            raise ValueError(f"durations must be ({self.env.tasks},)")
        tbl = np.zeros((self.mdp.num_states, self.mdp.num_actions))
        nonterm = self._layer < self.env.tasks
        tbl[nonterm, agent] = -durations[self._layer[nonterm]]
        return tbl

    def decode_durations(self, per: np.ndarray) -> np.ndarray:
        """Recover (B, n, tasks) duration arrays from stacked reward profiles."""
        firsts = [np.flatnonzero(self._layer == tau)[0] for tau in range(self.env.tasks)]
        idx = np.arange(self.env.n)
        return -per[:, idx, :, idx][:, :, firsts].swapaxes(0, 1)

    def makespan_of(self, hist, durations: np.ndarray) -> float:
        """Remaining work after the last arrival, per the unit-rate timeline.

        Task tau (0-based) arrives at time tau; each worker processes its own
        queue in arrival order at unit rate. Returns max_i(work_i - done_i)
        where done_i is worker i's completed work at time tasks - 1.
        """
        t_max = self.env.tasks
        work = np.zeros(self.env.n)
        done = np.zeros(self.env.n)
        finish = np.zeros(self.env.n)
        for tau, i in enumerate(hist):
            dur = durations[i, tau]
            work[i] += dur
            start = max(tau, finish[i])
            finish[i] = start + dur
            done[i] += max(0.0, min(float(t_max - 1), finish[i]) - start)
        return float((work - done).max())

    def cost_tables(self, per: np.ndarray) -> np.ndarray:
        """Makespan written as a linear functional of the occupancy measure.

        The table is supported on the last decision layer: entry (s, a) holds
        the makespan of the completed assignment history that s plus action a
        induces, so sum nu * table is the expected makespan.
        """
        dur = self.decode_durations(per)
        b = per.shape[0]
        q = np.zeros((b, self.mdp.num_states, self.mdp.num_actions))
        t_max = self.env.tasks
        for k, hist in self._last_layer:
            for a in range(self.env.n):
                full = hist + (a,)
                work = np.zeros((b, self.env.n))
                done = np.zeros((b, self.env.n))
                finish = np.zeros((b, self.env.n))
                for tau, i in enumerate(full):
                    d = dur[:, i, tau]
                    work[:, i] += d
                    start = np.maximum(float(tau), finish[:, i])
                    finish[:, i] = start + d
                    done[:, i] += np.clip(
                        np.minimum(float(t_max - 1), finish[:, i]) - start, 0.0, None
                    )
                q[:, k, a] = (work - done).max(axis=1)
        return q


class BuiltGridworld(BuiltEnvironment):
    kind = "gridworld"

    def __init__(self, env: GridworldEnv):
        self.env = env
        side = env.side
        n_states = side * side
        moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]  # up, down, left, right
        p = np.zeros((n_states, 4, n_states))
        for r in range(side):
            for c in range(side):
                s = r * side + c
                for a, (dr, dc) in enumerate(moves):
                    r2 = min(max(r + dr, 0), side - 1)
                    c2 = min(max(c + dc, 0), side - 1)
                    p[s, a, r2 * side + c2] = 1.0
        mu0 = np.zeros(n_states)
        mu0[env.start] = 1.0
        mdp = TabularMdp(p, mu0, Discounted(gamma=env.gamma))
        free = np.ones((n_states, 4), dtype=bool)
        labels = tuple(f"cell({s // side},{s % side})" for s in range(n_states))
        super().__init__(mdp, env.n, side, labels, free, f"gridworld({side}x{side},n={env.n})")
        self.goal_cells = tuple(s for s in range(n_states) if s != env.start)

    def goal_table(self, agent: int, goal: int, value: float) -> np.ndarray:
        """Replenishing goal reward: value on every action taken in the goal cell."""
        if goal == self.env.start or not (0 <= goal < self.mdp.num_states):
            raise ValueError("goal must be a non-start cell")
        tbl = np.zeros((self.mdp.num_states, self.mdp.num_actions))
        tbl[goal, :] = value
        return tbl


def build_sequential_sales(env: SequentialSalesEnv) -> BuiltSequentialSales:
    return BuiltSequentialSales(env)


def build_task_scheduling(env: TaskSchedulingEnv) -> BuiltTaskScheduling:
    return BuiltTaskScheduling(env)


def build_gridworld(env: GridworldEnv) -> BuiltGridworld:
    return BuiltGridworld(env)


@dataclass(frozen=True)
class UniformSymmetric:
    """All agents share one uniform value range."""

    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")


@dataclass(frozen=True)
class UniformAsymmetric:
    """Per-agent uniform ranges [0, hi_i]."""

    his: tuple[float, ...]

    def __post_init__(self):
        if len(self.his) < 1 or any(h <= 0 for h in self.his):
            raise ValueError("his must be positive")
        object.__setattr__(self, "his", tuple(float(h) for h in self.his))


@dataclass(frozen=True)
class GridworldGoals:
    """Per-agent goal cell uniform over non-start cells, value uniform in [lo, hi]."""

    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")


class ValueSampler:
    """Sequential sales: one scalar item value per bidder."""

    def __init__(self, built: BuiltSequentialSales, lows: np.ndarray, highs: np.ndarray):
        self.built = built
        self.lows = lows
        self.highs = highs
        self.support_hi = float(np.abs(highs).max())

    def _encode(self, values: np.ndarray) -> RewardProfile:
        return RewardProfile(values[:, None, None] * self.built._unit_tables)

    def sample(self, rng) -> RewardProfile:
        return self._encode(rng.uniform(self.lows, self.highs))

    def resample_agent(self, profile: RewardProfile, agent: int, rng) -> RewardProfile:
        per = profile.per_agent.copy()
        value = rng.uniform(self.lows[agent], self.highs[agent])
        per[agent] = value * self.built._unit_tables[agent]
        return RewardProfile(per)


class DurationSampler:
    """Task scheduling: one duration per (worker, task), disutility -duration."""

    def __init__(self, built: BuiltTaskScheduling, highs: np.ndarray):
        self.built = built
        self.highs = highs
        self.support_hi = float(np.abs(highs).max())

    def sample(self, rng) -> RewardProfile:
        t_max = self.built.env.tasks
        dur = rng.uniform(0.0, self.highs[:, None], size=(self.built.n_agents, t_max))
        per = np.stack(
            [self.built.duration_table(i, dur[i]) for i in range(self.built.n_agents)]
        )
        return RewardProfile(per)

    def resample_agent(self, profile: RewardProfile, agent: int, rng) -> RewardProfile:
        per = profile.per_agent.copy()
        dur = rng.uniform(0.0, self.highs[agent], size=self.built.env.tasks)
        per[agent] = self.built.duration_table(agent, dur)
        return RewardProfile(per)


class GoalSampler:
    """Gridworld: per agent a uniform non-start goal cell and a uniform value."""

    def __init__(self, built: BuiltGridworld, lo: float, hi: float):
        self.built = built
        self.lo = lo
        self.hi = hi
        self.support_hi = float(max(abs(lo), abs(hi)))

    def _draw_agent(self, rng):
        goal = self.built.goal_cells[rng.integers(0, len(self.built.goal_cells))]
        return goal, rng.uniform(self.lo, self.hi)

    def sample(self, rng) -> RewardProfile:
        tables = []
        for i in range(self.built.n_agents):
            goal, value = self._draw_agent(rng)
            tables.append(self.built.goal_table(i, goal, value))
        return RewardProfile(np.stack(tables))

    def resample_agent(self, profile: RewardProfile, agent: int, rng) -> RewardProfile:
        per = profile.per_agent.copy()
        goal, value = self._draw_agent(rng)
        per[agent] = self.built.goal_table(agent, goal, value)
        return RewardProfile(per)


def make_sampler(built: BuiltEnvironment, dist):
    """Pair a built environment with a type distribution; validates the match."""
    n = built.n_agents
    if isinstance(dist, GridworldGoals):
        if not isinstance(built, BuiltGridworld):
            raise ValueError("GridworldGoals only applies to gridworld environments")
        return GoalSampler(built, dist.lo, dist.hi)
    if isinstance(built, BuiltGridworld):
        raise ValueError("gridworld environments need a GridworldGoals distribution")
    if isinstance(dist, UniformSymmetric):
        lows, highs = np.full(n, dist.lo), np.full(n, dist.hi)
    elif isinstance(dist, UniformAsymmetric):
        if len(dist.his) != n:
            raise ValueError("his must list one bound per agent")
        lows, highs = np.zeros(n), np.array(dist.his)
    else:
        raise ValueError(f"unsupported distribution {dist!r}")
    if isinstance(built, BuiltSequentialSales):
        if lows.min() < 0:
            raise ValueError("sales values must be nonnegative")
        return ValueSampler(built, lows, highs)
    if isinstance(built, BuiltTaskScheduling):
        if isinstance(dist, UniformSymmetric) and dist.lo != 0.0:
            raise ValueError("duration ranges start at 0")
        return DurationSampler(built, highs)
    raise ValueError(f"unsupported environment {built.kind}")
