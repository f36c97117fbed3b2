"""Tabular independent Q-learning on the coordination game.

Each agent keeps its own (K+1) x M table and updates it from the shared
reward as if the other agents were part of the environment.  The SEG and
eps-greedy variants differ only in the action-selection call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs import CoordGameConfig, CoordinationGame
from .exploration import SEG, EpsilonSchedule, agent_streams, coordination_groups, epsilon_at, masked_argmax, select


@dataclass(frozen=True)
class IQLConfig:
    N: int = 5
    K: int = 4
    M: int = 3
    alpha: float = 0.015
    gamma: float = 0.99
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    total_steps: int = 250_000
    eval_interval: int = 1_000
    episode_len: int = 50
    trials: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def game(self) -> CoordGameConfig:
        return CoordGameConfig(self.N, self.K, self.M, episode_len=self.episode_len)


def init_q(config: IQLConfig) -> np.ndarray:
    """Q_i(s, a_0) = 0 and Q_i(s, a_j) = 0.1 for j != 0, so a_0 is never greedy at start."""
    q = np.full((config.N, config.K + 1, config.M), 0.1)
    q[:, :, 0] = 0.0
    return q


def iql_update(table: np.ndarray, s: int, a: int, r: float, s_next: int, terminal: bool, alpha: float, gamma: float) -> None:
    bootstrap = 0.0 if terminal else gamma * table[s_next].max()
    table[s, a] += alpha * (r + bootstrap - table[s, a])


def evaluate_greedy(tables: np.ndarray, env: CoordinationGame, horizon: int | None = None) -> float:
    """Summed reward of K+1 greedy steps from s_0 (100 iff the full chain is executed)."""
    horizon = env.config.K + 1 if horizon is None else horizon
    env.reset()
    total = 0.0
    for _ in range(horizon):
        s = env.index
        actions = [masked_argmax(tables[i, s]) for i in range(env.config.N)]
        total += env.step(actions).reward
    return total


def run_trial(config: IQLConfig, strategy: str, seed: int) -> list[tuple[int, float]]:
    """Train one set of tables; return (step, greedy evaluation reward) checkpoints."""
    env = CoordinationGame(config.game, config.gamma)
    eval_env = CoordinationGame(config.game, config.gamma)
    rngs = agent_streams(seed, config.N)
    groups = coordination_groups(config.M)
    tables = init_q(config)
    avail = env.avail_masks()
    curve = [(0, evaluate_greedy(tables, eval_env))]
    env.reset()
    for t in range(config.total_steps):
        eps = epsilon_at(config.schedule, t)
        s = env.index
        actions = [select(strategy, tables[i, s], groups, avail[i], eps, rngs[i]) for i in range(config.N)]
        res = env.step(actions)
        s_next = env.index
        for i in range(config.N):
            iql_update(tables[i], s, actions[i], res.reward, s_next, res.terminal, config.alpha, config.gamma)
        if (t + 1) % config.episode_len == 0 or res.terminal:
            env.reset()
        if (t + 1) % config.eval_interval == 0:
            curve.append((t + 1, evaluate_greedy(tables, eval_env)))
    return curve


def trial_seeds(config: IQLConfig) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(config.trials)]


@dataclass
class TrialCurves:
    steps: np.ndarray
    rewards: np.ndarray  # (trials, checkpoints)
    seeds: list[int]

    @property
    def mean(self) -> np.ndarray:
        return self.rewards.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.rewards.std(axis=0)


def run_trials(config: IQLConfig, strategy: str = SEG, seeds: list[int] | None = None) -> TrialCurves:
    seeds = trial_seeds(config) if seeds is None else seeds
    curves = [run_trial(config, strategy, s) for s in seeds]
    steps = np.array([c[0] for c in curves[0]])
    rewards = np.array([[r for _, r in c] for c in curves])
    return TrialCurves(steps, rewards, seeds)
