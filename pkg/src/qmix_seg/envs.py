"""Cooperative multi-agent environments with a shared reward.

Two concrete environments share the ``MultiAgentEnv`` contract:

* ``CoordinationGame`` - the (N, K, M) chain game.  Every agent must pick
  action 0 for K consecutive steps to reach the goal state, which pays 100.
* ``GroupedEffectsEnv`` - actions fall into latent groups with identical
  displacement effects; used to check that learned action representations
  recover the groups.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ContractViolation(ValueError):
    """An agent submitted an action that is not currently available."""


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    max_episode_len: int
    gamma: float = 0.99

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.n_actions < 2:
            raise ValueError("n_actions must be >= 2")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")


@dataclass
class StepResult:
    next_obs: np.ndarray  # (n_agents, obs_dim)
    avail_masks: np.ndarray  # (n_agents, n_actions) bool
    reward: float
    terminal: bool
    state: np.ndarray  # (state_dim,)


class MultiAgentEnv:
    spec: EnvSpec
    # action ids that every agent may always take (no-op style actions)
    always_available: tuple[int, ...] = ()

    def reset(self, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def step(self, joint_action) -> StepResult:
        raise NotImplementedError

    def avail_masks(self) -> np.ndarray:
        raise NotImplementedError

    def _check_actions(self, joint_action) -> np.ndarray:
        a = np.asarray(joint_action, dtype=np.int64)
        if a.shape != (self.spec.n_agents,):
            raise ContractViolation(
                f"expected {self.spec.n_agents} actions, got shape {a.shape}"
            )
        if np.any(a < 0) or np.any(a >= self.spec.n_actions):
            raise ContractViolation(f"action id out of range: {a.tolist()}")
        masks = self.avail_masks()
        ok = masks[np.arange(len(a)), a]
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise ContractViolation(f"agent {bad} chose unavailable action {int(a[bad])}")
        return a


@dataclass(frozen=True)
class CoordGameConfig:
    N: int = 5
    K: int = 4
    M: int = 3
    reward_on_goal: float = 100.0
    episode_len: int = 50

    def __post_init__(self):
        if self.N < 1 or self.K < 1 or self.M < 2:
            raise ValueError(f"invalid coordination game (N={self.N}, K={self.K}, M={self.M})")


class CoordinationGame(MultiAgentEnv):
    """Chain s_0 ... s_K; joint action (a_0, ..., a_0) advances, anything else resets.

    From s_K every joint action pays ``reward_on_goal`` and returns to s_0.
    Observations and state are the one-hot index of the current chain state.
    The game has no terminal states; episodes end at ``episode_len``.
    """

    def __init__(self, config: CoordGameConfig = CoordGameConfig(), gamma: float = 0.99):
        self.config = config
        k1 = config.K + 1
        self.spec = EnvSpec(config.N, config.M, k1, k1, config.episode_len, gamma)
        self.index = 0
        self._masks = np.ones((config.N, config.M), dtype=bool)

    def _one_hot(self) -> np.ndarray:
        v = np.zeros(self.config.K + 1)
        v[self.index] = 1.0
        return v

    def observations(self) -> np.ndarray:
        return np.tile(self._one_hot(), (self.config.N, 1))

    def state(self) -> np.ndarray:
        return self._one_hot()

    def avail_masks(self) -> np.ndarray:
        return self._masks.copy()

    def reset(self, seed: int | None = None):
        self.index = 0
        return self.observations(), self.state()

    def transition(self, index: int, all_zero: bool) -> tuple[int, float]:
        if index == self.config.K:
            return 0, self.config.reward_on_goal
        return (index + 1 if all_zero else 0), 0.0

    def step(self, joint_action) -> StepResult:
        a = self._check_actions(joint_action)
        self.index, reward = self.transition(self.index, bool(np.all(a == 0)))
        return StepResult(self.observations(), self.avail_masks(), reward, False, self.state())


class GroupedEffectsEnv(MultiAgentEnv):
    """Each agent carries a position; an action adds its latent group's displacement.

    Actions ``0 .. n_grouped-1`` are split into ``n_true_groups`` balanced,
    seed-shuffled groups.  The last action id is a no-op with zero
    displacement that is always available.  The shared reward is
    ``w . sum_i displacement_i``.  Ground-truth labels are exposed through
    ``true_labels`` for evaluation only.
    """

    def __init__(
        self,
        n_agents: int = 2,
        n_actions: int = 6,
        n_true_groups: int = 2,
        noise_scale: float = 0.0,
        seed: int = 0,
        obs_dim: int = 4,
        episode_len: int = 20,
        gamma: float = 0.99,
        with_noop: bool = True,
    ):
        if n_true_groups < 2 or n_actions < n_true_groups:
            raise ValueError("need n_actions >= n_true_groups >= 2")
        if noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if n_agents < 1 or obs_dim < 1 or episode_len < 1:
            raise ValueError("degenerate environment size")
        rng = np.random.default_rng(seed)
        self.n_grouped = n_actions
        self.n_true_groups = n_true_groups
        self.noise_scale = noise_scale
        sizes = [n_actions // n_true_groups + (g < n_actions % n_true_groups) for g in range(n_true_groups)]
        labels = np.concatenate([np.full(s, g) for g, s in enumerate(sizes)])
        self.true_labels = rng.permutation(labels)
        # well separated group displacements
        directions = rng.normal(size=(n_true_groups, obs_dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        self.group_displacement = directions
        self.reward_weights = rng.normal(size=obs_dim)
        total = n_actions + (1 if with_noop else 0)
        self.displacement = np.zeros((total, obs_dim))
        self.displacement[:n_actions] = directions[self.true_labels]
        self.always_available = (n_actions,) if with_noop else ()
        self.spec = EnvSpec(n_agents, total, obs_dim, n_agents * obs_dim, episode_len, gamma)
        self._rng = np.random.default_rng(seed)
        self.positions = np.zeros((n_agents, obs_dim))

    def avail_masks(self) -> np.ndarray:
        return np.ones((self.spec.n_agents, self.spec.n_actions), dtype=bool)

    def state(self) -> np.ndarray:
        return self.positions.reshape(-1).copy()

    def reset(self, seed: int | None = None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.positions = self._rng.uniform(-1.0, 1.0, size=self.positions.shape)
        return self.positions.copy(), self.state()

    def step(self, joint_action) -> StepResult:
        a = self._check_actions(joint_action)
        delta = self.displacement[a]
        if self.noise_scale > 0:
            delta = delta + self.noise_scale * self._rng.normal(size=delta.shape)
        self.positions = self.positions + delta
        reward = float(self.reward_weights @ delta.sum(axis=0))
        return StepResult(self.positions.copy(), self.avail_masks(), reward, False, self.state())


def make_grouped_effects_env(n_agents, n_actions, n_true_groups, noise_scale, seed, **kwargs) -> GroupedEffectsEnv:
    return GroupedEffectsEnv(n_agents, n_actions, n_true_groups, noise_scale, seed, **kwargs)
