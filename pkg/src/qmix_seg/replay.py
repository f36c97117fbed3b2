"""Episode replay buffer with uniform sampling and padding masks."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import EnvSpec


class NotReady(RuntimeError):
    """The buffer cannot yet provide the requested batch."""


@dataclass
class Transition:
    obs: np.ndarray  # (n, obs_dim)
    last_actions: np.ndarray  # (n,), -1 at episode start
    actions: np.ndarray  # (n,)
    reward: float
    next_obs: np.ndarray
    state: np.ndarray
    next_state: np.ndarray
    avail: np.ndarray  # (n, n_actions) at obs
    next_avail: np.ndarray  # at next_obs
    terminal: bool


@dataclass
class Episode:
    """T transitions stored as stacked arrays; index t+1 of obs/state/avail is o'_t."""

    obs: np.ndarray  # (T+1, n, obs_dim)
    state: np.ndarray  # (T+1, state_dim)
    avail: np.ndarray  # (T+1, n, n_actions)
    actions: np.ndarray  # (T, n)
    reward: np.ndarray  # (T,)
    terminal: np.ndarray  # (T,)

    @property
    def length(self) -> int:
        return len(self.reward)

    @property
    def last_actions(self) -> np.ndarray:
        """(T+1, n) previous action per step, -1 before the first action."""
        first = np.full((1, self.actions.shape[1]), -1, dtype=np.int64)
        return np.concatenate([first, self.actions], axis=0)

    @classmethod
    def from_transitions(cls, transitions: list[Transition]) -> "Episode":
        if not transitions:
            raise ValueError("episode must contain at least one transition")
        return cls(
            obs=np.stack([t.obs for t in transitions] + [transitions[-1].next_obs]).astype(float),
            state=np.stack([t.state for t in transitions] + [transitions[-1].next_state]).astype(float),
            avail=np.stack([t.avail for t in transitions] + [transitions[-1].next_avail]).astype(bool),
            actions=np.stack([t.actions for t in transitions]).astype(np.int64),
            reward=np.array([t.reward for t in transitions], dtype=float),
            terminal=np.array([t.terminal for t in transitions], dtype=bool),
        )

    def transitions(self) -> list[Transition]:
        last = self.last_actions
        return [
            Transition(
                self.obs[t], last[t], self.actions[t], float(self.reward[t]), self.obs[t + 1],
                self.state[t], self.state[t + 1], self.avail[t], self.avail[t + 1], bool(self.terminal[t]),
            )
            for t in range(self.length)
        ]

    def check(self, spec: EnvSpec) -> None:
        T, n = self.length, spec.n_agents
        expected = {
            "obs": (T + 1, n, spec.obs_dim),
            "state": (T + 1, spec.state_dim),
            "avail": (T + 1, n, spec.n_actions),
            "actions": (T, n),
            "reward": (T,),
            "terminal": (T,),
        }
        if T < 1:
            raise ValueError("empty episode")
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"episode field {name!r} has shape {got}, expected {shape}")


@dataclass
class EpisodeBatch:
    """Episodes padded to the longest length; ``mask[b, t]`` is 1 for real steps."""

    obs: np.ndarray  # (B, T+1, n, obs_dim)
    state: np.ndarray  # (B, T+1, state_dim)
    avail: np.ndarray  # (B, T+1, n, A)
    actions: np.ndarray  # (B, T, n)
    reward: np.ndarray  # (B, T)
    terminal: np.ndarray  # (B, T)
    mask: np.ndarray  # (B, T)

    @property
    def size(self) -> int:
        return self.reward.shape[0]

    @property
    def max_len(self) -> int:
        return self.reward.shape[1]

    @property
    def last_actions(self) -> np.ndarray:
        first = np.full(self.actions[:, :1].shape, -1, dtype=np.int64)
        return np.concatenate([first, self.actions], axis=1)

    @classmethod
    def from_episodes(cls, episodes: list[Episode]) -> "EpisodeBatch":
        B = len(episodes)
        T = max(e.length for e in episodes)
        e0 = episodes[0]
        n, od = e0.obs.shape[1:]
        sd = e0.state.shape[1]
        A = e0.avail.shape[2]
        batch = cls(
            obs=np.zeros((B, T + 1, n, od)),
            state=np.zeros((B, T + 1, sd)),
            # padded steps get all-true masks so masked maxima stay finite
            avail=np.ones((B, T + 1, n, A), dtype=bool),
            actions=np.zeros((B, T, n), dtype=np.int64),
            reward=np.zeros((B, T)),
            terminal=np.ones((B, T), dtype=bool),
            mask=np.zeros((B, T)),
        )
        for b, e in enumerate(episodes):
            L = e.length
            batch.obs[b, : L + 1] = e.obs
            batch.state[b, : L + 1] = e.state
            batch.avail[b, : L + 1] = e.avail
            batch.actions[b, :L] = e.actions
            batch.reward[b, :L] = e.reward
            batch.terminal[b, :L] = e.terminal
            batch.mask[b, :L] = 1.0
        return batch


class EpisodeBuffer:
    def __init__(self, spec: EnvSpec, capacity: int = 5000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.spec = spec
        self.capacity = capacity
        self._episodes: deque[Episode] = deque(maxlen=capacity)
        self.total_steps = 0

    def __len__(self) -> int:
        return len(self._episodes)

    def __getitem__(self, i: int) -> Episode:
        return self._episodes[i]

    def push_episode(self, episode: Episode) -> None:
        episode.check(self.spec)
        self._episodes.append(episode)
        self.total_steps += episode.length

    def can_sample(self, batch_size: int) -> bool:
        return len(self._episodes) >= batch_size

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size < 1 or not self.can_sample(batch_size):
            raise NotReady(f"buffer holds {len(self)} episodes, need {batch_size}")
        return rng.integers(0, len(self._episodes), size=batch_size)

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> EpisodeBatch:
        idx = self.sample_indices(batch_size, rng)
        return EpisodeBatch.from_episodes([self._episodes[i] for i in idx])

    def dump_jsonl(self, path: str | Path) -> None:
        """One JSON object per episode; keys mirror the ``Episode`` fields."""
        with open(path, "w") as f:
            for e in self._episodes:
                rec = {
                    "length": e.length,
                    "obs": e.obs.tolist(),
                    "state": e.state.tolist(),
                    "avail": e.avail.astype(int).tolist(),
                    "actions": e.actions.tolist(),
                    "reward": e.reward.tolist(),
                    "terminal": e.terminal.astype(int).tolist(),
                }
                f.write(json.dumps(rec) + "\n")


def load_jsonl(path: str | Path) -> list[Episode]:
    out = []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            out.append(
                Episode(
                    obs=np.array(rec["obs"], dtype=float),
                    state=np.array(rec["state"], dtype=float),
                    avail=np.array(rec["avail"], dtype=bool),
                    actions=np.array(rec["actions"], dtype=np.int64),
                    reward=np.array(rec["reward"], dtype=float),
                    terminal=np.array(rec["terminal"], dtype=bool),
                )
            )
    return out
