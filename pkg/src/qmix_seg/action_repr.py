"""Action representations from a forward model, k-means grouping, group building.

The encoder maps a one-hot action to a d-dimensional vector z_a.  Two
predictors read [z_{a_i} | o_i | one-hot a_{-i}] and predict the agent's next
observation and the shared reward.  Once trained, z_a is frozen for every
action and clustered with k-means; each cluster becomes an exploration group
and the always-available actions are added to every group.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .envs import MultiAgentEnv
from .nn import Adam, ParamSet, add_dense, dense_forward
from .qmix import one_hot
from .replay import EpisodeBatch, EpisodeBuffer, Episode, Transition


@dataclass(frozen=True)
class ReprConfig:
    repr_dim: int = 20
    pred_hidden: int = 128
    lambda_e: float = 10.0
    lr: float = 5e-4
    batch_size: int = 32
    steps_budget: int = 50_000
    # multiplies the default +-1/sqrt(fan_in) encoder initialisation
    encoder_init_scale: float = 0.01


@dataclass
class TupleBatch:
    """Flattened (o, a, r, o') tuples; obs is (B, n, obs_dim), actions (B, n)."""

    obs: np.ndarray
    actions: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray

    @classmethod
    def from_episodes(cls, batch: EpisodeBatch) -> "TupleBatch":
        keep = batch.mask.reshape(-1) > 0
        B, T, n = batch.actions.shape
        od = batch.obs.shape[-1]
        return cls(
            obs=batch.obs[:, :T].reshape(B * T, n, od)[keep],
            actions=batch.actions.reshape(B * T, n)[keep],
            reward=batch.reward.reshape(-1)[keep],
            next_obs=batch.obs[:, 1:].reshape(B * T, n, od)[keep],
        )


def init_repr_params(n_agents: int, n_actions: int, obs_dim: int, cfg: ReprConfig, rng) -> ParamSet:
    p = ParamSet()
    add_dense(p, "encoder", n_actions, cfg.repr_dim, rng)
    if cfg.encoder_init_scale != 1.0:
        for name in ("encoder.weight", "encoder.bias"):
            p[name].data *= cfg.encoder_init_scale
    in_dim = cfg.repr_dim + obs_dim + (n_agents - 1) * n_actions
    add_dense(p, "pred_obs.fc1", in_dim, cfg.pred_hidden, rng)
    add_dense(p, "pred_obs.fc2", cfg.pred_hidden, obs_dim, rng)
    add_dense(p, "pred_rew.fc1", in_dim, cfg.pred_hidden, rng)
    add_dense(p, "pred_rew.fc2", cfg.pred_hidden, 1, rng)
    return p


def encode_action(params: ParamSet, action_id) -> np.ndarray:
    n_actions = params["encoder.weight"].shape[1]
    ids = np.asarray(action_id)
    if np.any(ids < 0) or np.any(ids >= n_actions):
        raise ValueError(f"action id out of range [0, {n_actions})")
    with ad.no_grad():
        return dense_forward(params, "encoder", one_hot(ids, n_actions)).data


def all_representations(params: ParamSet) -> np.ndarray:
    return encode_action(params, np.arange(params["encoder.weight"].shape[1]))


def others_one_hot(actions: np.ndarray, n_actions: int) -> np.ndarray:
    """(B, n, (n-1) * A): for each agent the flattened one-hot actions of the rest."""
    B, n = actions.shape
    oh = one_hot(actions, n_actions)
    out = np.zeros((B, n, (n - 1) * n_actions))
    for i in range(n):
        rest = [j for j in range(n) if j != i]
        out[:, i] = oh[:, rest].reshape(B, -1)
    return out


def predict(params: ParamSet, obs, actions) -> tuple[Tensor, Tensor]:
    """Predicted next observations (B, n, obs_dim) and rewards (B, n)."""
    obs = np.asarray(obs, dtype=float)
    actions = np.asarray(actions, dtype=np.int64)
    n_actions = params["encoder.weight"].shape[1]
    z = dense_forward(params, "encoder", one_hot(actions, n_actions))
    x = ad.concat([z, obs, others_one_hot(actions, n_actions)], axis=-1)
    o_hat = dense_forward(params, "pred_obs.fc2", ad.relu(dense_forward(params, "pred_obs.fc1", x)))
    r_hat = dense_forward(params, "pred_rew.fc2", ad.relu(dense_forward(params, "pred_rew.fc1", x)))
    return o_hat, ad.reshape(r_hat, actions.shape)


def repr_loss_tensor(params: ParamSet, batch: TupleBatch, lambda_e: float = 10.0) -> Tensor:
    """mean_b [ sum_i ||o'_i - o_hat'_i||^2 + lambda_e sum_i (r_hat_i - r)^2 ]."""
    B = len(batch.reward)
    if B == 0:
        raise ValueError("empty batch")
    o_hat, r_hat = predict(params, batch.obs, batch.actions)
    obs_err = ad.reduce_sum(ad.square(o_hat - batch.next_obs))
    rew_err = ad.reduce_sum(ad.square(r_hat - np.asarray(batch.reward, dtype=float)[:, None]))
    return ad.mul(obs_err + ad.mul(rew_err, lambda_e), 1.0 / B)


def repr_loss(params: ParamSet, batch: TupleBatch, lambda_e: float = 10.0):
    params.zero_grad()
    loss = repr_loss_tensor(params, batch, lambda_e)
    loss.backward()
    return loss.item(), params.grads()


class ActionReprLearner:
    """Encoder plus predictors, trained on replay batches until frozen."""

    def __init__(self, n_agents: int, n_actions: int, obs_dim: int, cfg: ReprConfig = ReprConfig(), seed: int = 0):
        self.cfg = cfg
        self.params = init_repr_params(n_agents, n_actions, obs_dim, cfg, np.random.default_rng(seed))
        self.optim = Adam(self.params, lr=cfg.lr)
        self.frozen: np.ndarray | None = None
        self.updates = 0

    def update(self, batch: EpisodeBatch | TupleBatch) -> float:
        if self.frozen is not None:
            raise RuntimeError("encoder is frozen")
        if isinstance(batch, EpisodeBatch):
            batch = TupleBatch.from_episodes(batch)
        self.params.zero_grad()
        loss = repr_loss_tensor(self.params, batch, self.cfg.lambda_e)
        loss.backward()
        self.optim.step()
        self.updates += 1
        return loss.item()

    def freeze(self) -> np.ndarray:
        if self.frozen is None:
            self.frozen = all_representations(self.params)
        return self.frozen.copy()

    def representations(self) -> np.ndarray:
        return self.frozen.copy() if self.frozen is not None else all_representations(self.params)


def random_episode(env: MultiAgentEnv, rng: np.random.Generator) -> Episode:
    """Uniformly random available actions for one episode."""
    obs, state = env.reset()
    avail = env.avail_masks()
    last = np.full(env.spec.n_agents, -1, dtype=np.int64)
    steps = []
    for _ in range(env.spec.max_episode_len):
        actions = np.array([rng.choice(np.flatnonzero(m)) for m in avail])
        res = env.step(actions)
        steps.append(Transition(obs, last, actions, res.reward, res.next_obs, state, res.state, avail, res.avail_masks, res.terminal))
        obs, state, avail, last = res.next_obs, res.state, res.avail_masks, actions
        if res.terminal:
            break
    return Episode.from_transitions(steps)


def train_encoder(
    replay: EpisodeBuffer,
    steps_budget: int,
    learner: ActionReprLearner,
    rng: np.random.Generator,
    collect=None,
) -> np.ndarray:
    """Train until ``replay`` has seen ``steps_budget`` environment steps, then freeze.

    ``collect()`` must return a new episode; one gradient step follows each
    collected episode once the buffer can fill a batch.  Returns the frozen
    (n_actions, d) representation table.
    """
    while replay.total_steps < steps_budget:
        if collect is None:
            raise ValueError("replay holds fewer steps than the budget and no collector was given")
        replay.push_episode(collect())
        if replay.can_sample(learner.cfg.batch_size):
            learner.update(replay.sample_uniform(learner.cfg.batch_size, rng))
    return learner.freeze()


def learn_representations(env: MultiAgentEnv, cfg: ReprConfig = ReprConfig(), seed: int = 0, capacity: int = 5000):
    """Random-policy data collection plus encoder training on one environment."""
    ss = np.random.SeedSequence(seed).spawn(3)
    learner = ActionReprLearner(env.spec.n_agents, env.spec.n_actions, env.spec.obs_dim, cfg, int(ss[0].generate_state(1)[0]))
    act_rng = np.random.default_rng(ss[1])
    env.reset(seed=int(ss[2].generate_state(1)[0]))
    replay = EpisodeBuffer(env.spec, capacity)
    reps = train_encoder(replay, cfg.steps_budget, learner, np.random.default_rng(ss[2]), lambda: random_episode(env, act_rng))
    return reps, learner


# ------------------------------------------------------------------ k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations with deterministic farthest-point initialisation.

    The first centroid is a seed-chosen point; each next one is the point
    farthest from the centroids chosen so far.  An emptied cluster is
    re-seeded with the point farthest from its assigned centroid.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if k < 1:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    if k > len(np.unique(X, axis=0)):
        raise ValueError(f"k={k} exceeds the number of distinct points")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d = _sq_dists(X, X[chosen]).min(axis=1)
        chosen.append(int(np.argmax(d)))
    centroids = X[chosen].copy()
    labels = np.full(n, -1)
    history: list[float] = []
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, centroids)
        new_labels = np.argmin(d, axis=1)
        for j in range(k):
            if not np.any(new_labels == j):
                # farthest point from its own centroid, taken from a cluster that keeps a member
                own = d[np.arange(n), new_labels].copy()
                sizes = np.bincount(new_labels, minlength=k)
                own[sizes[new_labels] < 2] = -np.inf
                new_labels[int(np.argmax(own))] = j
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        centroids = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
        history.append(float(((X - centroids[labels]) ** 2).sum()))
    return KMeansResult(labels, centroids, history, it, converged)


# ------------------------------------------------------------------- groups


@dataclass(frozen=True)
class ActionGroups:
    groups: tuple[tuple[int, ...], ...]
    always_available: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.groups) < 2:
            raise ValueError("need at least two action groups")
        if any(len(g) == 0 for g in self.groups):
            raise ValueError("empty action group")
        missing = [g for g in self.groups if not set(self.always_available) <= set(g)]
        if missing:
            raise ValueError(f"groups {missing} lack the always-available actions {self.always_available}")

    @property
    def m(self) -> int:
        return len(self.groups)

    def as_lists(self) -> list[list[int]]:
        return [list(g) for g in self.groups]

    def to_dict(self) -> dict:
        return {"m": self.m, "groups": self.as_lists(), "always_available": list(self.always_available)}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionGroups":
        return cls(tuple(tuple(g) for g in d["groups"]), tuple(d.get("always_available", ())))


def build_groups(assignment, always_available_ids=(), action_ids=None, n_actions: int | None = None) -> ActionGroups:
    """One group per cluster, each unioned with the always-available ids.

    ``assignment[i]`` is the cluster of ``action_ids[i]`` (default: ids
    0..len-1).  Clusters are ordered by their smallest member.
    """
    labels = np.asarray(assignment, dtype=np.int64)
    ids = np.arange(len(labels)) if action_ids is None else np.asarray(action_ids, dtype=np.int64)
    if len(ids) != len(labels):
        raise ValueError("assignment and action_ids differ in length")
    extra = sorted(set(int(a) for a in always_available_ids))
    clusters = []
    for c in range(int(labels.max()) + 1 if len(labels) else 0):
        members = ids[labels == c]
        if len(members) == 0:
            raise ValueError(f"cluster {c} is empty")
        clusters.append((int(members.min()), sorted(set(int(a) for a in members) | set(extra))))
    clusters = [g for _, g in sorted(clusters)]
    covered = set().union(*clusters) if clusters else set()
    if n_actions is not None and covered != set(range(n_actions)):
        raise ValueError(f"groups do not cover actions {sorted(set(range(n_actions)) - covered)}")
    return ActionGroups(tuple(tuple(g) for g in clusters), tuple(extra))


def cluster_actions(reps: np.ndarray, k: int, always_available=(), seed: int = 0) -> tuple[ActionGroups, KMeansResult]:
    """k-means over the representations of every action that is not always available."""
    n_actions = len(reps)
    ids = np.array([a for a in range(n_actions) if a not in set(always_available)])
    res = kmeans(reps[ids], k, seed)
    return build_groups(res.labels, always_available, ids, n_actions), res
