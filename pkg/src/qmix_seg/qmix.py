"""QMIX: shared recurrent agent network, monotonic hypernetwork mixer, TD learning."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .envs import EnvSpec
from .exploration import MASKED_Q
from .nn import Adam, ParamSet, add_dense, add_gru, dense_forward, gru_cell_forward
from .replay import EpisodeBatch


class NotReadyError(RuntimeError):
    pass


@dataclass(frozen=True)
class QMixConfig:
    hidden_dim: int = 64
    mix_dim: int = 32
    lr: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-5
    batch_size: int = 32
    buffer_capacity: int = 5000
    target_update_interval: int = 200


def agent_input_dim(spec: EnvSpec) -> int:
    return spec.obs_dim + spec.n_actions + spec.n_agents


def init_params(spec: EnvSpec, cfg: QMixConfig, rng: np.random.Generator) -> ParamSet:
    """Agent network under ``agent.*`` and mixer hypernetworks under ``mixer.*``."""
    p = ParamSet()
    h, md, sd = cfg.hidden_dim, cfg.mix_dim, spec.state_dim
    add_dense(p, "agent.fc1", agent_input_dim(spec), h, rng)
    add_gru(p, "agent.gru", h, h, rng)
    add_dense(p, "agent.fc2", h, spec.n_actions, rng)
    add_dense(p, "mixer.hyper_w1", sd, spec.n_agents * md, rng)
    add_dense(p, "mixer.hyper_b1", sd, md, rng)
    add_dense(p, "mixer.hyper_w2", sd, md, rng)
    add_dense(p, "mixer.hyper_b2_1", sd, md, rng)
    add_dense(p, "mixer.hyper_b2_2", md, 1, rng)
    return p


def one_hot(ids, n: int) -> np.ndarray:
    """One-hot rows; negative ids (no previous action) map to all zeros."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros(ids.shape + (n,))
    valid = ids >= 0
    np.put_along_axis(out, np.where(valid, ids, 0)[..., None], valid[..., None].astype(float), axis=-1)
    return out


def build_agent_inputs(spec: EnvSpec, obs, last_action, agent_id) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != spec.obs_dim:
        raise ValueError(f"observation width {obs.shape[-1]} != {spec.obs_dim}")
    lead = obs.shape[:-1]
    la = np.broadcast_to(np.asarray(last_action), lead)
    ids = np.broadcast_to(np.asarray(agent_id), lead)
    return np.concatenate([obs, one_hot(la, spec.n_actions), one_hot(ids, spec.n_agents)], axis=-1)


def agent_q_step(params: ParamSet, spec: EnvSpec, obs, last_action, agent_id, hidden) -> tuple[Tensor, Tensor]:
    """One recurrent step: inputs -> (Q-values for every action, new hidden)."""
    x = build_agent_inputs(spec, obs, last_action, agent_id)
    hidden = ad.as_tensor(hidden)
    if hidden.shape[:-1] != x.shape[:-1]:
        raise ValueError(f"hidden batch shape {hidden.shape} does not match inputs {x.shape}")
    z = ad.relu(dense_forward(params, "agent.fc1", x))
    h = gru_cell_forward(params, "agent.gru", z, hidden)
    return dense_forward(params, "agent.fc2", h), h


def init_hidden(params: ParamSet, *lead: int) -> np.ndarray:
    return np.zeros(lead + (params["agent.gru.w_h"].shape[1],))


def mix(params: ParamSet, q_selected, state) -> Tensor:
    """Q_tot = w2 . elu(q W1 + b1) + b2 with W1, w2 = |hypernetwork(state)|.

    ``q_selected`` is (B, n) and ``state`` is (B, state_dim); returns (B,).
    """
    q = ad.as_tensor(q_selected)
    state = np.asarray(state, dtype=float)
    B, n = q.shape
    md = params["mixer.hyper_b1.weight"].shape[0]
    w1 = ad.reshape(ad.absolute(dense_forward(params, "mixer.hyper_w1", state)), (B, n, md))
    b1 = ad.reshape(dense_forward(params, "mixer.hyper_b1", state), (B, 1, md))
    hidden = ad.elu(ad.matmul(ad.reshape(q, (B, 1, n)), w1) + b1)
    w2 = ad.reshape(ad.absolute(dense_forward(params, "mixer.hyper_w2", state)), (B, md, 1))
    b2 = dense_forward(params, "mixer.hyper_b2_2", ad.relu(dense_forward(params, "mixer.hyper_b2_1", state)))
    return ad.reshape(ad.matmul(hidden, w2), (B,)) + ad.reshape(b2, (B,))


def masked_max(q: np.ndarray, avail: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row argmax (lowest id on ties) and max over available actions."""
    masked = np.where(avail, q, MASKED_Q)
    idx = np.argmax(masked, axis=-1)
    return idx, np.take_along_axis(masked, idx[..., None], axis=-1)[..., 0]


def greedy_max_qtot(params: ParamSet, q_vectors, state, avail_masks) -> tuple[np.ndarray, float]:
    """Maximise Q_tot by per-agent masked argmax; exact because the mixer is monotone."""
    q = np.asarray(q_vectors.data if isinstance(q_vectors, Tensor) else q_vectors, dtype=float)
    idx, best = masked_max(q, np.asarray(avail_masks, dtype=bool))
    qtot = mix(params, best[None, :], np.asarray(state, dtype=float)[None, :])
    return idx, float(qtot.data[0])


def brute_force_max_qtot(params: ParamSet, q_vectors, state, avail_masks) -> tuple[tuple[int, ...], float]:
    """Enumerate every available joint action; test oracle for ``greedy_max_qtot``."""
    q = np.asarray(q_vectors, dtype=float)
    avail = np.asarray(avail_masks, dtype=bool)
    choices = [np.flatnonzero(avail[i]) for i in range(len(q))]
    joints = list(itertools.product(*choices))
    selected = np.array([[q[i, a] for i, a in enumerate(j)] for j in joints])
    states = np.repeat(np.asarray(state, dtype=float)[None, :], len(joints), axis=0)
    vals = mix(params, selected, states).data
    best = int(np.argmax(vals))
    return tuple(int(a) for a in joints[best]), float(vals[best])


def unroll_agents(params: ParamSet, spec: EnvSpec, batch: EpisodeBatch) -> list[Tensor]:
    """Q-values for steps 0..T of every episode: list of (B, n, A) tensors."""
    B, T1, n = batch.obs.shape[:3]
    last = batch.last_actions
    ids = np.broadcast_to(np.arange(n), (B, n))
    h = init_hidden(params, B, n)
    out = []
    for t in range(T1):
        q, h = agent_q_step(params, spec, batch.obs[:, t], last[:, t], ids, h)
        out.append(q)
    return out


def td_loss_tensor(batch: EpisodeBatch, online: ParamSet, target: ParamSet, spec: EnvSpec, gamma: float) -> Tensor:
    """Masked mean of (r + gamma (1 - terminal) max Q-_tot(s') - Q_tot(s, a))^2."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    mask = batch.mask
    n_valid = mask.sum()
    if n_valid == 0:
        raise NotReadyError("batch has no unpadded steps")
    B, T, n = batch.actions.shape
    q_online = unroll_agents(online, spec, batch)[:T]
    chosen = ad.stack([ad.gather_last(q_online[t], batch.actions[:, t]) for t in range(T)], axis=1)
    qtot = ad.reshape(
        mix(online, ad.reshape(chosen, (B * T, n)), batch.state[:, :T].reshape(B * T, -1)), (B, T)
    )
    # bootstrap side: frozen target parameters, no graph
    q_target = np.stack([q.data for q in unroll_agents(target, spec, batch)[1:]], axis=1)
    _, best = masked_max(q_target, batch.avail[:, 1:])
    target_tot = mix(target, best.reshape(B * T, n), batch.state[:, 1:].reshape(B * T, -1)).data.reshape(B, T)
    y = batch.reward + gamma * (1.0 - batch.terminal) * target_tot
    err = ad.mul(qtot - y, mask)
    return ad.mul(ad.reduce_sum(ad.square(err)), 1.0 / n_valid)


def td_loss(batch: EpisodeBatch, online: ParamSet, target: ParamSet, spec: EnvSpec, gamma: float):
    """Loss value and gradients for every online parameter."""
    online.zero_grad()
    loss = td_loss_tensor(batch, online, target, spec, gamma)
    loss.backward()
    grads = online.grads()
    return loss.item(), grads


def target_sync(online: ParamSet, target: ParamSet) -> None:
    target.load_state(online.state())


class QMixLearner:
    def __init__(self, spec: EnvSpec, cfg: QMixConfig = QMixConfig(), seed: int = 0):
        self.spec = spec
        self.cfg = cfg
        self.params = init_params(spec, cfg, np.random.default_rng(seed))
        self.target = self.params.copy(trainable=False)
        self.optim = Adam(self.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.train_steps = 0

    def act_q(self, obs, last_actions, hidden) -> tuple[np.ndarray, np.ndarray]:
        """Q-values (n, A) for all agents at one step of execution."""
        with ad.no_grad():
            q, h = agent_q_step(self.params, self.spec, obs, last_actions, np.arange(self.spec.n_agents), hidden)
        return q.data, h.data

    def train(self, batch: EpisodeBatch) -> float:
        self.params.zero_grad()
        loss = td_loss_tensor(batch, self.params, self.target, self.spec, self.spec.gamma)
        loss.backward()
        self.optim.step()
        self.train_steps += 1
        if self.train_steps % self.cfg.target_update_interval == 0:
            target_sync(self.params, self.target)
        return loss.item()
