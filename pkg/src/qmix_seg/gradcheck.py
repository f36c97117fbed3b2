"""Random small instances for comparing backward() against central differences."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .action_repr import ReprConfig, TupleBatch, init_repr_params, repr_loss, repr_loss_tensor
from .envs import EnvSpec
from .nn import ParamSet, add_dense, add_gru, dense_forward, finite_diff_grad, gru_cell_forward, relative_error
from .qmix import QMixConfig, init_params, td_loss, td_loss_tensor
from .replay import Episode, EpisodeBatch


def random_episode_batch(spec: EnvSpec, rng: np.random.Generator, n_episodes: int, max_len: int) -> EpisodeBatch:
    """Episodes of random length 1..max_len with random masks, rewards and terminals."""
    eps = []
    n, A = spec.n_agents, spec.n_actions
    for _ in range(n_episodes):
        T = int(rng.integers(1, max_len + 1))
        avail = rng.random((T + 1, n, A)) < 0.7
        avail[..., 0] = True
        actions = np.array([[rng.choice(np.flatnonzero(avail[t, i])) for i in range(n)] for t in range(T)])
        terminal = np.zeros(T, dtype=bool)
        terminal[-1] = rng.random() < 0.5
        eps.append(Episode(
            obs=rng.normal(size=(T + 1, n, spec.obs_dim)),
            state=rng.normal(size=(T + 1, spec.state_dim)),
            avail=avail,
            actions=actions.astype(np.int64),
            reward=rng.normal(size=T),
            terminal=terminal,
        ))
    return EpisodeBatch.from_episodes(eps)


def td_instance(seed: int, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    spec = EnvSpec(
        n_agents=int(rng.integers(1, 4)),
        n_actions=int(rng.integers(2, 5)),
        obs_dim=int(rng.integers(1, 5)),
        state_dim=int(rng.integers(1, 6)),
        max_episode_len=3,
        gamma=float(rng.uniform(0.0, 0.99)),
    )
    cfg = QMixConfig(hidden_dim=int(rng.integers(2, 7)), mix_dim=int(rng.integers(1, 6)))
    online = init_params(spec, cfg, rng)
    target = init_params(spec, cfg, rng).copy(trainable=False)
    batch = random_episode_batch(spec, rng, n_episodes=int(rng.integers(1, 4)), max_len=3)
    _, analytic = td_loss(batch, online, target, spec, spec.gamma)
    with ad.no_grad():
        numeric = finite_diff_grad(lambda: td_loss_tensor(batch, online, target, spec, spec.gamma).item(), online, h)
    return relative_error(analytic, numeric)


def repr_instance(seed: int, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    A = int(rng.integers(2, 6))
    od = int(rng.integers(1, 5))
    cfg = ReprConfig(repr_dim=int(rng.integers(1, 6)), pred_hidden=int(rng.integers(2, 7)),
                     lambda_e=float(rng.uniform(0.5, 10.0)), encoder_init_scale=1.0)
    params = init_repr_params(n, A, od, cfg, rng)
    B = int(rng.integers(1, 6))
    batch = TupleBatch(
        obs=rng.normal(size=(B, n, od)),
        actions=rng.integers(A, size=(B, n)),
        reward=rng.normal(size=B),
        next_obs=rng.normal(size=(B, n, od)),
    )
    _, analytic = repr_loss(params, batch, cfg.lambda_e)
    with ad.no_grad():
        numeric = finite_diff_grad(lambda: repr_loss_tensor(params, batch, cfg.lambda_e).item(), params, h)
    return relative_error(analytic, numeric)


def dense_gru_instance(seed: int, h: float = 1e-5) -> float:
    """dense -> relu -> GRU (two steps) -> dense, squared error to a random target."""
    rng = np.random.default_rng(seed)
    B, i, hd, o = (int(v) for v in rng.integers(1, 6, size=4))
    p = ParamSet()
    add_dense(p, "fc1", i, hd, rng)
    add_gru(p, "gru", hd, hd, rng)
    add_dense(p, "fc2", hd, o, rng)
    xs = rng.normal(size=(2, B, i))
    y = rng.normal(size=(B, o))

    def loss():
        hidden = np.zeros((B, hd))
        for x in xs:
            hidden = gru_cell_forward(p, "gru", ad.relu(dense_forward(p, "fc1", x)), hidden)
        return ad.reduce_sum(ad.square(dense_forward(p, "fc2", hidden) - y))

    p.zero_grad()
    loss().backward()
    analytic = p.grads()
    with ad.no_grad():
        numeric = finite_diff_grad(lambda: loss().item(), p, h)
    return relative_error(analytic, numeric)


SUITES = {
    "qmix-td": td_instance,
    "repr-loss": repr_instance,
    "dense-gru": dense_gru_instance,
}


def run_suite(name: str, instances: int = 20, seed: int = 0) -> list[float]:
    fn = SUITES[name]
    seeds = np.random.SeedSequence([seed, len(name)]).generate_state(instances)
    return [fn(int(s)) for s in seeds]
