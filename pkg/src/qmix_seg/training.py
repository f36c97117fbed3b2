"""Episode collection and the QMIX training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .envs import CoordinationGame, MultiAgentEnv
from .exploration import SEG, EpsilonSchedule, agent_streams, epsilon_at, masked_argmax, select
from .qmix import QMixConfig, QMixLearner, init_hidden
from .replay import Episode, EpisodeBuffer, Transition

log = logging.getLogger(__name__)


def collect_episode(
    env: MultiAgentEnv,
    learner: QMixLearner,
    strategy: str,
    groups,
    schedule: EpsilonSchedule | None,
    t_env: int,
    rngs,
    max_len: int | None = None,
    greedy: bool = False,
) -> Episode:
    """Roll out one episode; eps follows ``schedule`` at the running env step."""
    spec = env.spec
    n = spec.n_agents
    obs, state = env.reset()
    avail = env.avail_masks()
    hidden = init_hidden(learner.params, n)
    last = np.full(n, -1, dtype=np.int64)
    steps = []
    for t in range(max_len or spec.max_episode_len):
        q, hidden = learner.act_q(obs, last, hidden)
        if greedy:
            actions = np.array([masked_argmax(q[i], avail[i]) for i in range(n)])
        else:
            eps = epsilon_at(schedule, t_env + t)
            actions = np.array([select(strategy, q[i], groups, avail[i], eps, rngs[i]) for i in range(n)])
        res = env.step(actions)
        steps.append(
            Transition(obs, last, actions, res.reward, res.next_obs, state, res.state, avail, res.avail_masks, res.terminal)
        )
        obs, state, avail, last = res.next_obs, res.state, res.avail_masks, actions
        if res.terminal:
            break
    return Episode.from_transitions(steps)


def greedy_return(env: MultiAgentEnv, learner: QMixLearner, horizon: int) -> float:
    ep = collect_episode(env, learner, SEG, None, None, 0, None, horizon, greedy=True)
    return float(ep.reward.sum())


@dataclass
class QMixRun:
    strategy: str = SEG
    groups: list = field(default_factory=list)
    total_steps: int = 300_000
    schedule: EpsilonSchedule = EpsilonSchedule(1.0, 0.05, 50_000)
    eval_interval: int = 5_000
    eval_horizon: int | None = None
    seed: int = 0
    stop_at_reward: float | None = None
    # stop once the mean of the last ``stop_window`` evaluations reaches stop_at_reward
    stop_window: int = 1


def train_qmix(env: MultiAgentEnv, run: QMixRun, cfg: QMixConfig = QMixConfig(), metrics_cb=None):
    """Collect episodes, train once per episode, evaluate greedily every ``eval_interval`` steps.

    Returns (learner, metrics) with one metrics row per evaluation:
    (env step, last loss, greedy evaluation return).
    """
    seeds = np.random.SeedSequence(run.seed).spawn(3)
    learner = QMixLearner(env.spec, cfg, seed=int(seeds[0].generate_state(1)[0]))
    sample_rng = np.random.default_rng(seeds[1])
    rngs = agent_streams(int(seeds[2].generate_state(1)[0]), env.spec.n_agents)
    buffer = EpisodeBuffer(env.spec, cfg.buffer_capacity)
    horizon = run.eval_horizon
    if horizon is None:
        horizon = env.config.K + 1 if isinstance(env, CoordinationGame) else env.spec.max_episode_len
    groups = run.groups or [list(range(env.spec.n_actions))]
    t_env, next_eval, loss = 0, 0, float("nan")
    metrics = []
    while t_env < run.total_steps:
        if t_env >= next_eval:
            ret = greedy_return(env, learner, horizon)
            metrics.append((t_env, loss, ret))
            if metrics_cb:
                metrics_cb(metrics[-1])
            log.info("t_env=%d loss=%.4g eval=%.1f", t_env, loss, ret)
            next_eval += run.eval_interval
            recent = [m[2] for m in metrics[-run.stop_window:]]
            if (run.stop_at_reward is not None and len(recent) == run.stop_window
                    and np.mean(recent) >= run.stop_at_reward):
                return learner, metrics
        ep = collect_episode(env, learner, run.strategy, groups, run.schedule, t_env, rngs)
        buffer.push_episode(ep)
        t_env += ep.length
        if buffer.can_sample(cfg.batch_size):
            loss = learner.train(buffer.sample_uniform(cfg.batch_size, sample_rng))
    ret = greedy_return(env, learner, horizon)
    metrics.append((t_env, loss, ret))
    if metrics_cb:
        metrics_cb(metrics[-1])
    return learner, metrics
