"""Action selection: epsilon-greedy and semantic epsilon-greedy (SEG).

SEG is epsilon-greedy over groups of actions.  With probability 1 - eps an
agent takes its global greedy action.  Otherwise it picks one of the m groups
uniformly and then runs a second epsilon-greedy step restricted to the
available actions of that group, using the same eps.

Besides the samplers this module carries their exact distributions, the
closed-form reach probabilities for coordinated exploration, the Monte-Carlo
reach counter for the coordination game and an exact Markov-chain oracle
for that counter.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .envs import CoordinationGame

EPS_GREEDY = "eps-greedy"
SEG = "seg"
STRATEGIES = (EPS_GREEDY, SEG)

# stands in for -inf when masking unavailable actions
MASKED_Q = -1e30


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    anneal_steps: int = 30_000
    eval_eps: float = 0.0

    def __call__(self, step: int) -> float:
        return epsilon_at(self, step)


def epsilon_at(schedule: EpsilonSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if schedule.anneal_steps <= 0 or step >= schedule.anneal_steps:
        return schedule.end
    frac = step / schedule.anneal_steps
    return schedule.start + frac * (schedule.end - schedule.start)


def agent_streams(seed: int, n_agents: int) -> list[np.random.Generator]:
    """Independent per-agent generators split from one run seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_agents)]


def masked_argmax(q: np.ndarray, avail: np.ndarray | None = None) -> int:
    """Argmax over available actions; ties go to the lowest action id."""
    q = np.asarray(q, dtype=float)
    if avail is None:
        return int(np.argmax(q))
    avail = np.asarray(avail, dtype=bool)
    if not avail.any():
        raise ValueError("no available action")
    return int(np.argmax(np.where(avail, q, MASKED_Q)))


def _available_in(group, avail: np.ndarray) -> list[int]:
    return [a for a in group if avail[a]]


def select_eps_greedy(q_vector, avail_mask, eps: float, rng: np.random.Generator) -> int:
    avail = np.asarray(avail_mask, dtype=bool)
    if not avail.any():
        raise ValueError("all actions unavailable")
    if rng.random() < eps:
        choices = np.flatnonzero(avail)
        return int(choices[rng.integers(len(choices))])
    return masked_argmax(q_vector, avail)


def select_seg(q_vector, groups: Sequence[Sequence[int]], avail_mask, eps: float, rng: np.random.Generator) -> int:
    avail = np.asarray(avail_mask, dtype=bool)
    if not avail.any():
        raise ValueError("all actions unavailable")
    q = np.asarray(q_vector, dtype=float)
    for group in groups:
        if not any(avail[a] for a in group):
            raise ValueError(f"group {sorted(group)} has no available action; groups must include an always-available action")
    if rng.random() >= eps:
        return masked_argmax(q, avail)
    members = _available_in(groups[int(rng.integers(len(groups)))], avail)
    if rng.random() >= eps:
        return members[int(np.argmax(q[members]))]
    return members[int(rng.integers(len(members)))]


def select(strategy: str, q_vector, groups, avail_mask, eps: float, rng: np.random.Generator) -> int:
    if strategy == SEG:
        return select_seg(q_vector, groups, avail_mask, eps, rng)
    if strategy == EPS_GREEDY:
        return select_eps_greedy(q_vector, avail_mask, eps, rng)
    raise ValueError(f"unknown strategy {strategy!r}")


def action_distribution(strategy: str, q_vector, groups, avail_mask, eps: float) -> np.ndarray:
    """Exact selection probabilities, summed over the finite selection tree."""
    q = np.asarray(q_vector, dtype=float)
    avail = np.asarray(avail_mask, dtype=bool)
    probs = np.zeros(len(q))
    probs[masked_argmax(q, avail)] += 1.0 - eps
    if strategy == EPS_GREEDY:
        choices = np.flatnonzero(avail)
        probs[choices] += eps / len(choices)
        return probs
    if strategy != SEG:
        raise ValueError(f"unknown strategy {strategy!r}")
    m = len(groups)
    for group in groups:
        members = _available_in(group, avail)
        if not members:
            raise ValueError(f"group {sorted(group)} has no available action")
        p_group = eps / m
        probs[members[int(np.argmax(q[members]))]] += p_group * (1.0 - eps)
        for a in members:
            probs[a] += p_group * eps / len(members)
    return probs


def action_probability(strategy: str, q_vector, groups, avail_mask, eps: float, action_id: int) -> float:
    return float(action_distribution(strategy, q_vector, groups, avail_mask, eps)[action_id])


@dataclass(frozen=True)
class ReachQuery:
    strategy: str
    n_agents: int
    steps: int
    n_actions: int
    group_size: int = 1
    n_groups: int = 2
    eps: float = 0.5


def reach_probability(query: ReachQuery, exact: bool = False):
    """Probability that all agents explore into the target group for ``steps`` steps.

    eps-greedy: (eps |A^i| / |A|)^(n t);  SEG: (eps / m)^(n t).
    Greedy actions are assumed to lie outside the target group.  With
    ``exact=True`` and a rational eps the result is a ``Fraction``.
    """
    q = query
    if q.n_agents < 1 or q.n_actions < 1 or q.group_size < 1 or q.n_groups < 1 or q.steps < 0:
        raise ValueError(f"invalid reach query {q}")
    eps = Fraction(q.eps) if exact else float(q.eps)
    if q.strategy == EPS_GREEDY:
        base = eps * q.group_size / q.n_actions
    elif q.strategy == SEG:
        base = eps / q.n_groups
    else:
        raise ValueError(f"unknown strategy {q.strategy!r}")
    return base ** (q.n_agents * q.steps)


# ------------------------------------------------------------------ counting


def coordination_groups(M: int) -> list[list[int]]:
    """A^1 = {a_0}, A^2 = {a_1, ..., a_{M-1}}."""
    return [[0], list(range(1, M))]


def _sample_actions_batch(strategy, q, groups, avail, eps, rng, size) -> np.ndarray:
    """``size`` independent draws of the selection procedure, vectorised.

    Mirrors ``select_seg`` / ``select_eps_greedy`` step by step rather than
    sampling from ``action_distribution``, so the counter stays independent
    of the closed form.
    """
    q = np.asarray(q, dtype=float)
    avail = np.asarray(avail, dtype=bool)
    greedy = masked_argmax(q, avail)
    out = np.full(size, greedy, dtype=np.int64)
    explore = rng.random(size) < eps
    n_exp = int(explore.sum())
    if strategy == EPS_GREEDY:
        choices = np.flatnonzero(avail)
        out[explore] = choices[rng.integers(len(choices), size=n_exp)]
        return out
    members = [np.array(_available_in(g, avail), dtype=np.int64) for g in groups]
    if any(len(mb) == 0 for mb in members):
        raise ValueError("a group has no available action")
    g_idx = rng.integers(len(groups), size=n_exp)
    lower_explore = rng.random(n_exp) < eps
    picks = rng.random(n_exp)
    chosen = np.empty(n_exp, dtype=np.int64)
    for j, mb in enumerate(members):
        sel = g_idx == j
        g_greedy = int(mb[np.argmax(q[mb])])
        uni = mb[np.minimum((picks[sel] * len(mb)).astype(np.int64), len(mb) - 1)]
        chosen[sel] = np.where(lower_explore[sel], uni, g_greedy)
    out[explore] = chosen
    return out


def count_reaches(
    env: CoordinationGame,
    strategy: str,
    q_tables: np.ndarray,
    eps: float,
    total_steps: int,
    rngs: Sequence[np.random.Generator],
    groups=None,
    stepwise: bool = False,
) -> int:
    """Run the game with frozen Q-tables (N, K+1, M) and count entries into s_K.

    Each agent draws its actions from its own stream.  When every agent's
    Q-row is the same in all states the draws are state independent and the
    count is read off the runs of joint-a_0 steps: a run of L successes
    starting in s_0 enters s_K floor((L + 1) / (K + 1)) times.  Otherwise, or
    with ``stepwise=True``, the environment transition is applied step by step
    on the same draws.
    """
    cfg = env.config
    groups = groups if groups is not None else coordination_groups(cfg.M)
    q_tables = np.asarray(q_tables, dtype=float)
    if q_tables.shape != (cfg.N, cfg.K + 1, cfg.M):
        raise ValueError(f"q_tables shape {q_tables.shape} != {(cfg.N, cfg.K + 1, cfg.M)}")
    if total_steps <= 0:
        return 0
    avail = np.ones(cfg.M, dtype=bool)
    state_free = bool(np.all(q_tables == q_tables[:, :1, :]))
    n_rows = 1 if state_free else cfg.K + 1
    # all_zero[s, t]: the joint action drawn for step t in state s is (a_0, ..., a_0)
    all_zero = np.ones((n_rows, total_steps), dtype=bool)
    for i in range(cfg.N):
        for s in range(n_rows):
            acts = _sample_actions_batch(strategy, q_tables[i, s], groups, avail, eps, rngs[i], total_steps)
            all_zero[s] &= acts == 0
    env.reset()
    if state_free and not stepwise:
        return _count_from_runs(all_zero[0], cfg.K)
    index, count = env.index, 0
    rows = all_zero.tolist()
    for t in range(total_steps):
        index, _ = env.transition(index, rows[0 if state_free else index][t])
        if index == cfg.K:
            count += 1
    env.index = index
    return count


def _count_from_runs(success: np.ndarray, K: int) -> int:
    padded = np.concatenate([[False], success, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    runs = ends - starts
    return int(((runs + 1) // (K + 1)).sum())


def reach_count_oracle(p_advance: Sequence[float] | float, K: int, total_steps: int) -> tuple[float, float]:
    """Exact mean and variance of the number of entries into s_K.

    The chain starts in s_0; from s_j (j < K) it advances with probability
    ``p_advance[j]`` and otherwise falls back to s_0; s_K always returns to
    s_0.  Moments are propagated through the linear recursion on
    (P(S_t = s), E[N_t 1{S_t = s}], E[N_t^2 1{S_t = s}]).
    """
    p = np.broadcast_to(np.asarray(p_advance, dtype=float), (K,))
    S = K + 1
    P = np.zeros((S, S))
    for j in range(K):
        P[j, j + 1] += p[j]
        P[j, 0] += 1.0 - p[j]
    P[K, 0] = 1.0
    hit = np.zeros((S, S))
    hit[:, K] = P[:, K]
    A = np.zeros((3 * S, 3 * S))
    A[:S, :S] = P.T
    A[S : 2 * S, S : 2 * S] = P.T
    A[S : 2 * S, :S] = hit.T
    A[2 * S :, 2 * S :] = P.T
    A[2 * S :, S : 2 * S] = 2.0 * hit.T
    A[2 * S :, :S] = hit.T
    x0 = np.zeros(3 * S)
    x0[0] = 1.0
    x = np.linalg.matrix_power(A, total_steps) @ x0
    mean = float(x[S : 2 * S].sum())
    second = float(x[2 * S :].sum())
    return mean, max(second - mean * mean, 0.0)
