import numpy as np
import pytest
from hypothesis import given, strategies as st

from qmix_seg.envs import EnvSpec
from qmix_seg.gradcheck import random_episode_batch, td_instance
from qmix_seg.qmix import (NotReadyError, QMixConfig, QMixLearner, agent_q_step, brute_force_max_qtot,
                           greedy_max_qtot, init_hidden, init_params, mix, td_loss, td_loss_tensor,
                           target_sync, unroll_agents)
from qmix_seg.replay import Episode, EpisodeBatch


def small(n=2, A=3, od=3, sd=4, gamma=0.9):
    return EnvSpec(n_agents=n, n_actions=A, obs_dim=od, state_dim=sd, max_episode_len=4, gamma=gamma)


CFG = QMixConfig(hidden_dim=5, mix_dim=4)


def params(spec, seed=0, cfg=CFG):
    return init_params(spec, cfg, np.random.default_rng(seed))


def test_zero_params_give_zero_q():
    spec = small()
    p = params(spec)
    for n in p.names():
        p[n].data[:] = 0.0
    q, _ = agent_q_step(p, spec, np.ones((2, 3)), np.array([0, 2]), np.arange(2), init_hidden(p, 2))
    np.testing.assert_array_equal(q.data, np.zeros((2, 3)))


def test_agent_step_deterministic_and_shape_checked():
    spec = small()
    p = params(spec)
    args = (np.ones((2, 3)), np.array([1, -1]), np.arange(2), np.full((2, 5), 0.3))
    a, b = agent_q_step(p, spec, *args), agent_q_step(p, spec, *args)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    with pytest.raises(ValueError):
        agent_q_step(p, spec, np.ones((2, 4)), np.array([1, -1]), np.arange(2), np.zeros((2, 5)))
    with pytest.raises(ValueError):
        agent_q_step(p, spec, np.ones((2, 3)), np.array([1, -1]), np.arange(2), np.zeros((3, 5)))


def test_two_step_unroll_equals_chained_steps():
    spec = small()
    p = params(spec, 1)
    batch = random_episode_batch(spec, np.random.default_rng(2), 1, 2)
    unrolled = unroll_agents(p, spec, batch)
    h = init_hidden(p, 1, 2)
    last = batch.last_actions
    for t in range(len(unrolled)):
        q, h = agent_q_step(p, spec, batch.obs[:, t], last[:, t], np.arange(2)[None], h)
        assert q.data.tobytes() == unrolled[t].data.tobytes()


def hand_mixer(n, const_b2=0.0):
    """mix_dim 1, |W1| = 1, |w2| = 1, b1 = 0, b2 = const_b2."""
    spec = small(n=n)
    p = params(spec, cfg=QMixConfig(hidden_dim=3, mix_dim=1))
    for name in p.subset("mixer."):
        p[name].data[:] = 0.0
    p["mixer.hyper_w1.bias"].data[:] = 1.0
    p["mixer.hyper_w2.bias"].data[:] = 1.0
    p["mixer.hyper_b2_2.bias"].data[:] = const_b2
    return spec, p


@pytest.mark.parametrize("q", [[0.5, -2.0, 0.25], [1.0, 2.0, 3.0], [-1.0, -0.5, 0.0]])
def test_mix_reduces_to_elu_of_sum(q):
    spec, p = hand_mixer(3)
    s = sum(q)
    expected = s if s > 0 else np.expm1(s)
    out = mix(p, np.array([q]), np.zeros((1, spec.state_dim))).data[0]
    assert out == pytest.approx(expected, abs=1e-15)


def test_mix_all_zero():
    spec = small()
    p = params(spec)
    for n in p.subset("mixer."):
        if n.endswith("bias") and ("b1" in n or "b2" in n):
            p[n].data[:] = 0.0
    p["mixer.hyper_b1.weight"].data[:] = 0.0
    p["mixer.hyper_b2_2.weight"].data[:] = 0.0
    assert mix(p, np.zeros((1, 2)), np.random.default_rng(0).normal(size=(1, 4))).data[0] == 0.0


@given(seed=st.integers(0, 2**31), agent=st.integers(0, 2), delta=st.sampled_from([0.1, 1.0, 10.0]))
def test_mix_monotone(seed, agent, delta):
    rng = np.random.default_rng(seed)
    spec = small(n=3, sd=3)
    p = init_params(spec, QMixConfig(hidden_dim=2, mix_dim=int(rng.integers(1, 8))), rng)
    q = rng.normal(scale=3.0, size=(1, 3))
    s = rng.normal(size=(1, 3))
    bumped = q.copy()
    bumped[0, agent] += delta
    assert mix(p, bumped, s).data[0] >= mix(p, q, s).data[0]


def test_greedy_single_agent_is_masked_argmax():
    spec = small(n=1)
    p = params(spec)
    q = np.array([[0.3, 0.9, 0.5]])
    idx, _ = greedy_max_qtot(p, q, np.zeros(4), np.array([[True, False, True]]))
    assert idx.tolist() == [2]


def test_greedy_ties_lowest_id():
    spec = small()
    idx, _ = greedy_max_qtot(params(spec), np.zeros((2, 3)), np.zeros(4), np.ones((2, 3), bool))
    assert idx.tolist() == [0, 0]


@given(seed=st.integers(0, 2**31))
def test_greedy_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, A = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    spec = small(n=n, A=A)
    p = init_params(spec, QMixConfig(hidden_dim=2, mix_dim=4), rng)
    q = rng.normal(size=(n, A))
    avail = rng.random((n, A)) < 0.6
    avail[np.arange(n), rng.integers(A, size=n)] = True
    state = rng.normal(size=4)
    idx, best = greedy_max_qtot(p, q, state, avail)
    joint, brute = brute_force_max_qtot(p, q, state, avail)
    assert best == pytest.approx(brute, rel=1e-12, abs=1e-12)
    assert all(avail[i, a] for i, a in enumerate(idx))


def one_step_batch(spec, reward, terminal=False):
    ep = Episode(
        obs=np.zeros((2, spec.n_agents, spec.obs_dim)),
        state=np.zeros((2, spec.state_dim)),
        avail=np.ones((2, spec.n_agents, spec.n_actions), bool),
        actions=np.zeros((1, spec.n_agents), dtype=np.int64),
        reward=np.array([reward]),
        terminal=np.array([terminal]),
    )
    return EpisodeBatch.from_episodes([ep])


def constant_qtot(spec, value):
    p = params(spec)
    for n in p.subset("mixer."):
        p[n].data[:] = 0.0
    p["mixer.hyper_b2_2.bias"].data[:] = value
    return p


def test_td_loss_zero_case():
    spec = small(gamma=0.0)
    p = constant_qtot(spec, 0.0)
    loss, _ = td_loss(one_step_batch(spec, 0.0), p, p.copy(trainable=False), spec, 0.0)
    assert loss == 0.0


def test_td_loss_hand_value():
    spec = small()
    p = constant_qtot(spec, 2.0)
    loss, _ = td_loss(one_step_batch(spec, 1.0), p, p.copy(trainable=False), spec, 0.9)
    assert loss == pytest.approx((1 + 1.8 - 2) ** 2, rel=1e-12)


def test_td_loss_terminal_drops_bootstrap():
    spec = small()
    p = constant_qtot(spec, 2.0)
    loss, _ = td_loss(one_step_batch(spec, 1.0, terminal=True), p, p.copy(trainable=False), spec, 0.9)
    assert loss == pytest.approx(1.0, rel=1e-12)


def test_td_loss_rejects_gamma_one():
    spec = small()
    p = params(spec)
    with pytest.raises(ValueError):
        td_loss(one_step_batch(spec, 0.0), p, p.copy(trainable=False), spec, 1.0)


def test_td_loss_empty_batch_not_ready():
    spec = small()
    p = params(spec)
    b = one_step_batch(spec, 0.0)
    b.mask[:] = 0.0
    with pytest.raises(NotReadyError):
        td_loss(b, p, p.copy(trainable=False), spec, 0.9)


@pytest.mark.parametrize("seed", range(4))
def test_td_loss_constructed_fixed_point(seed):
    """Rewards set to Q_tot - gamma * bootstrap make the loss vanish."""
    rng = np.random.default_rng(seed)
    spec = small(gamma=0.95)
    p = params(spec, seed)
    target = p.copy(trainable=False)
    batch = random_episode_batch(spec, rng, 3, 3)
    batch.reward[:] = 0.0
    gamma = spec.gamma
    # with zero rewards the TD error is Q_tot - gamma * bootstrap; shift rewards by it
    from qmix_seg import autodiff as ad

    with ad.no_grad():
        B, T, n = batch.actions.shape
        qs = unroll_agents(p, spec, batch)
        chosen = np.stack([np.take_along_axis(qs[t].data, batch.actions[:, t, :, None], -1)[..., 0] for t in range(T)], 1)
        qtot = mix(p, chosen.reshape(B * T, n), batch.state[:, :T].reshape(B * T, -1)).data.reshape(B, T)
        nxt = np.stack([np.where(batch.avail[:, t + 1], qs[t + 1].data, -1e30).max(-1) for t in range(T)], 1)
        boot = mix(target, nxt.reshape(B * T, n), batch.state[:, 1:].reshape(B * T, -1)).data.reshape(B, T)
    batch.reward = qtot - gamma * (1 - batch.terminal) * boot
    loss, grads = td_loss(batch, p, target, spec, gamma)
    assert loss <= 1e-24
    assert max(np.abs(g).max() for g in grads.values()) <= 1e-10


def test_padding_contributes_nothing():
    spec = small()
    rng = np.random.default_rng(5)
    p = params(spec, 5)
    target = params(spec, 6).copy(trainable=False)
    batch = random_episode_batch(spec, rng, 3, 4)
    while batch.mask.all():
        batch = random_episode_batch(spec, rng, 3, 4)
    loss_a, grads_a = td_loss(batch, p, target, spec, 0.9)
    pad = batch.mask == 0
    batch.reward[pad] = rng.normal(size=pad.sum()) * 100
    pad_obs = np.concatenate([np.zeros((len(pad), 1), bool), pad], axis=1)
    batch.obs[pad_obs] = rng.normal(size=batch.obs[pad_obs].shape)
    batch.state[pad_obs] = rng.normal(size=batch.state[pad_obs].shape)
    loss_b, grads_b = td_loss(batch, p, target, spec, 0.9)
    assert loss_a == loss_b
    for k in grads_a:
        np.testing.assert_array_equal(grads_a[k], grads_b[k])


@pytest.mark.parametrize("seed", range(3))
def test_td_gradients_match_finite_differences(seed):
    assert td_instance(seed) <= 1e-4


def test_td_gradients_two_agents_three_actions_length_two():
    from qmix_seg import autodiff as ad
    from qmix_seg.nn import finite_diff_grad, relative_error

    spec = small(n=2, A=3)
    rng = np.random.default_rng(9)
    p, target = params(spec, 1), params(spec, 2).copy(trainable=False)
    batch = random_episode_batch(spec, rng, 1, 2)
    _, analytic = td_loss(batch, p, target, spec, 0.9)
    with ad.no_grad():
        numeric = finite_diff_grad(lambda: td_loss_tensor(batch, p, target, spec, 0.9).item(), p)
    assert relative_error(analytic, numeric) <= 1e-4


def test_target_side_receives_no_gradient():
    spec = small()
    p, target = params(spec, 1), params(spec, 2).copy(trainable=False)
    td_loss(random_episode_batch(spec, np.random.default_rng(0), 2, 3), p, target, spec, 0.9)
    assert all(t.grad is None for _, t in target.items())


def test_target_sync():
    spec = small()
    learner = QMixLearner(spec, QMixConfig(hidden_dim=4, mix_dim=3, target_update_interval=100), seed=0)
    assert learner.target.checksum() == learner.params.checksum()
    batch = random_episode_batch(spec, np.random.default_rng(0), 4, 3)
    for _ in range(99):
        learner.train(batch)
    assert learner.target.checksum() != learner.params.checksum()
    learner.train(batch)
    snapshot = learner.params.checksum()
    assert learner.target.checksum() == snapshot
    learner.train(batch)
    assert learner.target.checksum() == snapshot


def test_target_sync_forward_equal():
    spec = small()
    online, target = params(spec, 1), params(spec, 2).copy(trainable=False)
    target_sync(online, target)
    x = np.random.default_rng(0).normal(size=(2, 3))
    a = agent_q_step(online, spec, x, np.array([0, 1]), np.arange(2), init_hidden(online, 2))[0].data
    b = agent_q_step(target, spec, x, np.array([0, 1]), np.arange(2), init_hidden(target, 2))[0].data
    assert a.tobytes() == b.tobytes()
