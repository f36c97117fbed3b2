"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (about 11 minutes on one
core) or ``python tests/test_acceptance.py``.
"""
import csv
import sys
from pathlib import Path

import mpmath
import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from qmix_seg.action_repr import ReprConfig, cluster_actions, learn_representations
from qmix_seg.cli import main as cli_main
from qmix_seg.envs import CoordGameConfig, CoordinationGame, EnvSpec, make_grouped_effects_env
from qmix_seg.exploration import (EPS_GREEDY, SEG, EpsilonSchedule, ReachQuery, action_distribution,
                                  coordination_groups, reach_probability, select_eps_greedy, select_seg)
from qmix_seg.gradcheck import run_suite
from qmix_seg.iql import IQLConfig, run_trials
from qmix_seg.qmix import QMixConfig, brute_force_max_qtot, greedy_max_qtot, init_params, mix
from qmix_seg.training import QMixRun, train_qmix

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES  # noqa: E402


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# 1 --------------------------------------------------------------------------


def test_criterion_1_iql_seg_vs_eps_greedy():
    cfg = IQLConfig(N=5, K=4, M=3, schedule=EpsilonSchedule(1.0, 0.05, 30_000), trials=10)
    seg = run_trials(cfg, SEG)
    eg = run_trials(cfg, EPS_GREEDY)
    ok = seg.mean[-1] >= 90 and eg.mean[-1] <= 10
    record(1, ok, f"IQL(SEG) final mean {seg.mean[-1]:.1f} (>= 90), IQL(eps-greedy) final mean "
                  f"{eg.mean[-1]:.1f} (<= 10) after {cfg.total_steps} steps, alpha {cfg.alpha}, 10 trials")
    assert ok


# 2 --------------------------------------------------------------------------


def test_criterion_2_reach_counts(tmp_path):
    out = tmp_path / "fig2a"
    trials = 40
    code = cli_main(["count-reach", "--out", str(out), "--nk-values", "2,4,6,8,10", "--count-agents", "2",
                     "--M", "3", "--eps", "0.5", "--count-steps", "1000000", "--trials", str(trials)])
    assert code == 0
    with open(out / "reach_summary.csv") as f:
        rows = list(csv.DictReader(f))
    total = {(r["strategy"], int(r["NK"])): int(r["total_count"]) for r in rows}
    z = {(r["strategy"], int(r["NK"])): float(r["z"]) for r in rows}
    nks = [2, 4, 6, 8, 10]
    seg10, eg10 = total[("seg", 10)], total[("eps-greedy", 10)]
    ratio_ok = seg10 > 0 and seg10 >= 10 * eg10
    mono_ok = all(total[(s, a)] >= total[(s, b)] for s in ("seg", "eps-greedy") for a, b in zip(nks, nks[1:]))
    band_ok = all(abs(v) <= 3 for v in z.values())
    ok = ratio_ok and mono_ok and band_ok
    record(2, ok, f"NK=10 counts over {trials} x 1M steps: SEG {seg10} vs eps-greedy {eg10} (>= 10x: {ratio_ok}); "
                  f"non-increasing in NK: {mono_ok}; max |z| vs Markov-chain oracle {max(map(abs, z.values())):.2f} "
                  f"(<= 3)")
    assert ok


# 3 --------------------------------------------------------------------------


def test_criterion_3_reach_probability_closed_forms():
    rng = np.random.default_rng(2024)
    mpmath.mp.dps = 50
    worst = 0.0
    independence_ok = True
    for _ in range(50):
        n, t = int(rng.integers(1, 8)), int(rng.integers(0, 6))
        A = int(rng.integers(2, 12))
        gs = int(rng.integers(1, A + 1))
        m = int(rng.integers(1, 6))
        eps = float(rng.uniform(0.01, 1.0))
        e = mpmath.mpf(eps)
        direct = {EPS_GREEDY: (e * gs / A) ** (n * t), SEG: (e / m) ** (n * t)}
        for strategy, ref in direct.items():
            got = reach_probability(ReachQuery(strategy, n, t, A, gs, m, eps))
            rel = abs(mpmath.mpf(got) - ref) / ref
            worst = max(worst, float(rel))
        if t > 0:
            seg_a = reach_probability(ReachQuery(SEG, n, t, A, gs, m, eps))
            seg_b = reach_probability(ReachQuery(SEG, n, t, A + 5, gs, m, eps))
            eg_a = reach_probability(ReachQuery(EPS_GREEDY, n, t, A, gs, m, eps))
            eg_b = reach_probability(ReachQuery(EPS_GREEDY, n, t, A + 5, gs, m, eps))
            independence_ok &= seg_a == seg_b and eg_a != eg_b
    ok = worst <= 1e-12 and independence_ok
    record(3, ok, f"max relative error {worst:.2e} over 50 tuples (<= 1e-12); SEG independent of |A| and "
                  f"eps-greedy dependent: {independence_ok}")
    assert ok


# 4 --------------------------------------------------------------------------


def random_selection_config(rng):
    A = int(rng.integers(2, 7))
    q = rng.normal(size=A)
    q[rng.integers(A)] = q.max()  # exercise the tie rule
    always = int(rng.integers(A))
    avail = rng.random(A) < 0.7
    avail[always] = True
    m = int(rng.integers(1, A + 1))
    labels = rng.integers(m, size=A)
    groups = [sorted({a for a in range(A) if labels[a] == j} | {always}) for j in range(m)]
    return q, groups, avail, float(rng.uniform(0.05, 1.0))


def test_criterion_4_selection_frequencies():
    rng = np.random.default_rng(4)
    draws = 200_000
    worst_z = 0.0
    ok = True
    for _ in range(20):
        q, groups, avail, eps = random_selection_config(rng)
        for strategy, sampler in ((SEG, lambda r: select_seg(q, groups, avail, eps, r)),
                                  (EPS_GREEDY, lambda r: select_eps_greedy(q, avail, eps, r))):
            stream = np.random.default_rng(rng.integers(2**63))
            counts = np.bincount([sampler(stream) for _ in range(draws)], minlength=len(q))
            p = action_distribution(strategy, q, groups, avail, eps)
            freq = counts / draws
            sigma = np.sqrt(p * (1 - p) / draws)
            zero = sigma == 0
            ok &= bool(np.all(freq[zero] == p[zero]))
            z = np.abs(freq - p)[~zero] / sigma[~zero]
            worst_z = max(worst_z, float(z.max(initial=0.0)))
            ok &= bool(np.all(z <= 3))
    record(4, ok, f"20 configs x 2 samplers x {draws} draws; largest deviation {worst_z:.2f} sigma (<= 3)")
    assert ok


# 5 --------------------------------------------------------------------------


def test_criterion_5_gradients():
    td = run_suite("qmix-td", 20)
    le = run_suite("repr-loss", 20)
    ok = max(td) <= 1e-4 and max(le) <= 1e-4
    record(5, ok, f"max relative error TD loss {max(td):.2e}, representation loss {max(le):.2e} "
                  f"over 20 instances each (<= 1e-4)")
    assert ok


# 6 --------------------------------------------------------------------------


def test_criterion_6_monotonic_mixing():
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(1000):
        n, sd = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        spec = EnvSpec(n, 2, 1, sd, 1, 0.9)
        p = init_params(spec, QMixConfig(hidden_dim=2, mix_dim=int(rng.integers(1, 33))), rng)
        for name in p.subset("mixer."):
            p[name].data *= rng.uniform(0.1, 10.0)
        q = rng.normal(scale=5.0, size=(1, n))
        s = rng.normal(size=(1, sd))
        base = mix(p, q, s).data[0]
        for i in range(n):
            for delta in (0.1, 1.0, 10.0):
                bumped = q.copy()
                bumped[0, i] += delta
                violations += mix(p, bumped, s).data[0] < base
    mismatches = 0
    for _ in range(200):
        n, A = int(rng.integers(1, 4)), int(rng.integers(2, 6))
        spec = EnvSpec(n, A, 1, 3, 1, 0.9)
        p = init_params(spec, QMixConfig(hidden_dim=2, mix_dim=8), rng)
        q = rng.normal(size=(n, A))
        avail = rng.random((n, A)) < 0.7
        avail[np.arange(n), rng.integers(A, size=n)] = True
        state = rng.normal(size=3)
        _, best = greedy_max_qtot(p, q, state, avail)
        _, brute = brute_force_max_qtot(p, q, state, avail)
        mismatches += not np.isclose(best, brute, rtol=1e-12, atol=1e-12)
    ok = violations == 0 and mismatches == 0
    record(6, ok, f"{violations} monotonicity violations in 1000 draws; {mismatches} greedy/brute-force "
                  f"mismatches in 200 instances")
    assert ok


# 7 --------------------------------------------------------------------------


def recovered_ari(noise: float, seed: int) -> float:
    env = make_grouped_effects_env(2, 6, 2, noise, seed)
    reps, _ = learn_representations(env, ReprConfig(), seed=seed)
    _, res = cluster_actions(reps, env.n_true_groups, env.always_available, seed)
    return float(adjusted_rand_score(env.true_labels, res.labels))


def test_criterion_7_clustering_recovery():
    clean = recovered_ari(0.0, 0)
    noisy = [recovered_ari(0.1, s) for s in range(5)]
    ok = clean == 1.0 and min(noisy) >= 0.9
    record(7, ok, f"ARI {clean:.3f} at noise 0 (== 1); ARI at noise 0.1 over 5 seeds "
                  f"{[round(a, 3) for a in noisy]} (each >= 0.9)")
    assert ok


# 8 --------------------------------------------------------------------------


def test_criterion_8_qmix_smoke():
    env = CoordinationGame(CoordGameConfig(N=3, K=3, M=3), gamma=0.99)
    run = QMixRun(strategy=SEG, groups=coordination_groups(3), total_steps=300_000,
                  schedule=EpsilonSchedule(1.0, 0.05, 50_000), eval_interval=5_000, seed=0,
                  stop_at_reward=90.0, stop_window=3)
    _, metrics = train_qmix(env, run)
    last = [m[2] for m in metrics[-3:]]
    ok = len(metrics) >= 3 and np.mean(last) >= 90 and metrics[-1][0] <= 300_000
    record(8, ok, f"QMIX(SEG) on (3, 3, 3): mean of last three greedy evaluations {np.mean(last):.1f} "
                  f"(>= 90) at step {metrics[-1][0]} (<= 300000)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
