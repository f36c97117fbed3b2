"""Command-line entry point: ``qmix-seg <kind> [--config FILE] [--field VALUE ...]``.

Every run writes ``manifest.json`` plus its result files into ``--out``.
Each CSV row and JSON artifact carries the run id recorded in the manifest,
and ``qmix-seg rerun MANIFEST`` repeats a run from its manifest.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import KINDS, ConfigError, RunConfig, add_override_flags, overrides_from_args, parse_config

log = logging.getLogger("qmix_seg")


def trial_seed_list(seed: int, trials: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]


def code_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Outputs:
    """Writes result files into the run directory and remembers them for the manifest."""

    def __init__(self, cfg: RunConfig):
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.run_id = cfg.run_id()
        self.files: list[str] = []
        self.seeds: dict[str, object] = {"run": cfg.seed}
        self.summary: dict[str, object] = {}

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self.dir / name
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["run_id"] + header)
            for row in rows:
                w.writerow([self.run_id] + list(row))
        self.files.append(name)
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        path.write_text(json.dumps({"run_id": self.run_id, **payload}, indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name


# ------------------------------------------------------------------ runners


def run_count_reach(cfg: RunConfig, out: Outputs) -> int:
    from .envs import CoordGameConfig, CoordinationGame
    from .exploration import (ReachQuery, action_probability, agent_streams, coordination_groups,
                              count_reaches, reach_count_oracle, reach_probability)

    seeds = trial_seed_list(cfg.seed, cfg.trials)
    out.seeds["trials"] = seeds
    rows, summary = [], []
    for nk in cfg.nk_list():
        pairs = [(cfg.count_agents, nk // cfg.count_agents)] if cfg.count_agents else [
            (n, nk // n) for n in range(1, nk + 1) if nk % n == 0]
        for N, K in pairs:
            game = CoordGameConfig(N=N, K=K, M=cfg.M)
            q = np.full((N, K + 1, cfg.M), 0.1)
            q[:, :, 0] = 0.0
            groups = coordination_groups(cfg.M)
            avail = np.ones(cfg.M, dtype=bool)
            for strategy in cfg.strategies():
                p0 = action_probability(strategy, q[0, 0], groups, avail, cfg.eps, 0)
                mean, var = reach_count_oracle(p0 ** N, K, cfg.count_steps)
                counts = []
                for trial, s in enumerate(seeds):
                    env = CoordinationGame(game, cfg.gamma)
                    c = count_reaches(env, strategy, q, cfg.eps, cfg.count_steps, agent_streams(s, N), groups)
                    counts.append(c)
                    rows.append((strategy, N, K, cfg.M, cfg.eps, cfg.count_steps, trial, s, c, mean, var))
                total = sum(counts)
                std = float(np.sqrt(var * len(counts)))
                z = (total - mean * len(counts)) / std if std > 0 else 0.0
                window = reach_probability(ReachQuery(strategy, N, K, cfg.M, 1, len(groups), cfg.eps))
                summary.append((strategy, nk, N, K, cfg.M, cfg.eps, cfg.count_steps, len(counts), total,
                                mean * len(counts), std, z, window))
                log.info("%s N=%d K=%d total=%d oracle=%.3f z=%.2f", strategy, N, K, total, mean * len(counts), z)
    out.csv("reach_counts.csv",
            ["strategy", "N", "K", "M", "eps", "steps", "trial", "seed", "count", "oracle_mean", "oracle_var"], rows)
    out.csv("reach_summary.csv",
            ["strategy", "NK", "N", "K", "M", "eps", "steps", "trials", "total_count", "oracle_total_mean",
             "oracle_total_std", "z", "window_probability"], summary)
    return 0


def run_train_iql(cfg: RunConfig, out: Outputs) -> int:
    from .exploration import EpsilonSchedule
    from .iql import IQLConfig, run_trials

    icfg = IQLConfig(
        N=cfg.N, K=cfg.K, M=cfg.M, alpha=cfg.alpha, gamma=cfg.gamma,
        schedule=EpsilonSchedule(cfg.eps_start, cfg.eps_end, cfg.eps_anneal),
        total_steps=cfg.iql_steps, eval_interval=cfg.eval_interval, episode_len=cfg.episode_len,
        trials=cfg.trials, seed=cfg.seed,
    )
    curves, agg = [], []
    for strategy in cfg.strategies():
        res = run_trials(icfg, strategy)
        out.seeds[f"iql/{strategy}"] = res.seeds
        for trial, s in enumerate(res.seeds):
            curves.extend((strategy, trial, s, int(step), float(r)) for step, r in zip(res.steps, res.rewards[trial]))
        agg.extend((strategy, int(step), float(m), float(sd)) for step, m, sd in zip(res.steps, res.mean, res.std))
        out.summary[f"final_mean/{strategy}"] = float(res.mean[-1])
        log.info("%s final mean reward %.1f", strategy, res.mean[-1])
    out.csv("iql_curves.csv", ["strategy", "trial", "seed", "step", "reward"], curves)
    out.csv("iql_aggregate.csv", ["strategy", "step", "mean", "std"], agg)
    return 0


def run_train_qmix(cfg: RunConfig, out: Outputs) -> int:
    from .envs import CoordGameConfig, CoordinationGame
    from .exploration import EpsilonSchedule, coordination_groups
    from .nn import save_checkpoint
    from .qmix import QMixConfig
    from .training import QMixRun, train_qmix

    qcfg = QMixConfig(hidden_dim=cfg.hidden_dim, mix_dim=cfg.mix_dim, lr=cfg.lr, batch_size=cfg.batch_size,
                      buffer_capacity=cfg.buffer_capacity, target_update_interval=cfg.target_update_interval)
    rows = []
    seeds = trial_seed_list(cfg.seed, cfg.trials)
    for strategy in cfg.strategies():
        out.seeds[f"qmix/{strategy}"] = seeds
        for trial, s in enumerate(seeds):
            env = CoordinationGame(CoordGameConfig(cfg.N, cfg.K, cfg.M, episode_len=cfg.episode_len), cfg.gamma)
            run = QMixRun(
                strategy=strategy, groups=coordination_groups(cfg.M), total_steps=cfg.qmix_steps,
                schedule=EpsilonSchedule(cfg.eps_start, cfg.eps_end, cfg.eps_anneal),
                eval_interval=cfg.qmix_eval_interval, seed=s,
                stop_at_reward=cfg.stop_at_reward if cfg.stop_at_reward >= 0 else None,
                stop_window=cfg.stop_window,
            )
            learner, metrics = train_qmix(env, run, qcfg)
            rows.extend((strategy, trial, s, t, loss, ret) for t, loss, ret in metrics)
            save_checkpoint(out.path(f"qmix-{strategy}-trial{trial}.ckpt"), learner.params)
            out.summary[f"final_eval/{strategy}/trial{trial}"] = metrics[-1][2]
    out.csv("qmix_metrics.csv", ["strategy", "trial", "seed", "step", "loss", "eval_reward"], rows)
    return 0


def run_learn_repr(cfg: RunConfig, out: Outputs) -> int:
    from sklearn.metrics import adjusted_rand_score

    from .action_repr import ReprConfig, cluster_actions, learn_representations
    from .envs import make_grouped_effects_env
    from .nn import save_checkpoint

    env = make_grouped_effects_env(cfg.g_agents, cfg.g_actions, cfg.g_groups, cfg.noise, cfg.seed,
                                   gamma=cfg.gamma)
    rcfg = ReprConfig(repr_dim=cfg.repr_dim, pred_hidden=cfg.pred_hidden, lambda_e=cfg.lambda_e, lr=cfg.lr,
                      batch_size=cfg.batch_size, steps_budget=cfg.repr_budget,
                      encoder_init_scale=cfg.encoder_init_scale)
    reps, learner = learn_representations(env, rcfg, seed=cfg.seed, capacity=cfg.buffer_capacity)
    k = cfg.n_clusters or env.n_true_groups
    groups, res = cluster_actions(reps, k, env.always_available, cfg.seed)
    ari = float(adjusted_rand_score(env.true_labels, res.labels))
    write_representations(out, reps, env.always_available)
    out.json("groups.json", {**groups.to_dict(), "kmeans_iterations": res.iterations,
                             "kmeans_inertia": res.inertia, "true_labels": env.true_labels.tolist()})
    save_checkpoint(out.path("encoder.ckpt"), learner.params)
    out.csv("repr_summary.csv", ["seed", "noise", "k", "encoder_updates", "ari"],
            [(cfg.seed, cfg.noise, k, learner.updates, ari)])
    out.summary["ari"] = ari
    log.info("adjusted Rand index %.3f after %d encoder updates", ari, learner.updates)
    return 0


def write_representations(out: Outputs, reps: np.ndarray, always_available=()) -> None:
    out.json("representations.json", {
        "always_available": [int(a) for a in always_available],
        "n_actions": int(reps.shape[0]),
        "dim": int(reps.shape[1]),
        "representations": {str(a): [float(v) for v in row] for a, row in enumerate(reps)},
    })


def read_representations(path: str | Path) -> tuple[np.ndarray, list[int]]:
    doc = json.loads(Path(path).read_text())
    table = doc["representations"]
    reps = np.array([table[str(a)] for a in range(int(doc["n_actions"]))], dtype=float)
    return reps, list(doc.get("always_available", []))


def run_cluster(cfg: RunConfig, out: Outputs) -> int:
    from .action_repr import cluster_actions

    if not cfg.repr_file:
        raise ConfigError("cluster needs repr_file pointing at a representations.json")
    reps, always = read_representations(cfg.repr_file)
    k = cfg.n_clusters or 2
    groups, res = cluster_actions(reps, k, always, cfg.seed)
    out.json("groups.json", {**groups.to_dict(), "kmeans_iterations": res.iterations,
                             "kmeans_inertia": res.inertia, "source": str(cfg.repr_file)})
    return 0


def run_grad_check(cfg: RunConfig, out: Outputs) -> int:
    from .gradcheck import SUITES, run_suite

    rows, worst = [], 0.0
    for name in SUITES:
        errs = run_suite(name, cfg.grad_instances, cfg.seed)
        rows.extend((name, i, e) for i, e in enumerate(errs))
        worst = max(worst, max(errs))
        out.summary[f"max_rel_error/{name}"] = max(errs)
        print(f"{name}: max relative error {max(errs):.3e} over {len(errs)} instances")
    out.csv("grad_check.csv", ["suite", "instance", "rel_error"], rows)
    ok = worst <= cfg.grad_tol
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {cfg.grad_tol:g})")
    return 0 if ok else 1


RUNNERS = {
    "count-reach": run_count_reach,
    "train-iql": run_train_iql,
    "train-qmix": run_train_qmix,
    "learn-repr": run_learn_repr,
    "cluster": run_cluster,
    "grad-check": run_grad_check,
}


def run(cfg: RunConfig) -> int:
    """Dispatch one experiment and write its manifest; returns the exit status."""
    out = Outputs(cfg)
    started = time.time()
    status = RUNNERS[cfg.kind](cfg, out)
    finished = time.time()
    manifest = {
        "run_id": out.run_id,
        "config": cfg.to_dict(),
        "version": code_version(),
        "seeds": out.seeds,
        "outputs": out.files,
        "summary": out.summary,
        "exit_status": status,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_seconds": round(finished - started, 3),
    }
    (out.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"run {out.run_id}: wrote {len(out.files)} files and manifest.json to {out.dir}")
    return status


def config_from_manifest(path: str | Path, out: str | None = None) -> RunConfig:
    doc = json.loads(Path(path).read_text())
    values = dict(doc["config"])
    if out is not None:
        values["out"] = out
    return parse_config(None, values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmix-seg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        add_override_flags(sub.add_parser(kind))
    rerun = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    rerun.add_argument("manifest")
    rerun.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "rerun":
            cfg = config_from_manifest(args.manifest, args.out)
        else:
            cfg = parse_config(args.config, {**overrides_from_args(args), "kind": args.command})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
