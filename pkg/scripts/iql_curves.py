"""Tabular IQL learning curves on the coordination game, SEG against eps-greedy.

    python scripts/iql_curves.py --out runs/iql

Takes about 4 minutes per strategy for 10 trials on one core.
"""
import argparse
import csv
from pathlib import Path

from qmix_seg.cli import main as cli


def plot(out: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    with open(out / "iql_aggregate.csv") as f:
        rows = list(csv.DictReader(f))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for strategy in ("seg", "eps-greedy"):
        sel = [r for r in rows if r["strategy"] == strategy]
        step = [int(r["step"]) for r in sel]
        mean = [float(r["mean"]) for r in sel]
        sd = [float(r["std"]) for r in sel]
        ax.plot(step, mean, label=strategy)
        ax.fill_between(step, [m - s for m, s in zip(mean, sd)], [m + s for m, s in zip(mean, sd)], alpha=0.2)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("greedy evaluation reward")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "iql_curves.png", dpi=120)


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/iql")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--config", default=None, help="optional YAML file with further overrides")
    a = p.parse_args()
    argv = ["train-iql", "--out", a.out, "--trials", str(a.trials)]
    if a.config:
        argv += ["--config", a.config]
    code = cli(argv)
    if code == 0:
        plot(Path(a.out))
    raise SystemExit(code)
