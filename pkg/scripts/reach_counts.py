"""Count goal visits under frozen Q-values for SEG and eps-greedy as NK grows.

    python scripts/reach_counts.py --out runs/reach --trials 40

Writes the count-reach CSVs and, if matplotlib is available, reach_counts.png.
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
    with open(out / "reach_summary.csv") as f:
        rows = list(csv.DictReader(f))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for strategy in ("seg", "eps-greedy"):
        pts = sorted((int(r["NK"]), int(r["total_count"]), float(r["oracle_total_mean"]))
                     for r in rows if r["strategy"] == strategy)
        if not pts:
            continue
        nk, got, want = zip(*pts)
        ax.plot(nk, got, "o-", label=f"{strategy} (sampled)")
        ax.plot(nk, want, "k:", lw=1)
    ax.set_yscale("symlog")
    ax.set_xlabel("NK")
    ax.set_ylabel("goal visits (all trials)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "reach_counts.png", dpi=120)


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/reach")
    p.add_argument("--trials", type=int, default=40)
    p.add_argument("--steps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    code = cli(["count-reach", "--out", a.out, "--trials", str(a.trials), "--count-steps", str(a.steps),
                "--seed", str(a.seed), "--nk-values", "2,4,6,8,10", "--count-agents", "2", "--eps", "0.5"])
    if code == 0:
        plot(Path(a.out))
    raise SystemExit(code)
