"""Train QMIX with SEG on a small coordination game until greedy evaluation reaches 90.

    python scripts/qmix_smoke.py --out runs/qmix-smoke
"""
import argparse

from qmix_seg.cli import main as cli

if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/qmix-smoke")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", default="seg", choices=["seg", "eps-greedy", "both"])
    a = p.parse_args()
    raise SystemExit(cli([
        "train-qmix", "--out", a.out, "--seed", str(a.seed), "--strategy", a.strategy, "--trials", "1",
        "--N", "3", "--K", "3", "--M", "3", "--eps-anneal", "50000", "--qmix-steps", "300000",
        "--stop-at-reward", "90", "--stop-window", "3",
    ]))
