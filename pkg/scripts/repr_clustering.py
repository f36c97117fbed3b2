"""Learn action representations on the grouped-effects environment and report ARI per seed.

    python scripts/repr_clustering.py --noise 0.1 --seeds 0 1 2 3 4
"""
import argparse
import json
from pathlib import Path

from qmix_seg.cli import main as cli

if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/repr")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--budget", type=int, default=50_000)
    a = p.parse_args()
    for seed in a.seeds:
        out = Path(a.out) / f"noise{a.noise:g}-seed{seed}"
        code = cli(["learn-repr", "--out", str(out), "--seed", str(seed), "--noise", str(a.noise),
                    "--repr-budget", str(a.budget)])
        if code:
            raise SystemExit(code)
        ari = json.loads((out / "manifest.json").read_text())["summary"]["ari"]
        print(f"seed {seed}: ARI {ari:.3f}")
