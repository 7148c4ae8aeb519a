"""Spread of the dimension estimates over master seeds, per config.

    python3 scripts/seed_sweep.py [--seeds 5] [--threads 4] [name ...]

Used to check that the band range and tolerances in scripts/configs are not
tuned to one seed.
"""
import argparse
from pathlib import Path

import numpy as np

from mchaos.experiment import compare, load_config, replace_seed, run_experiment

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()
    names = args.names or sorted(p.stem for p in (HERE / "configs").glob("*.json"))
    for name in names:
        base = load_config(HERE / "configs" / f"{name}.json")
        table = {}
        for seed in range(args.seeds):
            rec = run_experiment(replace_seed(base, seed), threads=args.threads)
            for row in compare(rec):
                if row.estimate is not None and row.estimator != "mass":
                    table.setdefault(row.estimator, []).append((row.estimate, row.prediction, row.status))
        for est, vals in table.items():
            e = np.array([v[0] for v in vals])
            n_pass = sum(v[2] == "pass" for v in vals)
            print(f"{name:8s} {est:8s} prediction {vals[0][1]:.3f}  estimates {e.min():.3f}..{e.max():.3f}"
                  f"  mean {e.mean():.3f}  pass {n_pass}/{len(vals)}")


if __name__ == "__main__":
    main()
