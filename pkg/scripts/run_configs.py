"""Run the experiment configs in scripts/configs and print a verdict table for each.

    python3 scripts/run_configs.py [--threads 4] [--out runs] [name ...]
"""
import argparse
from pathlib import Path

from mchaos.experiment import compare, load_config, run_experiment, verdict_passed, verdict_text

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="config names without .json (default: all)")
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--out", default="runs", help="parent directory for run outputs")
    args = ap.parse_args()
    names = args.names or sorted(p.stem for p in (HERE / "configs").glob("*.json"))
    ok = True
    for name in names:
        cfg = load_config(HERE / "configs" / f"{name}.json")
        rec = run_experiment(cfg, threads=args.threads, out_dir=Path(args.out) / name)
        rows = compare(rec)
        ok &= verdict_passed(rows)
        print(f"== {name} ({cfg.model}, d={cfg.d}, m={cfg.m}, S={cfg.samples})")
        for w in rec["warnings"]:
            print("warning:", w)
        print(verdict_text(rows), end="\n\n")
    raise SystemExit(0 if ok else 3)


if __name__ == "__main__":
    main()
