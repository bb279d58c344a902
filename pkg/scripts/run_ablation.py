"""Encoder ablation: vit vs meanpool held-out CE on the fixture, one row per seed.

    python3 scripts/run_ablation.py --seeds 5 --pairs 16
"""

import argparse
import csv
import sys

from captionkit.experiments import ablation_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--pairs", type=int, default=16)
    args = ap.parse_args()

    w = csv.writer(sys.stdout)
    w.writerow(["seed", "vit_val_ce", "meanpool_val_ce", "vit_wins"])
    wins = 0
    for seed in range(args.seeds):
        row = ablation_run(seed, pairs=args.pairs)
        wins += row.vit_wins
        w.writerow([seed, f"{row.vit_val:.6f}", f"{row.meanpool_val:.6f}", int(row.vit_wins)])
        sys.stdout.flush()
    print(f"# vit <= meanpool in {wins}/{args.seeds} seeds", file=sys.stderr)


if __name__ == "__main__":
    main()
