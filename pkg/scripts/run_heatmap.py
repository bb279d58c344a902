"""Similarity heatmap of an overfit model: diagonal hit rate over several training seeds.

    python3 scripts/run_heatmap.py --train-seeds 3 --out runs/heatmap
"""

import argparse
import dataclasses
from pathlib import Path

import numpy as np

from captionkit.experiments import OVERFIT_TRAIN, diagonal_hits, overfit_run
from captionkit.heatmap import render_heatmap


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-seeds", type=int, default=3)
    ap.add_argument("--out", type=Path, default=Path("runs/heatmap"))
    args = ap.parse_args()

    for s in range(args.train_seeds):
        out = args.out / f"seed{s}"
        rep = overfit_run(out / "fixture", train_cfg=dataclasses.replace(OVERFIT_TRAIN, seed=s))
        hits, m = diagonal_hits(rep.result)
        render_heatmap(m, out / "sim")
        print(f"train seed {s}: exact {rep.exact}/{rep.total}, diagonal {hits}/{len(m)}, "
              f"row argmax {np.argmax(m, axis=1).tolist()}, range [{m.min():.1f}, {m.max():.1f}]")


if __name__ == "__main__":
    main()
