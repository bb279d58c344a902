"""Overfit the toy captioner on a synthetic fixture and report CE and exact-match captions.

    python3 scripts/run_overfit.py --pairs 8 --seed 7 --out runs/overfit
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from captionkit.checkpoint import Checkpoint, save_checkpoint
from captionkit.experiments import OVERFIT_TRAIN, overfit_run
from captionkit.train import write_history


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=8)
    ap.add_argument("--seed", type=int, default=7, help="fixture seed")
    ap.add_argument("--train-seed", type=int, default=OVERFIT_TRAIN.seed)
    ap.add_argument("--out", type=Path, default=Path("runs/overfit"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(OVERFIT_TRAIN, seed=args.train_seed)
    start = time.perf_counter()
    rep = overfit_run(args.out / "fixture", args.pairs, args.seed, train_cfg=cfg)
    res = rep.result
    save_checkpoint(Checkpoint(res.model_cfg, res.params, res.vocab, cfg, res.optim), args.out / "model.ckpt")
    write_history(res.history, args.out / "history.jsonl")
    for gen, ref in rep.captions:
        print(("ok   " if gen == ref else "MISS ") + gen)
    summary = {"steps": res.steps, "train_ce": rep.train_ce, "exact": rep.exact, "total": rep.total,
               "seconds": round(time.perf_counter() - start, 1)}
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))


if __name__ == "__main__":
    main()
