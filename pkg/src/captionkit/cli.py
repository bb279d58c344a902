"""``captionkit`` command line: synth, train, caption, eval, gradcheck, heatmap.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .data import load_image, load_manifest, preprocess_image, synth_fixture, synth_pair
from .decoding import beam_decode, greedy_decode
from .errors import CaptionKitError, DataError, UsageError
from .heatmap import render_heatmap, similarity_matrix
from .metrics import EvalPair, evaluate_corpus
from .model import ModelConfig, encode, init_params
from .tensor import grad_check
from .text import decode, encode as encode_text, normalize_caption
from .train import Example, TrainConfig, batch_loss, build_vocab, train, write_history

GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _echo(command: str, config: dict) -> None:
    print(json.dumps({"command": command, **config}, sort_keys=True, default=str), file=sys.stderr)


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"config not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return doc


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


# ---- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    _echo("synth", {"out": args.out, "pairs": args.pairs, "seed": args.seed})
    synth_fixture(args.out, args.pairs, args.seed)
    return 0


def _train_configs(args) -> tuple[ModelConfig, TrainConfig]:
    mcfg = ModelConfig.from_dict(_read_json(args.model_config))
    tdict = _read_json(args.train_config)
    for key in ("seed", "epochs", "lr", "batch_size", "val_fraction"):
        value = getattr(args, key)
        if value is not None:
            tdict[key] = value
    return mcfg, TrainConfig.from_dict(tdict)


def cmd_train(args) -> int:
    mcfg, tcfg = _train_configs(args)
    history_path = args.history or f"{args.out}.history.jsonl"
    _echo(
        "train",
        {"manifest": args.manifest, "out": args.out, "history": history_path,
         "model": mcfg.to_dict(), "train": tcfg.to_dict()},
    )
    manifest = load_manifest(args.manifest)
    result = train(manifest, mcfg, tcfg)
    ckpt = ckpt_io.Checkpoint(result.model_cfg, result.params, result.vocab, tcfg, result.optim)
    ckpt_io.save_checkpoint(ckpt, args.out)
    write_history(result.history, history_path)
    print(f"trained {result.steps} steps, best epoch {result.best_epoch}", file=sys.stderr)
    return 0


def cmd_caption(args) -> int:
    _echo("caption", {"ckpt": args.ckpt, "image": args.image, "beam": args.beam, "alpha": args.alpha})
    ck = ckpt_io.load_checkpoint(args.ckpt)
    cfg = ck.model_cfg
    memory = encode(ck.params, cfg, load_image(args.image, cfg.image_size, cfg.patch_size))
    if args.beam is None:
        ids = greedy_decode(ck.params, cfg, memory)
    else:
        ids = beam_decode(ck.params, cfg, memory, args.beam, args.alpha)
    print(decode(ck.vocab, ids))
    return 0


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None


def cmd_eval(args) -> int:
    _echo("eval", {"hyps": args.hyps, "refs": args.refs, "report": args.report})
    hyps = _read_lines(args.hyps)
    refs = [_read_lines(p) for p in args.refs]
    for path, lines in zip(args.refs, refs):
        if len(lines) != len(hyps):
            raise DataError(f"{path} has {len(lines)} lines, {args.hyps} has {len(hyps)}")
    if not hyps:
        raise DataError("no caption pairs to evaluate")
    pairs = [EvalPair.from_text(h, [r[i] for r in refs]) for i, h in enumerate(hyps)]
    report = json.dumps(evaluate_corpus(pairs).to_dict(), indent=2)
    if args.report:
        Path(args.report).write_text(report + "\n", encoding="utf-8")
    print(report)
    return 0


def gradcheck_problem(mcfg: ModelConfig, seed: int, n_examples: int = 2):
    """A small captioning batch built from fixture-style images and captions."""
    rng = np.random.default_rng(seed)
    samples = [synth_pair(rng) for _ in range(n_examples)]
    vocab, cfg = build_vocab([c for _, c in samples], mcfg)
    images = [preprocess_image(px, cfg.image_size, cfg.patch_size) for px, _ in samples]
    batch = [
        Example(i, tuple(encode_text(vocab, normalize_caption(c), cfg.max_caption_len)))
        for i, (_, c) in enumerate(samples)
    ]
    params = init_params(cfg, seed)

    def objective(tape):
        return batch_loss(params, cfg, images, batch, tape)[0]

    return objective, params, cfg


def cmd_gradcheck(args) -> int:
    if not 0.0 < args.h <= 1e-2:
        raise UsageError(f"--h must lie in (0, 1e-2], got {args.h}")
    mcfg = ModelConfig.from_dict(_read_json(args.model_config))
    _echo("gradcheck", {"model": mcfg.to_dict(), "seed": args.seed, "h": args.h, "coords": args.coords})
    objective, params, _ = gradcheck_problem(mcfg, args.seed)
    res = grad_check(objective, params, h=args.h, n_coords=args.coords, seed=args.seed)
    print(f"max_rel_error {res.max_rel_error:.3e} over {res.n_coords} coordinates")
    if res.max_rel_error < GRADCHECK_TOL:
        return 0
    print(f"gradcheck failed: worst coordinate {res.worst_name}{list(res.worst_index)}", file=sys.stderr)
    return 3


def cmd_heatmap(args) -> int:
    _echo("heatmap", {"ckpt": args.ckpt, "manifest": args.manifest, "out": args.out, "captions": args.captions})
    ck = ckpt_io.load_checkpoint(args.ckpt)
    cfg = ck.model_cfg
    manifest = load_manifest(args.manifest)
    images = [load_image(manifest.image_path(b.images[0]), cfg.image_size, cfg.patch_size) for b in manifest.bags]
    if args.captions == "reference":
        captions = [b.captions[0] for b in manifest.bags]
    else:
        captions = [decode(ck.vocab, greedy_decode(ck.params, cfg, encode(ck.params, cfg, img))) for img in images]
    m = similarity_matrix(ck.params, cfg, images, captions, ck.vocab)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out}: {e.strerror}") from None
    csv_path, ppm_path = render_heatmap(m, out / "sim")
    print(f"wrote {csv_path} and {ppm_path} ({m.shape[0]}x{m.shape[1]})", file=sys.stderr)
    return 0


# ---- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="captionkit", description=__doc__.splitlines()[0], formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic fixture dataset", formatter_class=fmt)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--pairs", type=_positive(int), default=8, help="number of image/caption bags")
    s.add_argument("--seed", type=int, default=0, help="PRNG seed")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a captioner", formatter_class=fmt)
    s.add_argument("--manifest", required=True, help="manifest.json path")
    s.add_argument("--model-config", help="model config JSON (defaults: toy config)")
    s.add_argument("--train-config", help="train config JSON (defaults: TrainConfig)")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--history", help="history JSONL path (default: <out>.history.jsonl)")
    s.add_argument("--seed", type=int, default=None, help="override train seed")
    s.add_argument("--epochs", type=_positive(int), default=None, help="override epochs")
    s.add_argument("--lr", type=float, default=None, help="override peak learning rate")
    s.add_argument("--batch-size", type=_positive(int), default=None, help="override batch size")
    s.add_argument("--val-fraction", type=float, default=None, help="override validation fraction")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("caption", help="caption one PPM image", formatter_class=fmt)
    s.add_argument("--ckpt", required=True, help="checkpoint path")
    s.add_argument("--image", required=True, help="P6 PPM image")
    s.add_argument("--beam", type=_positive(int), default=None, help="beam width (greedy if omitted)")
    s.add_argument("--alpha", type=float, default=0.7, help="length-normalisation exponent")
    s.set_defaults(func=cmd_caption)

    s = sub.add_parser("eval", help="score hypotheses against references", formatter_class=fmt)
    s.add_argument("--hyps", required=True, help="one hypothesis per line")
    s.add_argument("--refs", required=True, action="append", help="one reference per line; repeat for more")
    s.add_argument("--report", default=None, help="write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full model", formatter_class=fmt)
    s.add_argument("--model-config", help="model config JSON (defaults: toy config)")
    s.add_argument("--seed", type=int, default=0, help="PRNG seed")
    s.add_argument("--h", type=float, default=1e-3, help="central-difference step")
    s.add_argument("--coords", type=_positive(int), default=256, help="coordinates to probe")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("heatmap", help="image-to-caption similarity heatmap", formatter_class=fmt)
    s.add_argument("--ckpt", required=True, help="checkpoint path")
    s.add_argument("--manifest", required=True, help="manifest.json path")
    s.add_argument("--out", required=True, help="output directory for sim.csv and sim.ppm")
    s.add_argument("--captions", choices=("generated", "reference"), default="generated",
                   help="caption source for the columns")
    s.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CaptionKitError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except IndexError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
