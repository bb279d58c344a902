"""Teacher-forced training: cross-entropy, AdamW, warmup+cosine schedule, early stopping."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Manifest, load_image
from .errors import EmptyDatasetError, NumericError, UsageError
from .model import ModelConfig, Parameters, copy_params, decode_forward, encode, init_params
from .tensor import Tape, Tensor
from .text import PAD, Vocabulary, encode as encode_text, normalize_caption, train_vocab

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.05
    patience: int = 3
    min_delta: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.lr < 0:
            raise UsageError("lr must be >= 0")
        if self.weight_decay < 0:
            raise UsageError("weight_decay must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise UsageError("betas must lie in (0, 1)")
        if self.eps <= 0:
            raise UsageError("eps must be > 0")
        if self.patience < 1:
            raise UsageError("patience must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise UsageError("warmup_fraction must lie in [0, 1)")
        if not 0 <= self.val_fraction < 1:
            raise UsageError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise UsageError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Parameters) -> "OptimState":
        return cls(
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
        )


# ---- loss, optimizer, schedule ----------------------------------------------


def cross_entropy_loss(logits: Tensor, targets: Sequence[int], tape: Tape | None = None) -> Tensor:
    """Mean token negative log-likelihood over non-PAD targets."""
    if tape is None:
        tape = Tape(record=False)
    return tape.cross_entropy(logits, targets, ignore_id=PAD)


def adamw_step(params: Parameters, state: OptimState, cfg: TrainConfig, lr_t: float) -> None:
    """One decoupled-weight-decay Adam update in place; zeroes the gradients."""
    for name in sorted(params):
        if not np.isfinite(params[name].grad).all():
            raise NumericError(f"non-finite gradient in {name}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in sorted(params):
        p = params[name]
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.weight_decay * p.data
        p.data -= lr_t * update
        p.zero_grad()


def warmup_steps(total_steps: int, cfg: TrainConfig) -> int:
    if cfg.warmup_fraction == 0:
        return 0
    return max(1, math.ceil(cfg.warmup_fraction * total_steps))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``cfg.lr``, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step < total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps})")
    w = warmup_steps(total_steps, cfg)
    if step < w:
        return cfg.lr * step / w
    progress = (step - w) / (total_steps - w)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def early_stop(val_history: Sequence[float], patience: int, min_delta: float = 0.0) -> bool:
    """True once ``patience`` consecutive epochs failed to beat the best by more than ``min_delta``."""
    if patience < 1:
        raise UsageError("patience must be >= 1")
    best = math.inf
    stale = 0
    for v in val_history:
        if v < best - min_delta:
            best = v
            stale = 0
        else:
            stale += 1
    return stale >= patience


# ---- dataset ----------------------------------------------------------------


@dataclass(frozen=True)
class Example:
    image: int  # index into the image cache
    ids: tuple[int, ...]

    @property
    def n_targets(self) -> int:
        return sum(1 for t in self.ids[1:] if t != PAD)


def split_bags(manifest: Manifest, val_fraction: float):
    n = len(manifest.bags)
    n_val = math.ceil(val_fraction * n) if val_fraction > 0 else 0
    return manifest.bags[: n - n_val], manifest.bags[n - n_val :]


def build_vocab(captions: Sequence[str], cfg: ModelConfig) -> tuple[Vocabulary, ModelConfig]:
    vocab = train_vocab([normalize_caption(c) for c in captions], cfg.vocab_size)
    if len(vocab) < 5:
        raise EmptyDatasetError("training captions contain no tokens")
    return vocab, dataclasses.replace(cfg, vocab_size=len(vocab))


def expand_bags(bags, manifest: Manifest, vocab: Vocabulary, cfg: ModelConfig, images: list, index: dict):
    """Cross product of images and captions within each bag."""
    out = []
    for bag in bags:
        for name in bag.images:
            path = manifest.image_path(name)
            if path not in index:
                index[path] = len(images)
                images.append(load_image(path, cfg.image_size, cfg.patch_size))
            for cap in bag.captions:
                ids = encode_text(vocab, normalize_caption(cap), cfg.max_caption_len)
                out.append(Example(index[path], tuple(ids)))
    return out


def example_loss(params, cfg, image: np.ndarray, ids: Sequence[int], tape: Tape) -> Tensor:
    memory = encode(params, cfg, image, tape)
    logits = decode_forward(params, cfg, memory, ids[:-1], tape)
    return cross_entropy_loss(logits, ids[1:], tape)


def batch_loss(params, cfg, images, batch: Sequence[Example], tape: Tape) -> tuple[Tensor, list[float]]:
    """Token-weighted mean loss over ``batch`` plus each example's own mean."""
    losses = [example_loss(params, cfg, images[ex.image], ex.ids, tape) for ex in batch]
    counts = [ex.n_targets for ex in batch]
    total = sum(counts)
    return tape.weighted_sum(losses, [c / total for c in counts]), [l.item() for l in losses]


def evaluate_loss(params, cfg, images, examples: Sequence[Example]) -> float:
    num = 0.0
    den = 0
    for ex in examples:
        num += example_loss(params, cfg, images[ex.image], ex.ids, Tape(record=False)).item() * ex.n_targets
        den += ex.n_targets
    return num / den


# ---- loop ---------------------------------------------------------------------


@dataclass
class TrainResult:
    params: Parameters
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    vocab: Vocabulary
    optim: OptimState
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0
    train_examples: list[Example] = field(default_factory=list)
    val_examples: list[Example] = field(default_factory=list)
    images: list[np.ndarray] = field(default_factory=list)


def train(manifest: Manifest, model_cfg: ModelConfig, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Fit a captioner; returns the parameters of the best monitored epoch.

    The monitored quantity is validation loss when a split exists, otherwise
    the epoch's training loss.
    """
    train_bags, val_bags = split_bags(manifest, cfg.val_fraction)
    if not train_bags:
        raise EmptyDatasetError("no training bags after the validation split")
    vocab, mcfg = build_vocab([c for b in train_bags for c in b.captions], model_cfg)
    images: list[np.ndarray] = []
    index: dict = {}
    train_ex = expand_bags(train_bags, manifest, vocab, mcfg, images, index)
    val_ex = expand_bags(val_bags, manifest, vocab, mcfg, images, index)
    if not train_ex:
        raise EmptyDatasetError("no training examples")

    params = init_params(mcfg, cfg.seed)
    state = OptimState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(train_ex)
    per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * per_epoch

    history: list[dict] = []
    monitor: list[float] = []
    best = (math.inf, 0, copy_params(params), OptimState({}, {}, 0))
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        seen = np.zeros(n)
        lr = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = Tape()
            loss, per_ex = batch_loss(params, mcfg, images, [train_ex[i] for i in idx], tape)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at step {step}")
            tape.backward(loss)
            lr = lr_at(step, total_steps, cfg)
            adamw_step(params, state, cfg, lr)
            for i, value in zip(idx, per_ex):
                seen[i] = value
            step += 1
        counts = np.array([ex.n_targets for ex in train_ex], dtype=np.float64)
        train_loss = float(np.dot(seen, counts) / counts.sum())
        val_loss = evaluate_loss(params, mcfg, images, val_ex) if val_ex else None
        record = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
        history.append(record)
        log.info("epoch %d train %.6f val %s lr %.3g", epoch, train_loss, val_loss, lr)
        if on_epoch is not None:
            on_epoch(record)
        watched = val_loss if val_loss is not None else train_loss
        monitor.append(watched)
        if watched < best[0]:
            best = (watched, epoch, copy_params(params), _copy_state(state))
        if early_stop(monitor, cfg.patience, cfg.min_delta):
            log.info("early stop after epoch %d", epoch)
            break

    return TrainResult(
        params=best[2],
        model_cfg=mcfg,
        train_cfg=cfg,
        vocab=vocab,
        optim=best[3],
        history=history,
        best_epoch=best[1],
        steps=step,
        train_examples=train_ex,
        val_examples=val_ex,
        images=images,
    )


def _copy_state(s: OptimState) -> OptimState:
    return OptimState({k: v.copy() for k, v in s.m.items()}, {k: v.copy() for k, v in s.v.items()}, s.t)


def write_history(history: Sequence[dict], path) -> None:
    lines = [json.dumps(rec) for rec in history]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
