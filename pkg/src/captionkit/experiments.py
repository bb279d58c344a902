"""Reusable experiment runs shared by ``scripts/`` and the acceptance suite."""

from __future__ import annotations

import dataclasses
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import synth_fixture
from .decoding import greedy_decode
from .heatmap import similarity_matrix
from .model import ModelConfig, encode
from .text import decode
from .train import TrainConfig, TrainResult, evaluate_loss, train

OVERFIT_TRAIN = TrainConfig(epochs=500, lr=2e-3, batch_size=8, seed=0)
ABLATION_TRAIN = TrainConfig(epochs=60, lr=2e-3, batch_size=4, patience=60, val_fraction=0.25)


@dataclass
class OverfitReport:
    result: TrainResult
    train_ce: float
    exact: int
    total: int
    captions: list[tuple[str, str]]  # (generated, reference)


def overfit_run(fixture_dir, pairs: int = 8, seed: int = 7, model_cfg: ModelConfig | None = None,
                train_cfg: TrainConfig = OVERFIT_TRAIN) -> OverfitReport:
    manifest = synth_fixture(fixture_dir, pairs=pairs, seed=seed)
    res = train(manifest, model_cfg or ModelConfig(), train_cfg)
    return summarize_overfit(res)


def summarize_overfit(res: TrainResult) -> OverfitReport:
    ce = evaluate_loss(res.params, res.model_cfg, res.images, res.train_examples)
    caps = []
    for ex in res.train_examples:
        memory = encode(res.params, res.model_cfg, res.images[ex.image])
        caps.append((decode(res.vocab, greedy_decode(res.params, res.model_cfg, memory)), decode(res.vocab, ex.ids)))
    exact = sum(g == r for g, r in caps)
    return OverfitReport(res, ce, exact, len(caps), caps)


def diagonal_hits(res: TrainResult) -> tuple[int, np.ndarray]:
    """Rows of the image x generated-caption similarity matrix whose argmax is the diagonal."""
    images, captions = [], []
    for ex in res.train_examples:
        img = res.images[ex.image]
        images.append(img)
        ids = greedy_decode(res.params, res.model_cfg, encode(res.params, res.model_cfg, img))
        captions.append(decode(res.vocab, ids))
    m = similarity_matrix(res.params, res.model_cfg, images, captions, res.vocab)
    return int(np.sum(np.argmax(m, axis=1) == np.arange(len(images)))), m


@dataclass
class AblationRow:
    seed: int
    vit_val: float
    meanpool_val: float

    @property
    def vit_wins(self) -> bool:
        return self.vit_val <= self.meanpool_val


def ablation_run(seed: int, pairs: int = 16, train_cfg: TrainConfig = ABLATION_TRAIN,
                 model_cfg: ModelConfig | None = None) -> AblationRow:
    """Held-out val CE for vit and meanpool encoders trained on the same fixture and budget."""
    base = model_cfg or ModelConfig()
    cfg = dataclasses.replace(train_cfg, seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        manifest = synth_fixture(Path(tmp), pairs=pairs, seed=seed)
        vals = {}
        for kind in ("vit", "meanpool"):
            res = train(manifest, dataclasses.replace(base, encoder_kind=kind), cfg)
            vals[kind] = evaluate_loss(res.params, res.model_cfg, res.images, res.val_examples)
    return AblationRow(seed, vals["vit"], vals["meanpool"])


__all__ = [
    "ABLATION_TRAIN",
    "OVERFIT_TRAIN",
    "AblationRow",
    "OverfitReport",
    "ablation_run",
    "diagonal_hits",
    "overfit_run",
    "summarize_overfit",
]
