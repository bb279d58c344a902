"""Image-to-caption similarity matrix and its CSV / PPM rendering."""

from __future__ import annotations

import csv
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import write_ppm
from .errors import DataError, DimensionError
from .model import ModelConfig, Parameters, pooled_image_vector
from .text import Vocabulary, encode, normalize_caption

GREEN = np.array([0, 200, 0], dtype=np.float64)
BLUE = np.array([0, 0, 200], dtype=np.float64)
CELL = 16


def caption_vector(params: Parameters, vocab: Vocabulary, cfg: ModelConfig, caption: str) -> np.ndarray:
    """Mean token embedding of a caption; BOS/EOS excluded unless nothing else remains."""
    ids = encode(vocab, normalize_caption(caption), cfg.max_caption_len)
    body = ids[1:-1] or ids
    return params["dec.tok"].data[body].mean(axis=0)


def _similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        warnings.warn("zero-norm vector in similarity; cosine taken as 0", stacklevel=3)
        return 50.0
    cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return 50.0 * (1.0 + cos)


def similarity_matrix(
    params: Parameters,
    cfg: ModelConfig,
    images: Sequence[np.ndarray],
    captions: Sequence[str],
    vocab: Vocabulary,
) -> np.ndarray:
    """``n_images x n_captions`` matrix of ``50 * (1 + cosine)`` scores in [0, 100]."""
    if not len(images) or not len(captions):
        raise DataError("similarity matrix needs at least one image and one caption")
    img_vecs = [pooled_image_vector(params, cfg, img) for img in images]
    cap_vecs = [caption_vector(params, vocab, cfg, c) for c in captions]
    if img_vecs[0].shape != cap_vecs[0].shape:
        raise DimensionError("image and caption vectors differ in width")
    return np.array([[_similarity(iv, cv) for cv in cap_vecs] for iv in img_vecs])


def heatmap_pixels(m: np.ndarray, cell: int = CELL) -> np.ndarray:
    """Green at the matrix minimum to blue at its maximum; constant matrices are all green."""
    lo, hi = float(m.min()), float(m.max())
    t = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
    colors = GREEN + t[..., None] * (BLUE - GREEN)
    block = np.rint(colors).astype(np.uint8)
    return np.repeat(np.repeat(block, cell, axis=0), cell, axis=1)


def write_csv(m: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([f"{x:.6f}" for x in row])


def read_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh)])


def render_heatmap(m: np.ndarray, out_path) -> tuple[Path, Path]:
    """Write ``<out_path>.csv`` and ``<out_path>.ppm``; returns both paths."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0 or not np.isfinite(m).all():
        raise DimensionError("heatmap needs a finite non-empty 2-D matrix")
    base = Path(out_path)
    csv_path, ppm_path = base.with_suffix(".csv"), base.with_suffix(".ppm")
    try:
        write_csv(m, csv_path)
        write_ppm(ppm_path, heatmap_pixels(m))
    except OSError as e:
        raise DataError(f"cannot write heatmap to {base}: {e.strerror}") from None
    return csv_path, ppm_path
