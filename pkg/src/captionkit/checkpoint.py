"""Binary checkpoint: ``CFCK`` magic, version, JSON header, float32 tensor table.

Layout (little-endian)::

    b"CFCK" | u32 version=1 | u64 json_len | json bytes
    per tensor, sorted by name:
        u32 name_len | name bytes | u32 rank | u64 dims[rank] | f32 data

The JSON header holds the model config, the optional train config, the
vocabulary and the optimizer step.  Optimizer moments, when present, are
stored as ``optim.m.<name>`` / ``optim.v.<name>`` tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .model import ModelConfig, Parameters, param_shapes
from .tensor import Tensor
from .text import Vocabulary
from .train import OptimState, TrainConfig

MAGIC = b"CFCK"
VERSION = 1


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: Parameters
    vocab: Vocabulary
    train_cfg: TrainConfig | None = None
    optim: OptimState | None = None


def _tensor_table(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    table = {name: t.data for name, t in ckpt.params.items()}
    if ckpt.optim is not None:
        for name in ckpt.params:
            table[f"optim.m.{name}"] = ckpt.optim.m[name]
            table[f"optim.v.{name}"] = ckpt.optim.v[name]
    return table


def dumps(ckpt: Checkpoint) -> bytes:
    header = {
        "model": ckpt.model_cfg.to_dict(),
        "train": ckpt.train_cfg.to_dict() if ckpt.train_cfg else None,
        "vocab": list(ckpt.vocab.id_to_token),
        "optim_step": ckpt.optim.t if ckpt.optim is not None else None,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(blob)), blob]
    for name, arr in sorted(_tensor_table(ckpt).items()):
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        Path(path).write_bytes(dumps(ckpt))
    except OSError as e:
        raise DataError(f"cannot write checkpoint {path}: {e.strerror}") from None


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {field}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, field: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def loads(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"bad version {version}")
    (n,) = r.unpack("<Q", "config length")
    try:
        header = json.loads(r.take(n, "config").decode("utf-8"))
        model_cfg = ModelConfig.from_dict(header["model"])
        train_cfg = TrainConfig.from_dict(header["train"]) if header.get("train") else None
        vocab = Vocabulary(header["vocab"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"bad config: {e}") from None
    if len(vocab) != model_cfg.vocab_size:
        raise FormatError(f"bad config: vocabulary of {len(vocab)} for vocab_size {model_cfg.vocab_size}")

    tensors = {}
    while r.pos < len(buf):
        (ln,) = r.unpack("<I", "name length")
        name = r.take(ln, "name").decode("utf-8", errors="replace")
        (rank,) = r.unpack("<I", f"rank of {name}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * count, f"data of {name}"), dtype="<f4")
        tensors[name] = data.astype(np.float64).reshape(dims)

    expected = param_shapes(model_cfg)
    step = header.get("optim_step")
    if step is not None:
        for name, shape in list(expected.items()):
            expected[f"optim.m.{name}"] = shape
            expected[f"optim.v.{name}"] = shape
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise FormatError(f"bad tensor table: missing {missing[:3]} unexpected {extra[:3]}")
    for name, shape in expected.items():
        if tensors[name].shape != tuple(shape):
            raise FormatError(f"bad shape for {name}: {tensors[name].shape} != {tuple(shape)}")

    params = {k: Tensor(tensors[k], name=k) for k in param_shapes(model_cfg)}
    optim = None
    if step is not None:
        optim = OptimState(
            {k: tensors[f"optim.m.{k}"].copy() for k in params},
            {k: tensors[f"optim.v.{k}"].copy() for k in params},
            int(step),
        )
    return Checkpoint(model_cfg, params, vocab, train_cfg, optim)


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e.strerror}") from None
    return loads(buf)
