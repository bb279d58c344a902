"""Dense float64 tensors with a recording tape and hand-written backward rules.

Every primitive lives on :class:`Tape`.  A tape records one closure per
primitive application; :meth:`Tape.backward` replays them in reverse order
and accumulates into ``Tensor.grad``.  Leaves (parameters, inputs) are plain
tensors that belong to no tape, so one parameter table can feed any number
of independent tapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError

MASK_VALUE = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("data", "_grad", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self._grad = None
        self.name = name

    @classmethod
    def zeros(cls, *shape: int, name: str | None = None) -> "Tensor":
        return cls(np.zeros(shape), name=name)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        # allocated on first access; always same shape as data
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.array(value, dtype=np.float64).reshape(self.data.shape)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t._grad is None:
        t._grad = np.array(g, dtype=np.float64).reshape(t.data.shape)
    else:
        t._grad += g


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")


def _require_2d(t: Tensor, op: str) -> None:
    if t.data.ndim != 2:
        raise DimensionError(f"{op} expects a 2-D tensor, got shape {t.shape}")


class Tape:
    """Records primitive applications for one backward pass.

    ``Tape(record=False)`` computes forward values only; it is what decoding
    and finite-difference probes use.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._ops: list[Callable[[], None]] = []
        self._done = False

    def __len__(self) -> int:
        return len(self._ops)

    def _out(self, data: np.ndarray, op: str, backward=None) -> Tensor:
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out._grad = None
        out.name = None
        if self.record and backward is not None:
            self._ops.append(lambda: backward(out))
        return out

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        if not self.record:
            raise UsageError("backward on a non-recording tape")
        if self._done:
            raise UsageError("backward already ran on this tape; call reset() first")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        _accum(loss, np.full(loss.shape, seed))
        for fn in reversed(self._ops):
            fn()
        self._done = True

    def reset(self) -> None:
        self._ops.clear()
        self._done = False

    # ---- primitives -------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _require_2d(a, "matmul")
        _require_2d(b, "matmul")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")

        def backward(out):
            g = out._grad
            if g is None:
                return
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

        return self._out(a.data @ b.data, "matmul", backward)

    def transpose(self, a: Tensor) -> Tensor:
        _require_2d(a, "transpose")

        def backward(out):
            if out._grad is not None:
                _accum(a, out._grad.T)

        return self._out(np.ascontiguousarray(a.data.T), "transpose", backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")

        def backward(out):
            if out._grad is not None:
                _accum(a, out._grad)
                _accum(b, out._grad)

        return self._out(a.data + b.data, "add", backward)

    def add_row(self, a: Tensor, bias: Tensor) -> Tensor:
        """``a[m, n] + bias[n]`` broadcast over rows."""
        _require_2d(a, "add_row")
        if bias.shape != (a.shape[1],):
            raise DimensionError(f"add_row bias {bias.shape} does not match {a.shape}")

        def backward(out):
            if out._grad is not None:
                _accum(a, out._grad)
                _accum(bias, out._grad.sum(axis=0))

        return self._out(a.data + bias.data, "add_row", backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        def backward(out):
            if out._grad is not None:
                _accum(a, c * out._grad)

        return self._out(a.data * c, "scale", backward)

    def sum(self, a: Tensor) -> Tensor:
        def backward(out):
            if out._grad is not None:
                _accum(a, np.full(a.shape, out._grad[0]))

        return self._out(np.array([a.data.sum()]), "sum", backward)

    def mean_rows(self, a: Tensor) -> Tensor:
        """Column means of ``a[m, n]`` as a ``1 x n`` tensor."""
        _require_2d(a, "mean_rows")
        m = a.shape[0]
        if m == 0:
            raise DimensionError("mean_rows over zero rows")

        def backward(out):
            if out._grad is not None:
                _accum(a, np.broadcast_to(out._grad / m, a.shape))

        return self._out(a.data.mean(axis=0, keepdims=True), "mean_rows", backward)

    def weighted_sum(self, scalars: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
        if len(scalars) != len(weights) or not scalars:
            raise DimensionError("weighted_sum needs matching non-empty inputs")
        total = 0.0
        for s, w in zip(scalars, weights):
            total += w * s.item()

        def backward(out):
            if out._grad is None:
                return
            for s, w in zip(scalars, weights):
                _accum(s, w * out._grad)

        return self._out(np.array([total]), "weighted_sum", backward)

    def gelu(self, x: Tensor) -> Tensor:
        xd = x.data
        inner = _GELU_C * (xd + 0.044715 * xd**3)
        th = np.tanh(inner)
        y = 0.5 * xd * (1.0 + th)

        def backward(out):
            if out._grad is None:
                return
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
            dy = 0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th**2) * dinner
            _accum(x, out._grad * dy)

        return self._out(y, "gelu", backward)

    def softmax_rows(self, x: Tensor) -> Tensor:
        _require_2d(x, "softmax_rows")
        p = _softmax(x.data)

        def backward(out):
            g = out._grad
            if g is None:
                return
            _accum(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))

        return self._out(p, "softmax_rows", backward)

    def layer_norm(self, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
        if eps <= 0:
            raise UsageError("layer_norm eps must be positive")
        d = x.shape[-1]
        if gamma.shape != (d,) or beta.shape != (d,):
            raise DimensionError(f"layer_norm params must have shape ({d},)")
        mu = x.data.mean(axis=-1, keepdims=True)
        xc = x.data - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * inv
        y = xhat * gamma.data + beta.data

        def backward(out):
            g = out._grad
            if g is None:
                return
            lead = tuple(range(g.ndim - 1))
            _accum(gamma, (g * xhat).sum(axis=lead))
            _accum(beta, g.sum(axis=lead))
            gx = g * gamma.data
            dx = inv * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(x, dx)

        return self._out(y, "layer_norm", backward)

    def embedding(self, table: Tensor, ids: Sequence[int]) -> Tensor:
        _require_2d(table, "embedding")
        idx = np.asarray(list(ids), dtype=np.int64)
        vocab, d = table.shape
        if idx.size and (idx.min() < 0 or idx.max() >= vocab):
            raise IndexError(f"token id out of range for table of {vocab} rows")

        def backward(out):
            if out._grad is None:
                return
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out._grad)
            _accum(table, g)

        return self._out(table.data[idx].reshape(idx.size, d), "embedding", backward)

    def attention(
        self,
        q: Tensor,
        k: Tensor,
        v: Tensor,
        n_heads: int = 1,
        causal: bool = False,
    ) -> Tensor:
        """Multi-head scaled dot-product attention on ``[L, d]`` inputs.

        Heads split the last axis into ``n_heads`` contiguous slices; scores
        are divided by the square root of the per-head width.
        """
        for t in (q, k, v):
            _require_2d(t, "attention")
        lq, d = q.shape
        lk = k.shape[0]
        if k.shape[1] != d or v.shape != k.shape:
            raise DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
        if d % n_heads:
            raise DimensionError(f"width {d} not divisible by {n_heads} heads")
        if causal and lq != lk:
            raise DimensionError("causal attention needs equal query and key lengths")
        dh = d // n_heads
        scale = 1.0 / math.sqrt(dh)

        qh = q.data.reshape(lq, n_heads, dh).transpose(1, 0, 2)
        kh = k.data.reshape(lk, n_heads, dh).transpose(1, 0, 2)
        vh = v.data.reshape(lk, n_heads, dh).transpose(1, 0, 2)
        scores = qh @ kh.transpose(0, 2, 1) * scale
        if causal:
            scores = scores + causal_mask(lq)
        p = _softmax(scores)
        o = (p @ vh).transpose(1, 0, 2).reshape(lq, d)

        def backward(out):
            g = out._grad
            if g is None:
                return
            go = g.reshape(lq, n_heads, dh).transpose(1, 0, 2)
            dp = go @ vh.transpose(0, 2, 1)
            dv = p.transpose(0, 2, 1) @ go
            ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
            dq = ds @ kh
            dk = ds.transpose(0, 2, 1) @ qh
            _accum(q, dq.transpose(1, 0, 2).reshape(lq, d))
            _accum(k, dk.transpose(1, 0, 2).reshape(lk, d))
            _accum(v, dv.transpose(1, 0, 2).reshape(lk, d))

        return self._out(np.ascontiguousarray(o), "attention", backward)

    def cross_entropy(self, logits: Tensor, targets: Sequence[int], ignore_id: int = 0) -> Tensor:
        """Mean of ``-log softmax(logits)[t, target_t]`` over non-ignored rows."""
        _require_2d(logits, "cross_entropy")
        tgt = np.asarray(list(targets), dtype=np.int64)
        n, vocab = logits.shape
        if tgt.shape != (n,):
            raise DimensionError(f"{tgt.size} targets for {n} logit rows")
        if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
            raise IndexError("target id out of range")
        keep = tgt != ignore_id
        count = int(keep.sum())
        if count == 0:
            raise UsageError("degenerate batch: every target is padding")
        lse = _logsumexp(logits.data)
        rows = np.nonzero(keep)[0]
        nll = lse[rows] - logits.data[rows, tgt[rows]]
        loss = nll.sum() / count

        def backward(out):
            if out._grad is None:
                return
            grad = np.zeros_like(logits.data)
            grad[rows] = np.exp(logits.data[rows] - lse[rows, None])
            grad[rows, tgt[rows]] -= 1.0
            _accum(logits, grad * (out._grad[0] / count))

        return self._out(np.array([loss]), "cross_entropy", backward)


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), MASK_VALUE), k=1)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=-1))


# ---- finite-difference checking --------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_name: str | None
    worst_index: tuple[int, ...] | None
    n_coords: int


def grad_check(
    f: Callable[[Tape], Tensor],
    theta: Mapping[str, Tensor],
    h: float = 1e-3,
    n_coords: int = 256,
    min_per_tensor: int = 2,
    seed: int = 0,
) -> GradCheckResult:
    """Compare tape gradients of ``f`` with central differences.

    ``f`` builds a scalar on the tape it is given, reading parameter values
    from ``theta``.  At least ``min_per_tensor`` coordinates are drawn from
    every tensor, then the remainder uniformly over all coordinates.
    """
    if not 0.0 < h <= 1e-2:
        raise UsageError(f"step h={h} outside (0, 1e-2]")
    for t in theta.values():
        t.zero_grad()
    tape = Tape()
    loss = f(tape)
    if not np.isfinite(loss.data).all():
        raise NumericError("objective is not finite")
    tape.backward(loss)
    analytic = {name: t.grad.copy() for name, t in theta.items()}

    coords = _sample_coords(theta, n_coords, min_per_tensor, seed)

    def probe() -> float:
        val = f(Tape(record=False)).item()
        if not math.isfinite(val):
            raise NumericError("objective is not finite under perturbation")
        return val

    worst = (0.0, None, None)
    for name, idx in coords:
        t = theta[name]
        orig = t.data[idx]
        t.data[idx] = orig + h
        fp = probe()
        t.data[idx] = orig - h
        fm = probe()
        t.data[idx] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[name][idx]
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        if rel > worst[0] or worst[1] is None:
            worst = (rel, name, idx)
    for t in theta.values():
        t.zero_grad()
    return GradCheckResult(float(worst[0]), worst[1], worst[2], len(coords))


def _sample_coords(theta, n_coords, min_per_tensor, seed):
    rng = np.random.default_rng(seed)
    names = sorted(theta)
    chosen: list[tuple[str, tuple[int, ...]]] = []
    seen = set()
    for name in names:
        shape = theta[name].shape
        size = int(np.prod(shape))
        for flat in rng.choice(size, size=min(size, min_per_tensor), replace=False):
            key = (name, int(flat))
            seen.add(key)
            chosen.append((name, np.unravel_index(int(flat), shape)))
    sizes = np.array([theta[n].data.size for n in names])
    total = int(sizes.sum())
    budget = min(n_coords, total) - len(chosen)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    while budget > 0:
        g = int(rng.integers(total))
        i = int(np.searchsorted(offsets, g, side="right")) - 1
        key = (names[i], g - int(offsets[i]))
        if key in seen:
            continue
        seen.add(key)
        chosen.append((names[i], np.unravel_index(key[1], theta[names[i]].shape)))
        budget -= 1
    return [(n, tuple(int(j) for j in idx)) for n, idx in chosen]
