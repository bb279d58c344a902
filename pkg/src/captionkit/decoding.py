"""Greedy and beam-search caption generation.

Both searches run over a ``logprob_fn(prefix) -> log-probabilities`` callable,
so they can be exercised on hand-built distributions as well as a model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ModelConfig, Parameters, decode_forward
from .tensor import Tensor
from .text import BOS, EOS

LogProbFn = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    log_prob: float
    finished: bool

    def score(self, alpha: float) -> float:
        return self.log_prob / (len(self.ids) - 1) ** alpha


def model_logprob_fn(params: Parameters, cfg: ModelConfig, memory: Tensor) -> LogProbFn:
    def fn(prefix):
        row = decode_forward(params, cfg, memory, prefix).data[-1]
        m = row.max()
        return row - (m + np.log(np.exp(row - m).sum()))

    return fn


def greedy_search(logprob_fn: LogProbFn, max_len: int) -> list[int]:
    ids = [BOS]
    while len(ids) < max_len:
        nxt = int(np.argmax(logprob_fn(ids)))  # first maximum = lowest id
        ids.append(nxt)
        if nxt == EOS:
            break
    return ids


def beam_search(logprob_fn: LogProbFn, max_len: int, beam: int, alpha: float = 0.7) -> list[int]:
    """Beam search; finished hypotheses ranked by ``log_prob / gen_len**alpha``.

    Each step keeps the ``beam`` best expansions by cumulative log-probability
    (ties to the lexicographically smaller sequence).  Kept expansions that end
    in EOS or reach ``max_len`` leave the beam for the finished pool.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    alive = [Hypothesis((BOS,), 0.0, False)]
    finished: list[Hypothesis] = []
    while alive:
        cands = []
        for h in alive:
            lp = logprob_fn(h.ids)
            for tok in range(len(lp)):
                ids = h.ids + (tok,)
                cands.append(Hypothesis(ids, h.log_prob + float(lp[tok]), tok == EOS or len(ids) >= max_len))
        cands.sort(key=lambda h: (-h.log_prob, h.ids))
        alive = []
        for h in cands[:beam]:
            (finished if h.finished else alive).append(h)
    best = min(finished, key=lambda h: (-h.score(alpha), h.ids))
    return list(best.ids)


def greedy_decode(params: Parameters, cfg: ModelConfig, memory: Tensor) -> list[int]:
    return greedy_search(model_logprob_fn(params, cfg, memory), cfg.max_caption_len)


def beam_decode(params: Parameters, cfg: ModelConfig, memory: Tensor, beam: int, alpha: float = 0.7) -> list[int]:
    return beam_search(model_logprob_fn(params, cfg, memory), cfg.max_caption_len, beam, alpha)
