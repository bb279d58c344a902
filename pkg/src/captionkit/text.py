"""Caption cleaning, word-level vocabulary, and id encoding."""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_PUNCT = re.compile(r"([.,;:!?()])")
_NON_ASCII = re.compile(r"[^\x00-\x7f]")


def normalize_caption(raw: str) -> str:
    s = _NON_ASCII.sub("", raw).lower()
    s = _PUNCT.sub(r" \1 ", s)
    return " ".join(s.split())


def tokenize(text: str) -> list[str]:
    return normalize_caption(text).split()


class Vocabulary:
    """Immutable id <-> token map. Ids 0-3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:4] != RESERVED:
            raise ValueError("vocabulary must start with the four reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def __repr__(self) -> str:
        return f"Vocabulary({len(self)} tokens)"

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def train_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    if max_size < 5:
        raise ValueError(f"max_size must be >= 5, got {max_size}")
    counts: Counter[str] = Counter()
    first: dict[str, int] = {}
    for line in corpus:
        for tok in line.split():
            if tok in RESERVED:
                continue
            counts[tok] += 1
            first.setdefault(tok, len(first))
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return Vocabulary(RESERVED + tuple(ranked[: max_size - len(RESERVED)]))


def encode(vocab: Vocabulary, s: str, max_len: int) -> list[int]:
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    ids = [vocab.token_to_id.get(tok, UNK) for tok in s.split()]
    return [BOS] + ids[: max_len - 2] + [EOS]


def decode(vocab: Vocabulary, ids: Iterable[int]) -> str:
    words = []
    n = len(vocab)
    for i in ids:
        if not 0 <= i < n:
            raise IndexError(f"token id {i} outside vocabulary of {n}")
        if i in (PAD, BOS, EOS):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)
