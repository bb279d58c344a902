"""Caption metrics: corpus/sentence BLEU, ROUGE-N/L, exact-match METEOR, CIDEr."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from ..errors import UndefinedMetricError
from ..text import tokenize

METEOR_EXACT_LIMIT = 20


@dataclass(frozen=True)
class EvalPair:
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.references:
            raise ValueError("an eval pair needs at least one reference")

    @classmethod
    def from_text(cls, candidate: str, references: Iterable[str]) -> "EvalPair":
        return cls(tuple(tokenize(candidate)), tuple(tuple(tokenize(r)) for r in references))


def as_pairs(pairs) -> list[EvalPair]:
    out = []
    for p in pairs:
        if isinstance(p, EvalPair):
            out.append(p)
        else:
            cand, refs = p
            out.append(EvalPair(tuple(cand), tuple(tuple(r) for r in refs)))
    return out


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    tokens = tuple(tokens)
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def _max_ref_counts(refs, n) -> Counter:
    best: Counter = Counter()
    for r in refs:
        best |= ngram_counts(r, n)
    return best


def _clipped_matches(cand_counts: Counter, ref_counts: Counter) -> int:
    return sum(min(c, ref_counts[g]) for g, c in cand_counts.items())


def _closest_ref_len(c: int, refs) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


# ---- BLEU ----------------------------------------------------------------------


@dataclass(frozen=True)
class BleuScore:
    precisions: tuple[float, ...]  # P_1 .. P_N
    brevity_penalty: float
    scores: tuple[float, ...]  # BLEU-1 .. BLEU-N, each with uniform weights 1/k


def _combine(precisions: Sequence[float], bp: float) -> tuple[float, ...]:
    out = []
    for k in range(1, len(precisions) + 1):
        ps = precisions[:k]
        if min(ps) <= 0:
            out.append(0.0)
        else:
            out.append(bp * math.exp(sum(math.log(p) for p in ps) / k))
    return tuple(out)


def corpus_bleu(pairs, max_n: int = 4) -> BleuScore:
    """Unsmoothed corpus BLEU with clipped counts and a corpus brevity penalty."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must lie in [1, 4]")
    pairs = as_pairs(pairs)
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for p in pairs:
        c += len(p.candidate)
        r += _closest_ref_len(len(p.candidate), p.references)
        for n in range(1, max_n + 1):
            cc = ngram_counts(p.candidate, n)
            matches[n - 1] += _clipped_matches(cc, _max_ref_counts(p.references, n))
            totals[n - 1] += sum(cc.values())
    if c == 0:
        raise UndefinedMetricError("BLEU is undefined for an empty candidate corpus")
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    bp = min(1.0, math.exp(1.0 - r / c))
    return BleuScore(precisions, bp, _combine(precisions, bp))


def sentence_bleu(pair, max_n: int = 4) -> BleuScore:
    """Per-pair BLEU; orders n >= 2 with no clipped match get add-one smoothing."""
    (p,) = as_pairs([pair])
    c = len(p.candidate)
    if c == 0:
        return BleuScore((0.0,) * max_n, 0.0, (0.0,) * max_n)
    precisions = []
    for n in range(1, max_n + 1):
        cc = ngram_counts(p.candidate, n)
        m = _clipped_matches(cc, _max_ref_counts(p.references, n))
        t = sum(cc.values())
        if n >= 2 and m == 0:
            m, t = m + 1, t + 1
        precisions.append(m / t if t else 0.0)
    bp = min(1.0, math.exp(1.0 - _closest_ref_len(c, p.references) / c))
    return BleuScore(tuple(precisions), bp, _combine(precisions, bp))


# ---- ROUGE ---------------------------------------------------------------------


def rouge_n(pairs, n: int) -> float:
    """Recall of clipped n-gram matches against each pair's best reference."""
    if n not in (1, 2):
        raise ValueError("rouge_n supports n in {1, 2}")
    num = den = 0
    for i, p in enumerate(as_pairs(pairs)):
        cc = ngram_counts(p.candidate, n)
        best = None
        for ref in p.references:
            rc = ngram_counts(ref, n)
            total = sum(rc.values())
            if total == 0:
                continue
            hit = _clipped_matches(cc, rc)
            # compare hit/total ratios exactly by cross-multiplication
            if best is None or hit * best[1] > best[0] * total:
                best = (hit, total)
        if best is None:
            warnings.warn(f"pair {i}: every reference is shorter than {n}; skipped", stacklevel=2)
            continue
        num += best[0]
        den += best[1]
    return num / den if den else 0.0


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(pairs) -> float:
    num = den = 0
    for p in as_pairs(pairs):
        best_lcs, best_len = -1, 0
        for ref in p.references:
            lcs = lcs_length(p.candidate, ref)
            if lcs > best_lcs:
                best_lcs, best_len = lcs, len(ref)
        num += best_lcs
        den += best_len
    return num / den if den else 0.0


# ---- METEOR --------------------------------------------------------------------


def _min_chunks_exact(cand: tuple, ref: tuple) -> int:
    """Fewest chunks over all maximum-cardinality exact alignments."""
    cc, rc = Counter(cand), Counter(ref)
    budget = {w: cc[w] - min(cc[w], rc[w]) for w in cc}
    positions = {w: [j for j, x in enumerate(ref) if x == w] for w in rc}
    prefix = [Counter(cand[:i]) for i in range(len(cand) + 1)]

    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev: int) -> float:
        if i == len(cand):
            return 0
        w = cand[i]
        matched_w = sum(1 for j in positions.get(w, ()) if used >> j & 1)
        out = math.inf
        if prefix[i][w] - matched_w < budget[w]:
            out = best(i + 1, used, -1)
        for j in positions.get(w, ()):
            if not used >> j & 1:
                step = 0 if prev >= 0 and j == prev + 1 else 1
                out = min(out, step + best(i + 1, used | 1 << j, j))
        return out

    return int(best(0, 0, -1))


def _min_chunks_greedy(cand: tuple, ref: tuple) -> int:
    free = Counter()
    slots: dict[str, list[int]] = {}
    for j, x in enumerate(ref):
        slots.setdefault(x, []).append(j)
        free[x] += 1
    used = set()
    chunks = 0
    prev = -2
    for w in cand:
        options = [j for j in slots.get(w, ()) if j not in used]
        if not options:
            prev = -2
            continue
        j = prev + 1 if prev + 1 in options else options[0]
        if j != prev + 1:
            chunks += 1
        used.add(j)
        prev = j
    return chunks


def meteor_pair(cand: Sequence[str], ref: Sequence[str]) -> float:
    cand, ref = tuple(cand), tuple(ref)
    cc, rc = Counter(cand), Counter(ref)
    m = sum(min(c, rc[w]) for w, c in cc.items())
    if m == 0:
        return 0.0
    chunks = _min_chunks_exact(cand, ref) if m <= METEOR_EXACT_LIMIT else _min_chunks_greedy(cand, ref)
    precision = m / len(cand)
    recall = m / len(ref)
    fmean = 10 * precision * recall / (recall + 9 * precision)
    return fmean * (1.0 - 0.5 * (chunks / m) ** 3)


def meteor(pairs) -> float:
    pairs = as_pairs(pairs)
    if not pairs:
        raise UndefinedMetricError("METEOR over zero pairs")
    return sum(max(meteor_pair(p.candidate, r) for r in p.references) for p in pairs) / len(pairs)


# ---- CIDEr ---------------------------------------------------------------------


def _tfidf(counts: Counter, idf: dict, default_idf: float) -> dict:
    return {g: c * idf.get(g, default_idf) for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_per_n(pairs, max_n: int = 4) -> tuple[float, ...]:
    pairs = as_pairs(pairs)
    big_m = len(pairs)
    if big_m == 0:
        raise UndefinedMetricError("CIDEr over zero pairs")
    out = []
    for n in range(1, max_n + 1):
        df: Counter = Counter()
        for p in pairs:
            df.update(set().union(*(ngram_counts(r, n) for r in p.references)))
        idf = {g: math.log(big_m / d) for g, d in df.items()}
        unseen = math.log(big_m)
        total = 0.0
        for p in pairs:
            cv = _tfidf(ngram_counts(p.candidate, n), idf, unseen)
            sims = [_cosine(cv, _tfidf(ngram_counts(r, n), idf, unseen)) for r in p.references]
            total += sum(sims) / len(sims)
        out.append(total / big_m)
    return tuple(out)


def cider(pairs) -> float:
    per_n = cider_per_n(pairs)
    return 10.0 * sum(per_n) / len(per_n)


# ---- report --------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge1: float
    rouge2: float
    rougeL: float
    cider: float
    n_pairs: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_corpus(pairs) -> EvalReport:
    pairs = as_pairs(pairs)
    if not pairs:
        raise UndefinedMetricError("evaluation needs at least one pair")
    b = corpus_bleu(pairs, 4).scores
    return EvalReport(
        bleu1=b[0],
        bleu2=b[1],
        bleu3=b[2],
        bleu4=b[3],
        meteor=meteor(pairs),
        rouge1=rouge_n(pairs, 1),
        rouge2=rouge_n(pairs, 2),
        rougeL=rouge_l(pairs),
        cider=cider(pairs),
        n_pairs=len(pairs),
    )
