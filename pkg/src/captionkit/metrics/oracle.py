"""Brute-force reference implementations used to cross-check ``scores``.

Deliberately naive: explicit enumeration, list scans, no shared helpers with
the production module.  Exponential pieces refuse inputs past small bounds.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

LCS_LIMIT = 12


def oracle_ngrams(tokens, n):
    """List of (ngram, multiplicity) built by scanning every window."""
    grams = [tuple(tokens[i : i + n]) for i in range(len(tokens)) if i + n <= len(tokens)]
    out = []
    for g in grams:
        if all(g != h for h, _ in out):
            out.append((g, grams.count(g)))
    return out


def _count(tokens, g):
    n = len(g)
    return sum(1 for i in range(len(tokens) - n + 1) if tuple(tokens[i : i + n]) == g)


def _clip(cand, refs, n):
    hits = 0
    total = 0
    for g, c in oracle_ngrams(cand, n):
        total += c
        hits += min(c, max(_count(r, g) for r in refs))
    return hits, total


def _closest(c, refs):
    lengths = sorted(len(r) for r in refs)
    best = lengths[0]
    for ln in lengths:
        if abs(ln - c) < abs(best - c):
            best = ln
    return best


def _geo(precisions, bp):
    scores = []
    for k in range(1, len(precisions) + 1):
        prod = 1.0
        for p in precisions[:k]:
            prod *= p
        scores.append(bp * prod ** (1.0 / k) if prod > 0 else 0.0)
    return scores


def oracle_corpus_bleu(pairs, max_n=4):
    hits = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for cand, refs in pairs:
        c += len(cand)
        r += _closest(len(cand), refs)
        for n in range(1, max_n + 1):
            h, t = _clip(cand, refs, n)
            hits[n - 1] += h
            totals[n - 1] += t
    precisions = [h / t if t else 0.0 for h, t in zip(hits, totals)]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return precisions, bp, _geo(precisions, bp)


def oracle_sentence_bleu(cand, refs, max_n=4):
    if not cand:
        return [0.0] * max_n, 0.0, [0.0] * max_n
    precisions = []
    for n in range(1, max_n + 1):
        h, t = _clip(cand, refs, n)
        if n > 1 and h == 0:
            h += 1
            t += 1
        precisions.append(h / t if t else 0.0)
    r = _closest(len(cand), refs)
    bp = 1.0 if len(cand) >= r else math.exp(1.0 - r / len(cand))
    return precisions, bp, _geo(precisions, bp)


def oracle_rouge_n(pairs, n):
    num = den = 0
    for cand, refs in pairs:
        scored = []
        for ref in refs:
            h = sum(min(c, _count(cand, g)) for g, c in oracle_ngrams(ref, n))
            t = sum(c for _, c in oracle_ngrams(ref, n))
            if t:
                scored.append((h, t))
        if not scored:
            continue
        best = scored[0]
        for h, t in scored[1:]:
            if Fraction(h, t) > Fraction(*best):
                best = (h, t)
        num += best[0]
        den += best[1]
    return num / den if den else 0.0


def _is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def oracle_lcs(a, b):
    """LCS length by enumerating every subsequence of the shorter input."""
    if len(a) > LCS_LIMIT or len(b) > LCS_LIMIT:
        raise ValueError(f"oracle_lcs refuses inputs longer than {LCS_LIMIT}")
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            if _is_subsequence([short[i] for i in idx], long_):
                return k
    return 0


def oracle_rouge_l(pairs):
    num = den = 0
    for cand, refs in pairs:
        lcs = [oracle_lcs(cand, r) for r in refs]
        k = lcs.index(max(lcs))
        num += lcs[k]
        den += len(refs[k])
    return num / den if den else 0.0


def _alignments(cand, ref):
    """Every maximum-size exact alignment as a list of (cand_i, ref_j)."""
    words = sorted(set(cand) & set(ref))
    per_word = []
    for w in words:
        ci = [i for i, x in enumerate(cand) if x == w]
        rj = [j for j, x in enumerate(ref) if x == w]
        k = min(len(ci), len(rj))
        options = []
        for cs in itertools.combinations(ci, k):
            for rs in itertools.permutations(rj, k):
                options.append(list(zip(cs, rs)))
        per_word.append(options)
    for combo in itertools.product(*per_word):
        yield sorted(pair for part in combo for pair in part)


def _chunks(alignment):
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def oracle_meteor_pair(cand, ref):
    best = None
    for a in _alignments(cand, ref):
        if not a:
            break
        key = (-len(a), _chunks(a))
        if best is None or key < best:
            best = key
    if best is None:
        return 0.0
    m, ch = -best[0], best[1]
    p = m / len(cand)
    r = m / len(ref)
    f = 10 * p * r / (r + 9 * p)
    return f * (1 - 0.5 * (ch / m) ** 3)


def oracle_meteor(pairs):
    return sum(max(oracle_meteor_pair(c, r) for r in refs) for c, refs in pairs) / len(pairs)


def oracle_cider(pairs, max_n=4):
    big_m = len(pairs)
    per_n = []
    for n in range(1, max_n + 1):
        def df(g):
            return sum(1 for _, refs in pairs if any(_count(r, g) for r in refs))

        def vec(tokens):
            out = {}
            for g, c in oracle_ngrams(tokens, n):
                d = df(g)
                out[g] = c * (math.log(big_m / d) if d else math.log(big_m))
            return out

        def cos(u, v):
            dot = sum(u[g] * v[g] for g in u if g in v)
            nu = math.sqrt(sum(x * x for x in u.values()))
            nv = math.sqrt(sum(x * x for x in v.values()))
            return dot / (nu * nv) if nu and nv else 0.0

        acc = 0.0
        for cand, refs in pairs:
            cv = vec(cand)
            acc += sum(cos(cv, vec(r)) for r in refs) / len(refs)
        per_n.append(acc / big_m)
    return 10.0 * sum(per_n) / max_n, per_n
