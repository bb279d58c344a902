import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from captionkit.errors import UndefinedMetricError
from captionkit.metrics import (
    EvalPair,
    cider,
    corpus_bleu,
    evaluate_corpus,
    lcs_length,
    meteor,
    ngram_counts,
    oracle_lcs,
    rouge_l,
    rouge_n,
    sentence_bleu,
)
from captionkit.metrics import oracle
from captionkit.metrics.scores import EvalReport, _min_chunks_exact, _min_chunks_greedy, meteor_pair

TOL = 1e-9

token = st.sampled_from([f"w{i}" for i in range(6)])
sentence = st.lists(token, min_size=1, max_size=8)
pair = st.tuples(sentence, st.lists(sentence, min_size=1, max_size=3))
corpus = st.lists(pair, min_size=1, max_size=5)


def P(cand, *refs):
    return EvalPair.from_text(cand, refs)


# ---- n-grams -------------------------------------------------------------------------


def test_ngram_counts_examples():
    assert ngram_counts(["a", "b", "a"], 1) == {("a",): 2, ("b",): 1}
    assert ngram_counts(["a", "b", "a"], 2) == {("a", "b"): 1, ("b", "a"): 1}
    assert not ngram_counts(["a", "b", "a"], 4)


# ---- BLEU -----------------------------------------------------------------------------


def test_bleu_identity():
    pairs = [P("the cat sat on the mat", "the cat sat on the mat"), P("a dog ran off", "a dog ran off")]
    assert corpus_bleu(pairs).scores == (1.0, 1.0, 1.0, 1.0)


def test_bleu_clipped_precision():
    b = corpus_bleu([P("the the the the the the the", "the cat is on the mat")], 1)
    assert b.precisions[0] == 2 / 7


def test_bleu_brevity_penalty():
    b = corpus_bleu([P("a b c", "a b c d e f")], 1)
    assert b.precisions[0] == 1.0
    assert abs(b.scores[0] - math.exp(-1)) < 1e-12
    assert abs(b.scores[0] - 0.367879) < 1e-6


def test_bleu_empty_corpus():
    with pytest.raises(UndefinedMetricError):
        corpus_bleu([P("", "a b")])


def test_sentence_bleu_smoothing_only_when_needed():
    b = sentence_bleu(P("a b c x", "a b c d"), 4)
    assert b.precisions == (3 / 4, 2 / 3, 1 / 2, 1 / 2)  # order 4 had 0/1, smoothed to 1/2


def test_sentence_bleu_empty_candidate():
    assert sentence_bleu(P("", "a b")).scores == (0.0,) * 4


# ---- ROUGE ------------------------------------------------------------------------------


def test_rouge_examples():
    assert rouge_n([P("a c d", "a b c d")], 1) == 3 / 4
    assert rouge_n([P("a b c", "a b c")], 2) == 1.0
    assert rouge_n([P("x y", "a b")], 1) == 0.0
    assert rouge_l([P("a c d b", "a b c d")]) == 0.75
    assert rouge_l([P("", "a b c d")]) == 0.0


def test_rouge_best_reference():
    # second ref has the higher ratio (2/2 vs 2/4)
    assert rouge_n([P("a b", "a b c d", "a b")], 1) == 1.0


def test_rouge_skips_too_short_references():
    with pytest.warns(UserWarning):
        assert rouge_n([P("a b", "a"), P("a b", "a b")], 2) == 1.0


def test_lcs_examples():
    assert lcs_length("abcd", "acdb") == 3 == oracle_lcs("abcd", "acdb")
    assert oracle_lcs("xyz", "xyz") == 3


def test_oracle_lcs_refuses_long_inputs():
    with pytest.raises(ValueError):
        oracle_lcs("a" * 13, "a")


@settings(max_examples=300)
@given(st.lists(st.integers(0, 3), max_size=10), st.lists(st.integers(0, 3), max_size=10))
def test_lcs_matches_oracle(a, b):
    assert lcs_length(a, b) == oracle_lcs(a, b)


# ---- METEOR -------------------------------------------------------------------------------


def test_meteor_examples():
    assert meteor_pair(["x"], ["y"]) == 0.0
    assert meteor_pair(["a", "b"], ["a", "b"]) == 0.9375
    assert meteor_pair(["b", "a"], ["a", "b"]) == 0.5


def test_min_chunks_exact_prefers_contiguous():
    cand = tuple("a b a b".split())
    ref = tuple("a b x a b".split())
    assert _min_chunks_exact(cand, ref) == 2


def test_min_chunks_greedy_upper_bounds_exact():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c = tuple(rng.choice(list("abc"), size=rng.integers(1, 8)))
        r = tuple(rng.choice(list("abc"), size=rng.integers(1, 8)))
        assert _min_chunks_greedy(c, r) >= _min_chunks_exact(c, r)


# ---- CIDEr -----------------------------------------------------------------------------------


def test_cider_disjoint_and_degenerate():
    assert cider([P("x y", "a b"), P("z w", "c d")]) == 0.0
    assert cider([P("a b", "a b")]) == 0.0  # M=1: every idf is ln 1


def test_cider_three_pair_corpus_matches_oracle():
    pairs = [P("a b c", "a b d"), P("b c d", "b c e"), P("a a e", "e a a")]
    want, _ = oracle.oracle_cider([(p.candidate, p.references) for p in pairs])
    assert abs(cider(pairs) - want) < TOL


# ---- oracle equivalence (property) ---------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(corpus)
def test_all_metrics_match_oracles(pairs):
    ev = [EvalPair(tuple(c), tuple(tuple(r) for r in refs)) for c, refs in pairs]
    raw = [(list(p.candidate), [list(r) for r in p.references]) for p in ev]
    _, _, ob = oracle.oracle_corpus_bleu(raw)
    assert np.allclose(corpus_bleu(ev).scores, ob, rtol=0, atol=TOL)
    for p, (c, refs) in zip(ev, raw):
        assert np.allclose(sentence_bleu(p).scores, oracle.oracle_sentence_bleu(c, refs)[2], rtol=0, atol=TOL)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # single-token references cannot give bigrams
        for n in (1, 2):
            assert abs(rouge_n(ev, n) - oracle.oracle_rouge_n(raw, n)) < TOL
    assert abs(rouge_l(ev) - oracle.oracle_rouge_l(raw)) < TOL
    assert abs(meteor(ev) - oracle.oracle_meteor(raw)) < TOL
    assert abs(cider(ev) - oracle.oracle_cider(raw)[0]) < TOL


# ---- invariants ---------------------------------------------------------------------------


@pytest.mark.filterwarnings("ignore:pair")
@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(sentence, sentence), min_size=2, max_size=5))
def test_duplicate_reference_invariance(raw):
    single = [EvalPair(tuple(c), (tuple(r),)) for c, r in raw]
    doubled = [EvalPair(p.candidate, p.references * 2) for p in single]
    a, b = evaluate_corpus(single).to_dict(), evaluate_corpus(doubled).to_dict()
    assert a == b


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(sentence, st.lists(sentence, min_size=1, max_size=3)), min_size=1, max_size=5))
def test_appended_identical_reference_invariance_text_metrics(raw):
    base = [EvalPair(tuple(c), tuple(tuple(r) for r in refs)) for c, refs in raw]
    extra = [EvalPair(p.candidate, p.references + (p.references[0],)) for p in base]
    assert corpus_bleu(base) == corpus_bleu(extra)
    assert rouge_n(base, 1) == rouge_n(extra, 1)
    assert rouge_l(base) == rouge_l(extra)
    assert meteor(base) == meteor(extra)


def test_identical_and_disjoint_corpora():
    same = evaluate_corpus([P("a b c d", "a b c d"), P("e f g h", "e f g h")])
    assert (same.bleu1, same.bleu2, same.bleu3, same.bleu4) == (1.0, 1.0, 1.0, 1.0)
    assert (same.rouge1, same.rouge2, same.rougeL) == (1.0, 1.0, 1.0)
    assert same.meteor == 1.0 - 0.5 * (1 / 4) ** 3
    none = evaluate_corpus([P("a b c d", "w x y z"), P("e f g h", "p q r s")])
    assert all(v == 0.0 for k, v in none.to_dict().items() if k != "n_pairs")


@settings(max_examples=60)
@given(sentence, sentence, st.randoms(use_true_random=False))
def test_order_sensitivity(cand, ref, rnd):
    shuffled = list(cand)
    rnd.shuffle(shuffled)
    assert rouge_n([(cand, [ref])], 1) == rouge_n([(shuffled, [ref])], 1)


def test_order_matters_for_bigrams_and_lcs():
    ordered, scrambled = P("a b c d", "a b c d"), P("d c b a", "a b c d")
    assert corpus_bleu([ordered], 2).scores[1] > corpus_bleu([scrambled], 2).scores[1]
    assert rouge_l([ordered]) > rouge_l([scrambled])


def test_report_schema_and_purity():
    pairs = [P("a b c", "a b d"), P("b c d", "b c e")]
    r1, r2 = evaluate_corpus(pairs), evaluate_corpus(pairs)
    assert json.dumps(r1.to_dict()) == json.dumps(r2.to_dict())
    assert list(r1.to_dict()) == [f.name for f in EvalReport.__dataclass_fields__.values()]
    d = r1.to_dict()
    assert all(0.0 <= d[k] <= 1.0 for k in d if k not in ("cider", "n_pairs"))
    assert 0.0 <= d["cider"] <= 10.0 and d["n_pairs"] == 2
