from .oracle import oracle_lcs
from .scores import (
    BleuScore,
    EvalPair,
    EvalReport,
    cider,
    corpus_bleu,
    evaluate_corpus,
    lcs_length,
    meteor,
    ngram_counts,
    rouge_l,
    rouge_n,
    sentence_bleu,
)

__all__ = [
    "BleuScore",
    "EvalPair",
    "EvalReport",
    "cider",
    "corpus_bleu",
    "evaluate_corpus",
    "lcs_length",
    "meteor",
    "ngram_counts",
    "oracle_lcs",
    "rouge_l",
    "rouge_n",
    "sentence_bleu",
]
