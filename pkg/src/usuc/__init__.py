"""Unsupervised utterance classification over precomputed n-gram embeddings.

The run-time pieces: an on-disk n-gram embedding table, back-off weights from
an ARPA language model, three lookup pooling strategies plus a direct oracle,
and a nearest-paraphrase cosine router with evaluation tooling.
"""

from usuc.backoff_lm import BackoffModel, LmEntry, backoff_weight, build_mini_lm, parse_arpa, write_arpa
from usuc.classifier import (
    IntentRegistry,
    ParaphraseIndex,
    RoutingDecision,
    classify,
    cosine_similarity,
    index_paraphrases,
    load_registry,
)
from usuc.embedder import (
    DelayedOracle,
    Direct,
    LookupNgram,
    LookupNgramBackoff,
    LookupWord,
    PseudoOracle,
    embed_direct,
    embed_lookup_ngram,
    embed_lookup_ngram_backoff,
    embed_lookup_word,
)
from usuc.embedding_store import NgramTable, build_table, open_table, parse_text_dump
from usuc.errors import FormatError, UsucError
from usuc.evaluation import EvalReport, ThroughputReport, benchmark_throughput, evaluate_cer
from usuc.text import canonical_key, normalize

__version__ = "0.1.0"

__all__ = [
    "BackoffModel",
    "DelayedOracle",
    "Direct",
    "EvalReport",
    "FormatError",
    "IntentRegistry",
    "LmEntry",
    "LookupNgram",
    "LookupNgramBackoff",
    "LookupWord",
    "NgramTable",
    "ParaphraseIndex",
    "PseudoOracle",
    "RoutingDecision",
    "ThroughputReport",
    "UsucError",
    "backoff_weight",
    "benchmark_throughput",
    "build_mini_lm",
    "build_table",
    "canonical_key",
    "classify",
    "cosine_similarity",
    "embed_direct",
    "embed_lookup_ngram",
    "embed_lookup_ngram_backoff",
    "embed_lookup_word",
    "evaluate_cer",
    "index_paraphrases",
    "load_registry",
    "normalize",
    "open_table",
    "parse_arpa",
    "parse_text_dump",
    "write_arpa",
]
