"""Sentence embeddings from lookup tables or a direct embedding model.

Three table strategies average per-position vectors over an utterance:

* ``lookup_word``: one unigram vector per token.
* ``lookup_ngram``: one order-n gram per position; a gram missing from the
  table is replaced by its suffix one word shorter, down to the unigram.
* ``lookup_ngram_backoff``: like ``lookup_ngram`` but each shortening step
  multiplies the suffix vector by the LM back-off weight of the dropped
  gram's context (the gram minus its last word).

A unigram miss resolves to the table's ``<unk>`` vector when present, else
to zeros. Sentences shorter than n pool their single full-length gram.

All functions here expect tokens already passed through ``usuc.text.normalize``.
"""

from __future__ import annotations

import hashlib
import time
from typing import Callable, Protocol, Sequence

import numpy as np

from usuc.backoff_lm import BackoffModel, backoff_weight
from usuc.embedding_store import NgramTable

WeightFn = Callable[[Sequence[str]], float]


class EmbeddingOracle(Protocol):
    dim: int

    def embed(self, tokens: Sequence[str]) -> np.ndarray: ...


def _require_tokens(tokens: Sequence[str]) -> None:
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty token sequence")


def _unigram(table: NgramTable, token: str) -> np.ndarray | None:
    v = table.lookup_bytes(token.encode("utf-8"))
    return v if v is not None else table.unk_vector


def _pool(table: NgramTable, tokens: Sequence[str], n: int, weight: WeightFn | None) -> np.ndarray:
    _require_tokens(tokens)
    if n < 1:
        raise ValueError("n must be >= 1")
    size = len(tokens)
    m = min(n, size)
    acc = np.zeros(table.dim, dtype=np.float64)
    lookup = table.lookup_bytes
    for end in range(m, size + 1):
        start = end - m
        scale = 1.0
        vec = None
        while end - start > 1:
            vec = lookup(" ".join(tokens[start:end]).encode("utf-8"))
            if vec is not None:
                break
            if weight is not None:
                scale *= weight(tokens[start : end - 1])
            start += 1
        else:
            vec = _unigram(table, tokens[end - 1])
        if vec is not None:
            acc += scale * vec if scale != 1.0 else vec
    acc /= size - m + 1
    return acc


def embed_lookup_word(table: NgramTable, tokens: Sequence[str]) -> np.ndarray:
    """Mean of the unigram vectors; misses still count in the denominator."""
    return _pool(table, tokens, 1, None)


def embed_lookup_ngram(table: NgramTable, tokens: Sequence[str], n: int) -> np.ndarray:
    return _pool(table, tokens, n, None)


def embed_lookup_ngram_backoff(
    table: NgramTable, lm: BackoffModel | WeightFn | None, tokens: Sequence[str], n: int
) -> np.ndarray:
    """``lm`` may be a model or any callable mapping a context tuple to a linear weight."""
    if lm is None or isinstance(lm, BackoffModel):
        model = lm

        def weight(ctx: Sequence[str]) -> float:
            return backoff_weight(model, ctx)

    else:
        weight = lm
    return _pool(table, tokens, n, weight)


def embed_direct(oracle: EmbeddingOracle, tokens: Sequence[str]) -> np.ndarray:
    _require_tokens(tokens)
    vec = np.asarray(oracle.embed(tokens), dtype=np.float64)
    if vec.shape != (oracle.dim,):
        raise ValueError(f"oracle returned shape {vec.shape}, expected ({oracle.dim},)")
    if not np.all(np.isfinite(vec)):
        raise ValueError("oracle returned non-finite values")
    return vec


_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class PseudoOracle:
    """Deterministic stand-in for a neural sentence encoder.

    Element j is ``h_j / 2**63 - 1`` where ``h_j`` is the splitmix64 finalizer
    applied to ``base + (j + 1) * 0x9E3779B97F4A7C15 (mod 2**64)`` and ``base``
    is the 8-byte little-endian BLAKE2b digest of the seed (8 bytes LE) followed
    by the UTF-8 canonical key. The vector is then L2-normalized. Nothing here
    depends on platform byte order or Python's hash randomization.
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._steps = (np.arange(1, dim + 1, dtype=np.uint64) * _GOLDEN).astype(np.uint64)

    def __repr__(self) -> str:
        return f"PseudoOracle(dim={self.dim}, seed={self.seed})"

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        _require_tokens(tokens)
        digest = hashlib.blake2b(
            (self.seed & _MASK64).to_bytes(8, "little") + " ".join(tokens).encode("utf-8"), digest_size=8
        ).digest()
        base = np.uint64(int.from_bytes(digest, "little"))
        h = _splitmix64(self._steps + base)
        vec = h.astype(np.float64) / 2.0**63 - 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class DelayedOracle:
    """Wraps an oracle and sleeps ``delay`` seconds per call, to stand in for a slow model."""

    def __init__(self, oracle: EmbeddingOracle, delay: float):
        self.oracle = oracle
        self.dim = oracle.dim
        self.delay = delay

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        time.sleep(self.delay)
        return self.oracle.embed(tokens)


class Direct:
    name = "direct"

    def __init__(self, oracle: EmbeddingOracle):
        self.oracle = oracle
        self.dim = oracle.dim

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return embed_direct(self.oracle, tokens)

    def describe(self) -> dict:
        d = {"strategy": self.name, "oracle": repr(self.oracle), "dim": self.dim}
        if isinstance(self.oracle, DelayedOracle):
            d["oracle_delay_sec"] = self.oracle.delay
        return d


class _TableStrategy:
    name = ""

    def __init__(self, table: NgramTable, n: int = 1):
        if n < 1:
            raise ValueError("n must be >= 1")
        if n > table.max_order:
            raise ValueError(f"n={n} exceeds table max_order {table.max_order}")
        self.table = table
        self.n = n
        self.dim = table.dim

    def describe(self) -> dict:
        return {
            "strategy": self.name,
            "n": self.n,
            "dim": self.dim,
            "table": str(self.table.path),
            "entry_count": self.table.entry_count,
        }


class LookupWord(_TableStrategy):
    name = "lookup_word"

    def __init__(self, table: NgramTable):
        super().__init__(table, 1)

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return embed_lookup_word(self.table, tokens)


class LookupNgram(_TableStrategy):
    name = "lookup_ngram"

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return _pool(self.table, tokens, self.n, None)


class LookupNgramBackoff(_TableStrategy):
    name = "lookup_ngram_backoff"

    def __init__(self, table: NgramTable, lm: BackoffModel, n: int = 2):
        super().__init__(table, n)
        self.lm = lm

    def _weight(self, ctx: Sequence[str]) -> float:
        return backoff_weight(self.lm, ctx)

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return _pool(self.table, tokens, self.n, self._weight)

    def describe(self) -> dict:
        d = super().describe()
        d["lm_order"] = self.lm.order
        return d
