"""Nearest-paraphrase intent routing.

Every paraphrase of every intent is embedded once. An utterance gets the
intent of the single most cosine-similar paraphrase (1-nearest neighbour, so
the number of paraphrases per intent does not bias the decision). Scores below
the threshold are returned with ``accepted=False``; the caller hands those to
a human analyst.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Protocol, Sequence

import numpy as np

from usuc.errors import FormatError, UsucError
from usuc.text import as_tokens, normalize


class Strategy(Protocol):
    dim: int

    def embed(self, tokens: Sequence[str]) -> np.ndarray: ...

    def describe(self) -> dict: ...


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0.0 if either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


@dataclass(frozen=True)
class IntentRegistry:
    entries: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("registry needs at least one (intent, paraphrase) pair")
        seen = set()
        for intent, para in self.entries:
            if not intent or not para:
                raise ValueError("intent labels and paraphrases must be non-empty")
            if (intent, para) in seen:
                raise ValueError(f"duplicate pair ({intent!r}, {' '.join(para)!r})")
            seen.add((intent, para))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Sequence[str] | str]]) -> "IntentRegistry":
        return cls(tuple((intent, as_tokens(p)) for intent, p in pairs))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def intents(self) -> list[str]:
        """Distinct labels in first-appearance order."""
        return list(dict.fromkeys(intent for intent, _ in self.entries))

    def paraphrase_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for intent, _ in self.entries:
            counts[intent] = counts.get(intent, 0) + 1
        return counts


def load_registry(stream: IO[str] | Iterable[str], source: str | None = None) -> IntentRegistry:
    """Read ``intent<TAB>paraphrase`` lines. ``#`` lines and blank lines are skipped."""
    entries: list[tuple[str, tuple[str, ...]]] = []
    seen: dict[tuple[str, tuple[str, ...]], int] = {}
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError("expected 'intent<TAB>paraphrase'", lineno, source)
        intent = parts[0].strip()
        para = tuple(normalize(parts[1]))
        if not intent:
            raise FormatError("blank intent label", lineno, source)
        if not para:
            raise FormatError("blank paraphrase", lineno, source)
        if (intent, para) in seen:
            raise FormatError(f"duplicate pair (first on line {seen[(intent, para)]})", lineno, source)
        seen[(intent, para)] = lineno
        entries.append((intent, para))
    if not entries:
        raise FormatError("registry is empty", None, source)
    return IntentRegistry(tuple(entries))


class IndexingError(UsucError):
    def __init__(self, position: int, intent: str, paraphrase: tuple[str, ...], cause: Exception):
        self.position = position
        super().__init__(f"failed to embed paraphrase #{position} ({intent}: {' '.join(paraphrase)!r}): {cause}")


@dataclass(frozen=True)
class RoutingDecision:
    intent: str
    paraphrase: tuple[str, ...]
    score: float
    accepted: bool
    position: int

    def to_json(self, utterance: str) -> dict:
        return {
            "utterance": utterance,
            "intent": self.intent,
            "paraphrase": " ".join(self.paraphrase),
            "score": self.score,
            "accepted": self.accepted,
        }


@dataclass
class ParaphraseIndex:
    """Embedded paraphrases, row-aligned with ``registry.entries``.

    ``strategy`` embeds utterances. ``paraphrase_strategy`` is the one used for
    the rows; it is the same object unless the index was built in mixed mode.
    """

    registry: IntentRegistry
    strategy: Strategy
    vectors: np.ndarray
    paraphrase_strategy: Strategy | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.vectors.setflags(write=False)
        if self.vectors.shape[0] != len(self.registry):
            raise ValueError("one vector per registry entry required")
        norms = np.linalg.norm(self.vectors, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        self._unit = self.vectors / safe[:, None]
        self._unit.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def describe(self) -> dict:
        d = dict(self.strategy.describe())
        d["paraphrases"] = len(self.registry)
        d["intents"] = len(self.registry.intents)
        if self.paraphrase_strategy is not None and self.paraphrase_strategy is not self.strategy:
            d["paraphrase_strategy"] = self.paraphrase_strategy.describe()
        return d

    def scores(self, embedding: np.ndarray) -> np.ndarray:
        """Cosine similarity of ``embedding`` against every row."""
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (self.dim,):
            raise ValueError(f"embedding has shape {embedding.shape}, index dim is {self.dim}")
        norm = np.linalg.norm(embedding)
        if norm == 0.0:
            return np.zeros(len(self.registry))
        return np.clip(self._unit @ (embedding / norm), -1.0, 1.0)

    def decide(self, embedding: np.ndarray, threshold: float = 0.0) -> RoutingDecision:
        s = self.scores(embedding)
        best = int(np.argmax(s))  # first maximum wins ties
        intent, para = self.registry.entries[best]
        score = float(s[best])
        return RoutingDecision(intent, para, score, score >= threshold, best)


def index_paraphrases(
    registry: IntentRegistry, strategy: Strategy, paraphrase_strategy: Strategy | None = None
) -> ParaphraseIndex:
    embedder = paraphrase_strategy or strategy
    if embedder.dim != strategy.dim:
        raise ValueError(f"paraphrase strategy dim {embedder.dim} != utterance strategy dim {strategy.dim}")
    rows = []
    warns = []
    for pos, (intent, para) in enumerate(registry.entries):
        try:
            vec = np.asarray(embedder.embed(para), dtype=np.float64)
        except Exception as exc:
            raise IndexingError(pos, intent, para, exc) from exc
        if not np.all(np.isfinite(vec)):
            raise IndexingError(pos, intent, para, ValueError("non-finite embedding"))
        if not np.any(vec):
            warns.append(f"paraphrase #{pos} ({intent}: {' '.join(para)!r}) embeds to the zero vector")
        rows.append(vec)
    return ParaphraseIndex(registry, strategy, np.stack(rows), embedder, warns)


def classify(index: ParaphraseIndex, utterance: Sequence[str] | str, threshold: float = 0.0) -> RoutingDecision:
    tokens = as_tokens(utterance)
    if not tokens:
        raise ValueError("empty utterance")
    if math.isnan(threshold):
        raise ValueError("threshold must be a number")
    return index.decide(index.strategy.embed(tokens), threshold)
