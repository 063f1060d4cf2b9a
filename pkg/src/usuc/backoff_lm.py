"""Back-off n-gram language models in ARPA format.

Only the back-off weights are needed at run time (they scale the vector of a
shortened n-gram when the full one is missing from the embedding table), but
the model keeps probabilities too so that it round-trips through ARPA and its
normalization can be checked.

``build_mini_lm`` is a small Witten-Bell trainer for tests and demos. It does
not add sentence boundary tokens, because utterance n-grams looked up by the
embedder never contain them.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from usuc.errors import FormatError
from usuc.text import UNK, as_tokens, normalize

_NGRAM_COUNT = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION = re.compile(r"^\\(\d+)-grams:$")


@dataclass(frozen=True)
class LmEntry:
    key: tuple[str, ...]
    log10_prob: float
    log10_bow: float | None = None


@dataclass
class BackoffModel:
    """Per-order tables of ``LmEntry`` keyed by token tuples.

    ``tables[k - 1]`` holds the k-grams.
    """

    order: int
    tables: list[dict[tuple[str, ...], LmEntry]] = field(default_factory=list)

    @property
    def vocab(self) -> set[str]:
        return {key[0] for key in self.tables[0]} if self.tables else set()

    def counts(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.tables)

    def get(self, key: Sequence[str]) -> LmEntry | None:
        k = len(key)
        if k < 1 or k > self.order:
            return None
        return self.tables[k - 1].get(tuple(key))

    def log10_prob(self, word: str, context: Sequence[str] = ()) -> float:
        """Standard back-off query: use the longest matching n-gram, paying
        back-off weights for every context that had to be dropped."""
        context = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        vocab = self.tables[0]
        if (word,) not in vocab:
            if (UNK,) not in vocab:
                return -math.inf
            word = UNK
        total = 0.0
        while True:
            entry = self.get(context + (word,))
            if entry is not None:
                return total + entry.log10_prob
            ctx = self.get(context)
            if ctx is not None and ctx.log10_bow is not None:
                total += ctx.log10_bow
            context = context[1:]

    def prob(self, word: str, context: Sequence[str] = ()) -> float:
        return 10.0 ** self.log10_prob(word, context)


def backoff_weight(model: BackoffModel | None, context: Sequence[str]) -> float:
    """Linear back-off weight of ``context``; 1.0 when the context is unknown
    or carries no weight."""
    if model is None:
        return 1.0
    entry = model.get(context)
    if entry is None or entry.log10_bow is None:
        return 1.0
    return 10.0**entry.log10_bow


def parse_arpa(stream: IO[str] | Iterable[str], source: str | None = None) -> BackoffModel:
    """Parse an ARPA back-off language model.

    Fields within n-gram lines may be separated by tabs or any whitespace.
    Section sizes must match the ``\\data\\`` header.
    """
    declared: dict[int, int] = {}
    tables: dict[int, dict[tuple[str, ...], LmEntry]] = {}
    state = "preamble"
    current = 0
    saw_end = False

    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if state == "preamble":
            if line == "\\data\\":
                state = "data"
            continue
        if line == "\\end\\":
            saw_end = True
            break
        m = _SECTION.match(line)
        if m:
            current = int(m.group(1))
            if current not in declared:
                raise FormatError(f"section \\{current}-grams: not declared in \\data\\", lineno, source)
            if current in tables:
                raise FormatError(f"repeated section \\{current}-grams:", lineno, source)
            tables[current] = {}
            state = "grams"
            continue
        if state == "data":
            m = _NGRAM_COUNT.match(line)
            if not m:
                raise FormatError(f"malformed \\data\\ line {line!r}", lineno, source)
            declared[int(m.group(1))] = int(m.group(2))
            continue

        fields = line.split()
        n = current
        if len(fields) not in (n + 1, n + 2):
            raise FormatError(f"expected {n + 1} or {n + 2} fields for a {n}-gram, got {len(fields)}", lineno, source)
        try:
            lp = float(fields[0])
            bow = float(fields[n + 1]) if len(fields) == n + 2 else None
        except ValueError:
            raise FormatError(f"non-numeric probability or back-off weight in {line!r}", lineno, source) from None
        key = tuple(normalize(" ".join(fields[1 : n + 1])))
        if lp > 0:
            warnings.warn(f"line {lineno}: positive log10 probability {lp} for {' '.join(key)!r}", stacklevel=2)
        tables[n][key] = LmEntry(key, lp, bow)

    if state == "preamble":
        raise FormatError("missing \\data\\ header", None, source)
    if not saw_end:
        raise FormatError("missing \\end\\ marker", None, source)
    if not declared:
        raise FormatError("\\data\\ declares no n-gram orders", None, source)
    order = max(declared)
    for k in range(1, order + 1):
        if k not in declared:
            raise FormatError(f"\\data\\ has no count for order {k}", None, source)
        got = len(tables.get(k, {}))
        if got != declared[k]:
            raise FormatError(f"ngram {k}={declared[k]} declared but {got} entries parsed", None, source)
    return BackoffModel(order, [tables[k] for k in range(1, order + 1)])


def write_arpa(model: BackoffModel, stream: IO[str]) -> None:
    stream.write("\n\\data\\\n")
    for k, table in enumerate(model.tables, start=1):
        stream.write(f"ngram {k}={len(table)}\n")
    for k, table in enumerate(model.tables, start=1):
        stream.write(f"\n\\{k}-grams:\n")
        for key in sorted(table):
            e = table[key]
            line = f"{e.log10_prob:.6f}\t{' '.join(key)}"
            if e.log10_bow is not None:
                line += f"\t{e.log10_bow:.6f}"
            stream.write(line + "\n")
    stream.write("\n\\end\\\n")


def _log10(p: float) -> float:
    return math.log10(p) if p > 0 else -99.0


def build_mini_lm(corpus: Iterable[Sequence[str] | str], order: int) -> BackoffModel:
    """Train an interpolated Witten-Bell model and express it in back-off form.

    The vocabulary is every corpus token plus ``<unk>``. The unigram level
    interpolates with a uniform distribution over that vocabulary, so
    ``<unk>`` receives the mass reserved for unseen types. For a context ``h``
    followed by ``T(h)`` distinct types over ``c(h)`` tokens::

        P(w | h) = (c(h, w) + T(h) * P(w | h')) / (c(h) + T(h))

    where ``h'`` drops the oldest word of ``h``. Seen n-grams store this value
    and ``bow(h) = (1 - sum_seen P(w|h)) / (1 - sum_seen P(w|h'))`` makes the
    back-off query reproduce it exactly for the unseen ones.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sentences = [as_tokens(s) for s in corpus]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError("empty corpus")

    # ngram_counts[k][gram] for grams of length k; followers[h] = Counter of next words
    ngram_counts: list[Counter] = [Counter() for _ in range(order + 1)]
    followers: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    for sent in sentences:
        for k in range(1, order + 1):
            for i in range(len(sent) - k + 1):
                gram = sent[i : i + k]
                ngram_counts[k][gram] += 1
                if k > 1:
                    followers[gram[:-1]][gram[-1]] += 1

    vocab = sorted({w for s in sentences for w in s} | {UNK})
    uniform = 1.0 / len(vocab)
    uni = ngram_counts[1]
    total = sum(uni.values())
    types = len(uni)
    unigram_p = {(w,): (uni.get((w,), 0) + types * uniform) / (total + types) for w in vocab}

    cache: dict[tuple[str, ...], float] = dict(unigram_p)

    def interp(gram: tuple[str, ...]) -> float:
        if gram in cache:
            return cache[gram]
        h, w = gram[:-1], gram[-1]
        lower = interp(gram[1:])
        f = followers.get(h)
        if f is None:
            p = lower
        else:
            c_h = sum(f.values())
            t_h = len(f)
            p = (f.get(w, 0) + t_h * lower) / (c_h + t_h)
        cache[gram] = p
        return p

    tables: list[dict[tuple[str, ...], LmEntry]] = []
    for k in range(1, order + 1):
        grams = list(unigram_p) if k == 1 else list(ngram_counts[k])
        table = {}
        for gram in grams:
            bow = None
            if k < order and gram in followers:
                seen = followers[gram]
                num = 1.0 - sum(interp(gram + (w,)) for w in seen)
                den = 1.0 - sum(interp(gram[1:] + (w,)) for w in seen)
                bow = _log10(num / den) if den > 0 else 0.0
            table[gram] = LmEntry(gram, _log10(interp(gram)), bow)
        tables.append(table)
    return BackoffModel(order, tables)
