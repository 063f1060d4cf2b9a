"""Token normalization shared by tables, language models, registries and utterances.

Every component must tokenize identically, otherwise key membership tests in
the lookup table silently fail. Keep this the only place that splits text.
"""

from __future__ import annotations

from typing import Iterable, Sequence

UNK = "<unk>"


def normalize(text: str) -> list[str]:
    """Lowercase and split on whitespace."""
    return text.lower().split()


def canonical_key(tokens: Sequence[str] | str) -> str:
    """Space-joined canonical form of an n-gram."""
    if isinstance(tokens, str):
        return " ".join(normalize(tokens))
    return " ".join(tokens)


def as_tokens(value: Iterable[str] | str) -> tuple[str, ...]:
    """Accept raw text or an already tokenized sequence and return normalized tokens."""
    if isinstance(value, str):
        return tuple(normalize(value))
    return tuple(normalize(" ".join(value)))
