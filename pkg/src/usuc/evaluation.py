"""Classification error rate and throughput measurement."""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Sequence

from usuc.classifier import ParaphraseIndex, RoutingDecision, classify
from usuc.errors import FormatError
from usuc.text import as_tokens, normalize


@dataclass(frozen=True)
class LabeledUtterance:
    tokens: tuple[str, ...]
    gold_intent: str


def load_test_set(stream: IO[str] | Iterable[str], source: str | None = None) -> list[LabeledUtterance]:
    """Read ``utterance<TAB>gold_intent`` lines; ``#`` and blank lines are skipped."""
    out = []
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError("expected 'utterance<TAB>gold_intent'", lineno, source)
        tokens = tuple(normalize(parts[0]))
        gold = parts[1].strip()
        if not tokens or not gold:
            raise FormatError("blank utterance or gold intent", lineno, source)
        out.append(LabeledUtterance(tokens, gold))
    return out


@dataclass
class EvalReport:
    total: int
    errors: int
    cer: float
    rejected: int
    per_intent: dict[str, dict[str, int]]
    wall_time_sec: float
    throughput_ups: float
    config: dict = field(default_factory=dict)
    # the accounting mode not selected by ``rejects_as_errors``
    cer_rejects_excluded: float | None = None
    cer_rejects_as_errors: float | None = None
    coverage_warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def evaluate_cer(
    index: ParaphraseIndex,
    test_set: Sequence[LabeledUtterance | tuple[Sequence[str] | str, str]],
    threshold: float = 0.0,
    rejects_as_errors: bool = True,
    workers: int = 1,
) -> EvalReport:
    """Score ``test_set`` against ``index``.

    With ``rejects_as_errors`` (the default) a rejected utterance is an error
    even if its top intent was right. Otherwise rejected utterances are
    dropped from the scored set. Both rates are always filled in.
    """
    items = [
        t if isinstance(t, LabeledUtterance) else LabeledUtterance(as_tokens(t[0]), t[1]) for t in test_set
    ]
    if not items:
        raise ValueError("empty test set")

    def run(u: LabeledUtterance) -> RoutingDecision:
        return classify(index, u.tokens, threshold)

    start = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            decisions = list(pool.map(run, items))
    else:
        decisions = [run(u) for u in items]
    elapsed = time.perf_counter() - start

    known = set(index.registry.intents)
    missing = sorted({u.gold_intent for u in items} - known)

    errors_all = 0
    errors_accepted = 0
    rejected = 0
    per_intent: dict[str, dict[str, int]] = {}
    for u, d in zip(items, decisions):
        wrong = d.intent != u.gold_intent
        if not d.accepted:
            rejected += 1
        else:
            errors_accepted += wrong
        is_error = wrong or not d.accepted
        errors_all += is_error
        if rejects_as_errors or d.accepted:
            slot = per_intent.setdefault(u.gold_intent, {"total": 0, "errors": 0})
            slot["total"] += 1
            slot["errors"] += int(wrong if not rejects_as_errors else is_error)

    total_all = len(items)
    total_accepted = total_all - rejected
    cer_all = errors_all / total_all
    cer_acc = errors_accepted / total_accepted if total_accepted else 0.0
    if rejects_as_errors:
        total, errors, cer = total_all, errors_all, cer_all
    else:
        total, errors, cer = total_accepted, errors_accepted, cer_acc

    config = index.describe()
    config.update(threshold=threshold, rejects_as_errors=rejects_as_errors)
    return EvalReport(
        total=total,
        errors=errors,
        cer=cer,
        rejected=rejected,
        per_intent=dict(sorted(per_intent.items())),
        wall_time_sec=elapsed,
        throughput_ups=total_all / elapsed if elapsed > 0 else float("inf"),
        config=config,
        cer_rejects_excluded=cer_acc,
        cer_rejects_as_errors=cer_all,
        coverage_warnings=[f"gold intent {g!r} has no paraphrase in the registry" for g in missing],
    )


@dataclass
class ThroughputReport:
    utterances: int
    repetitions: int
    run_seconds: list[float]
    median_seconds: float
    throughput_ups: float
    config: dict

    def to_json(self) -> dict:
        return asdict(self)


def benchmark_throughput(
    index: ParaphraseIndex,
    utterances: Sequence[Sequence[str] | str],
    repetitions: int = 3,
    threshold: float = 0.0,
) -> ThroughputReport:
    """End-to-end embed + classify speed, median over ``repetitions`` passes.

    Needs at least 100 utterances or at least 3 repetitions. Paraphrase
    indexing and table loading are not timed.
    """
    tokens = [as_tokens(u) for u in utterances]
    if not tokens:
        raise ValueError("no utterances to benchmark")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if len(tokens) < 100 and repetitions < 3:
        raise ValueError("measurement floor: need >= 100 utterances or >= 3 repetitions")
    if any(not t for t in tokens):
        raise ValueError("empty utterance in benchmark input")

    runs = []
    for _ in range(repetitions):
        start = time.perf_counter()
        for t in tokens:
            classify(index, t, threshold)
        runs.append(time.perf_counter() - start)
    med = statistics.median(runs)
    return ThroughputReport(
        utterances=len(tokens),
        repetitions=repetitions,
        run_seconds=runs,
        median_seconds=med,
        throughput_ups=len(tokens) / med if med > 0 else float("inf"),
        config=index.describe(),
    )


def speedup(fast: ThroughputReport, slow: ThroughputReport) -> float:
    """Throughput ratio of two runs; they must have measured the same number of utterances."""
    if fast.utterances != slow.utterances:
        raise ValueError("throughput ratio needs runs over identical inputs")
    return fast.throughput_ups / slow.throughput_ups
