"""Acceptance criteria. Each test records a one-line PASS/FAIL summary that
conftest prints at the end of the run.

Tolerances are fixed here and are not to be loosened:
  C1 1e-6 per element, < 10 s        C5 CER == 0.0 / < 0.95, < 30 s
  C2 exact equality                  C6 speedup >= 50 vs a 10 ms/call stub
  C3 exact selected entry, < 10 s    C7 bit-identical (< 5 s), 1e-4, 1e-6
  C4 exact (intent, paraphrase)      C8 byte-equal JSON bodies
"""

import io
import json
import sys
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from oracles import brute_force_knn, ref_embed
from synthetic import make_task
from usuc.backoff_lm import BackoffModel, LmEntry, build_mini_lm, parse_arpa, write_arpa
from usuc.classifier import IntentRegistry, ParaphraseIndex, classify, index_paraphrases, load_registry
from usuc.cli import main
from usuc.embedder import (
    DelayedOracle,
    Direct,
    LookupNgramBackoff,
    PseudoOracle,
    embed_lookup_ngram,
    embed_lookup_ngram_backoff,
    embed_lookup_word,
)
from usuc.embedding_store import build_table, open_table
from usuc.evaluation import benchmark_throughput, evaluate_cer, speedup
from usuc.runtime import RuntimeConfig, build_runtime
from usuc.service import create_app

CASES = 1000


def _record(record_property, label, detail):
    record_property("criterion", label)
    record_property("detail", detail)


class _Fixed:
    """Strategy over a preset token -> vector map."""

    def __init__(self, vectors, dim):
        self.vectors = vectors
        self.dim = dim

    def embed(self, tokens):
        return self.vectors[" ".join(tokens)]

    def describe(self):
        return {"strategy": "fixed", "dim": self.dim}


def _random_lookup_cases(tmp_path, seed=7):
    """Yield (table, kept, weights, lm, identity_lm, tokens, n) for randomized lookup cases:
    vocab 50, sentences of length 1..12, 30% dropout of the 1..3-grams."""
    rng = np.random.default_rng(seed)
    vocab = [f"v{i}" for i in range(50)]
    dim = 4
    for case in range(CASES):
        sents = [list(rng.choice(vocab, size=rng.integers(1, 13))) for _ in range(3)]
        grams = {tuple(s[i : i + k]) for s in sents for k in (1, 2, 3) for i in range(len(s) - k + 1)}
        kept = {g: rng.normal(size=dim).astype(np.float32) for g in sorted(grams) if rng.random() >= 0.3}
        if rng.random() < 0.2:
            kept[("<unk>",)] = rng.normal(size=dim).astype(np.float32)
        contexts = {g[:-1] for g in grams if len(g) > 1}
        weights = {c: float(10 ** rng.uniform(-2, 0.3)) for c in sorted(contexts) if rng.random() < 0.8}
        tables = [{} for _ in range(3)]
        for c, w in weights.items():
            tables[len(c) - 1][c] = LmEntry(c, -1.0, float(np.log10(w)))
        lm = BackoffModel(3, tables)
        identity = BackoffModel(3, [{c: LmEntry(c, -1.0, 0.0) for c in contexts if len(c) == k} for k in (1, 2, 3)])
        path = tmp_path / f"case{case}.bin"
        build_table(((" ".join(g), v) for g, v in kept.items()), path, dim, 3)
        table = open_table(path)
        try:
            # dict-side weights are taken straight from the log10 values the model holds
            ref_weights = {c: 10.0 ** e.log10_bow for t in tables for c, e in t.items()}
            yield table, kept, ref_weights, lm, identity, sents[0], int(rng.integers(1, 4))
        finally:
            table.close()


def test_c1_backoff_recursion_matches_reference(tmp_path, record_property):
    start = time.perf_counter()
    worst = 0.0
    for table, kept, weights, lm, _, tokens, n in _random_lookup_cases(tmp_path):
        want_plain = np.array(ref_embed(kept, tokens, n, table.dim))
        want_bo = np.array(ref_embed(kept, tokens, n, table.dim, lambda c: weights.get(tuple(c), 1.0)))
        got_plain = embed_lookup_ngram(table, tokens, n)
        got_bo = embed_lookup_ngram_backoff(table, lm, tokens, n)
        worst = max(worst, np.abs(got_plain - want_plain).max(), np.abs(got_bo - want_bo).max())
    elapsed = time.perf_counter() - start
    _record(record_property, "C1 back-off recursion vs reference",
            f"{CASES} cases, max abs err {worst:.2e} (tol 1e-6), {elapsed:.2f}s (limit 10s)")
    assert worst <= 1e-6
    assert elapsed < 10.0


def test_c2_degeneracy_chain(tmp_path, record_property):
    mismatches = 0
    for table, _, _, _, identity, tokens, n in _random_lookup_cases(tmp_path):
        if not np.array_equal(embed_lookup_ngram(table, tokens, 1), embed_lookup_word(table, tokens)):
            mismatches += 1
        plain = embed_lookup_ngram(table, tokens, n)
        for lm in (identity, None, BackoffModel(3, [{}, {}, {}])):
            if not np.array_equal(embed_lookup_ngram_backoff(table, lm, tokens, n), plain):
                mismatches += 1
    _record(record_property, "C2 degeneracy n=1 / identity back-off", f"{CASES} cases, {mismatches} inexact")
    assert mismatches == 0


def test_c3_knn_matches_brute_force(record_property):
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    wrong = ties = 0
    for case in range(CASES):
        dim = 6
        m = int(rng.integers(1, 9))
        pairs, vecs = [], {}
        for i in range(m):
            for j in range(int(rng.integers(1, 5))):
                key = f"p{i}_{j}"
                if vecs and rng.random() < 0.15:
                    vecs[key] = vecs[list(vecs)[int(rng.integers(len(vecs)))]].copy()
                    ties += 1
                else:
                    vecs[key] = rng.normal(size=dim)
                pairs.append((f"I{i}", key))
        r = rng.random()
        if r < 0.05:
            u = np.zeros(dim)
        elif r < 0.15:
            u = vecs[pairs[int(rng.integers(len(pairs)))][1]] * rng.uniform(0.1, 10)
        else:
            u = rng.normal(size=dim)
        vecs["utt"] = u
        idx = index_paraphrases(IntentRegistry.from_pairs(pairs), _Fixed(vecs, dim))
        d = classify(idx, "utt")
        pos, _ = brute_force_knn(u.tolist(), [vecs[p].tolist() for _, p in pairs])
        if (d.intent, " ".join(d.paraphrase)) != pairs[pos]:
            wrong += 1
    elapsed = time.perf_counter() - start
    _record(record_property, "C3 K=1 classify vs exhaustive scan",
            f"{CASES} cases ({ties} duplicated vectors), {wrong} mismatches, {elapsed:.2f}s (limit 10s)")
    assert wrong == 0
    assert elapsed < 10.0


def test_c4_argmax_scale_invariance(record_property):
    rng = np.random.default_rng(12)
    changed = 0
    for case in range(200):
        dim = int(rng.integers(2, 12))
        pairs = [(f"I{i % 5}", f"p{i}") for i in range(int(rng.integers(1, 25)))]
        rows = rng.normal(size=(len(pairs), dim))
        reg = IntentRegistry.from_pairs(pairs)
        idx = ParaphraseIndex(reg, _Fixed({}, dim), rows)
        u = rng.normal(size=dim)
        base = idx.decide(u)
        for c in (1e-3, 1.0, 1e3):
            scaled_idx = ParaphraseIndex(reg, _Fixed({}, dim), rows * c)
            for d in (idx.decide(u * c), scaled_idx.decide(u)):
                if (d.intent, d.paraphrase) != (base.intent, base.paraphrase):
                    changed += 1
    _record(record_property, "C4 argmax invariant under scaling", f"200 cases x 3 scales, {changed} changed")
    assert changed == 0


def test_c5_synthetic_end_to_end_cer(tmp_path, record_property):
    start = time.perf_counter()
    task = make_task(tmp_path, intents=20, per_intent=3)
    with open_table(task.table) as table:
        lm = parse_arpa(io.StringIO(task.arpa.read_text(encoding="utf-8")))
        reg = load_registry(io.StringIO(task.registry.read_text(encoding="utf-8")))
        idx = index_paraphrases(reg, LookupNgramBackoff(table, lm, 2))
        exact = evaluate_cer(idx, [(p, i) for i, p in task.pairs])
        perturbed = evaluate_cer(idx, task.perturbed(np.random.default_rng(99), 300))
    elapsed = time.perf_counter() - start
    baseline = 1 - 1 / 20
    _record(record_property, "C5 synthetic 20x3 CER",
            f"identical CER {exact.cer:.3f} (must be 0), perturbed CER {perturbed.cer:.3f} over {perturbed.total} "
            f"(must be < {baseline}), {elapsed:.2f}s (limit 30s)")
    assert exact.cer == 0.0
    assert perturbed.total == 300 and perturbed.cer < baseline
    assert elapsed < 30.0


@pytest.fixture(scope="module")
def big_setup(tmp_path_factory):
    """100K-entry table (dim 64), an LM, a 20x3 registry and 1000 utterances."""
    rng = np.random.default_rng(21)
    d = tmp_path_factory.mktemp("big")
    dim = 64
    vocab = [f"t{i:04d}" for i in range(1000)]
    grams = {(w,) for w in vocab}
    while len(grams) < 100_000:
        a, b = rng.integers(len(vocab), size=2)
        grams.add((vocab[a], vocab[b]))
    vectors = rng.normal(size=(len(grams), dim))
    build_table(zip(sorted(grams), vectors), d / "big.bin", dim, 2)
    corpus = [list(rng.choice(vocab, size=rng.integers(3, 11))) for _ in range(3000)]
    lm = build_mini_lm(corpus, 2)
    pairs = [(f"I{i // 3}", " ".join(rng.choice(vocab, size=rng.integers(2, 5)))) for i in range(60)]
    utterances = [" ".join(rng.choice(vocab, size=rng.integers(3, 11))) for _ in range(1000)]
    return d / "big.bin", lm, IntentRegistry.from_pairs(pairs), utterances, dim


def test_c6_lookup_speedup(big_setup, record_property):
    path, lm, reg, utterances, dim = big_setup
    with open_table(path) as table:
        assert table.entry_count == 100_000
        fast_idx = index_paraphrases(reg, LookupNgramBackoff(table, lm, 2))
        fast = benchmark_throughput(fast_idx, utterances, repetitions=3)
        slow_idx = index_paraphrases(reg, Direct(DelayedOracle(PseudoOracle(dim, 0), 0.010)))
        slow = benchmark_throughput(slow_idx, utterances, repetitions=1)
    ratio = speedup(fast, slow)
    _record(record_property, "C6 lookup-ngram-backoff vs 10ms stub",
            f"{fast.throughput_ups:,.0f} vs {slow.throughput_ups:,.1f} utt/s, ratio {ratio:.1f}x (need >= 50); "
            f"lookup absolute {fast.throughput_ups:,.0f} utt/s (informational, expected >= 5,000)")
    print(f"lookup throughput {fast.throughput_ups:,.0f} utt/s", file=sys.stderr)
    assert ratio >= 50


def test_c7_format_round_trips(tmp_path, record_property):
    rng = np.random.default_rng(31)
    vocab = [f"k{i}" for i in range(400)]
    entries = {}
    while len(entries) < 10_000:
        entries[" ".join(rng.choice(vocab, size=rng.integers(1, 4)))] = rng.normal(size=16).astype(np.float32)
    start = time.perf_counter()
    build_table(entries.items(), tmp_path / "rt.bin", 16, 3)
    with open_table(tmp_path / "rt.bin") as t:
        table_bad = sum(t.lookup(k).tobytes() != v.tobytes() for k, v in entries.items())
    table_elapsed = time.perf_counter() - start

    words = [f"w{i}" for i in range(25)]
    corpus = [list(rng.choice(words, size=rng.integers(1, 9))) for _ in range(200)]
    model = build_mini_lm(corpus, 3)
    buf = io.StringIO()
    write_arpa(model, buf)
    parsed = parse_arpa(io.StringIO(buf.getvalue()))
    arpa_err = 0.0
    for a, b in zip(model.tables, parsed.tables):
        assert a.keys() == b.keys()
        for key, e in a.items():
            arpa_err = max(arpa_err, abs(e.log10_prob - b[key].log10_prob))
            if e.log10_bow is not None:
                arpa_err = max(arpa_err, abs(e.log10_bow - b[key].log10_bow))

    vocab_lm = sorted(model.vocab)
    contexts = [()] + [c for table in model.tables[:-1] for c in table]
    norm_err = max(abs(sum(model.prob(w, c) for w in vocab_lm) - 1.0) for c in contexts)

    _record(record_property, "C7 format round trips",
            f"table 10K entries {table_bad} mismatched in {table_elapsed:.2f}s (limit 5s); ARPA max err "
            f"{arpa_err:.1e} (tol 1e-4); LM normalization err {norm_err:.1e} over {len(contexts)} contexts, "
            f"vocab {len(vocab_lm)} (tol 1e-6)")
    assert table_bad == 0 and table_elapsed < 5.0
    assert arpa_err <= 1e-4
    assert len(vocab_lm) <= 30 and norm_err <= 1e-6


def test_c8_service_cli_parity(tmp_path, capsys, record_property):
    task = make_task(tmp_path, intents=10)
    rng = np.random.default_rng(41)
    utts = [u for u, _ in task.perturbed(rng, 70)] + [p for _, p in task.pairs[:30]]
    infile = tmp_path / "utts.txt"
    infile.write_text("".join(u + "\n" for u in utts), encoding="utf-8")
    flags = ["--table", str(task.table), "--arpa", str(task.arpa), "--registry", str(task.registry),
             "--strategy", "lookup-ngram-backoff", "--threshold", "0.4"]
    assert main(["classify", *flags, str(infile)]) == 0
    cli_lines = capsys.readouterr().out.splitlines()

    config = RuntimeConfig(table=str(task.table), arpa=str(task.arpa), registry=str(task.registry),
                           strategy="lookup-ngram-backoff", threshold=0.4)
    runtime = build_runtime(config)
    try:
        client = TestClient(create_app(runtime))
        bodies = [client.post("/classify", json={"utterance": u}) for u in utts]
    finally:
        runtime.close()
    mismatched = sum(r.status_code != 200 or r.text != line for r, line in zip(bodies, cli_lines))
    accepted = sum(json.loads(line)["accepted"] for line in cli_lines)
    _record(record_property, "C8 /classify equals CLI classify",
            f"{len(utts)} utterances ({accepted} accepted), {mismatched} differing bodies")
    assert len(cli_lines) == len(utts) == 100
    assert mismatched == 0
