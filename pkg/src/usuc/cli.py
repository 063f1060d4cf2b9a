"""``usuc`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data/parse error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import itertools
import json
import logging
import sys
from typing import IO, ContextManager, Sequence

from usuc.backoff_lm import build_mini_lm, write_arpa
from usuc.classifier import index_paraphrases
from usuc.embedder import PseudoOracle
from usuc.embedding_store import build_table, open_table, parse_text_dump, write_text_dump
from usuc.errors import FormatError
from usuc.evaluation import benchmark_throughput, evaluate_cer, load_test_set, speedup
from usuc.runtime import STRATEGIES, ConfigError, build_runtime, dumps_line, load_config
from usuc.text import normalize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("usuc")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _runtime_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("runtime configuration (flags override --config / $USUC_CONFIG)")
    g.add_argument("--config", help="key=value config file")
    g.add_argument("--table", help="binary n-gram embedding table")
    g.add_argument("--arpa", help="ARPA back-off language model")
    g.add_argument("--registry", help="intent<TAB>paraphrase TSV")
    g.add_argument("--strategy", choices=STRATEGIES)
    g.add_argument("--paraphrase-strategy", choices=STRATEGIES, help="embed paraphrases with a different strategy")
    g.add_argument("--n", type=int, help="n-gram order used for pooling (default 2)")
    g.add_argument("--dim", type=int, help="embedding dimension (direct-pseudo)")
    g.add_argument("--threshold", type=float, help="reject decisions scoring below this (default 0.0)")
    g.add_argument("--seed", type=int, help="pseudo oracle seed")
    g.add_argument("--oracle-delay-ms", type=float, help="per-call sleep added to the direct oracle")
    g.add_argument("--listen", help="host:port for serve")
    return p


def _open_in(path: str | None) -> ContextManager[IO[str]]:
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdin)
    return open(path, encoding="utf-8", newline="")


def _config_from(args: argparse.Namespace):
    return load_config(vars(args), args.config)


def _pseudo_entries(vocab: list[str], order: int, dim: int, seed: int):
    oracle = PseudoOracle(dim, seed)
    for k in range(1, order + 1):
        for gram in itertools.product(vocab, repeat=k):
            yield gram, oracle.embed(gram)


def cmd_build_table(args: argparse.Namespace) -> int:
    if args.gen_pseudo:
        if args.dump:
            raise ConfigError("give either a dump file or --gen-pseudo, not both")
        if args.dim is None:
            raise ConfigError("--gen-pseudo requires --dim")
        with open(args.gen_pseudo, encoding="utf-8") as f:
            vocab = list(dict.fromkeys(t for line in f for t in normalize(line)))
        if not vocab:
            raise FormatError("vocabulary file is empty", None, args.gen_pseudo)
        order = args.n or 2
        entries = list(_pseudo_entries(vocab, order, args.dim, args.seed or 0))
        dim, max_order = args.dim, args.order or order
        if args.keep_dump:
            with open(args.keep_dump, "w", encoding="utf-8", newline="\n") as f:
                write_text_dump(entries, f, dim)
    else:
        if not args.dump:
            raise ConfigError("a dump file (or --gen-pseudo VOCAB) is required")
        with _open_in(args.dump) as f:
            entries = parse_text_dump(f, args.dump)
        if entries:
            dim = len(entries[0][1])
        else:
            with _open_in(args.dump) as f:
                dim = int(f.readline().split()[1])
        max_order = args.order or max((len(k) for k, _ in entries), default=1)
    build_table(entries, args.out, dim, max_order)
    with open_table(args.out) as t:
        print(f"entry_count={t.entry_count} dim={t.dim} max_order={t.max_order}")
    return EXIT_OK


def cmd_build_lm(args: argparse.Namespace) -> int:
    with _open_in(args.corpus) as f:
        corpus = [normalize(line) for line in f]
    try:
        model = build_mini_lm(corpus, args.order)
    except ValueError as exc:
        raise FormatError(str(exc), None, args.corpus) from None
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        write_arpa(model, f)
    print("order=%d counts=%s" % (model.order, ",".join(map(str, model.counts()))))
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    runtime = build_runtime(_config_from(args))
    out = sys.stdout
    with _open_in(args.input) as f:
        for line in f:
            utterance = line.rstrip("\r\n")
            out.write(dumps_line(runtime.classify_line(utterance)) + "\n")
    out.flush()
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    runtime = build_runtime(_config_from(args))
    with _open_in(args.test) as f:
        test_set = load_test_set(f, args.test)
    try:
        report = evaluate_cer(
            runtime.index,
            test_set,
            runtime.config.threshold,
            rejects_as_errors=not args.exclude_rejects,
            workers=args.workers,
        )
    except ValueError as exc:
        raise FormatError(str(exc), None, args.test) from None
    for w in report.coverage_warnings:
        log.warning(w)
    print(json.dumps(report.to_json(), indent=2))
    if args.figure:
        from usuc.plotting import plot_eval_report

        plot_eval_report(report, args.figure)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    runtime = build_runtime(_config_from(args))
    with _open_in(args.input) as f:
        # accepts plain utterance files and utterance<TAB>intent test sets
        utterances = [line.split("\t")[0] for line in f if line.strip() and not line.startswith("#")]
    if not utterances:
        raise FormatError("no utterances", None, args.input)
    reps = args.reps
    runs = [benchmark_throughput(runtime.index, utterances, reps, runtime.config.threshold)]
    for name in args.compare or []:
        other = index_paraphrases(runtime.registry, runtime.make_strategy(name))
        runs.append(benchmark_throughput(other, utterances, reps, runtime.config.threshold))
    result = {"runs": [r.to_json() for r in runs]}
    if len(runs) > 1:
        result["speedup_vs_first"] = [speedup(runs[0], r) for r in runs[1:]]
    print(json.dumps(result, indent=2))
    if args.figure:
        from usuc.plotting import plot_throughput

        plot_throughput(runs, args.figure)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from usuc.service import serve

    runtime = build_runtime(_config_from(args))
    runtime.config.listen_address()
    serve(runtime)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="usuc", description="Nearest-paraphrase intent routing over n-gram embedding tables.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    rt = _runtime_flags()

    p = sub.add_parser("build-table", help="build a binary embedding table from a text dump")
    p.add_argument("dump", nargs="?", help="text dump (header '<count> <dim>', then key<TAB>floats)")
    p.add_argument("-o", "--out", required=True, help="output table path")
    p.add_argument("--order", type=int, help="max n-gram order stored in the header (default: longest key)")
    p.add_argument("--gen-pseudo", metavar="VOCAB", help="generate all k-grams (k <= --n) of a vocabulary with the pseudo oracle")
    p.add_argument("--n", type=int, help="highest order generated by --gen-pseudo (default 2)")
    p.add_argument("--dim", type=int, help="vector dimension for --gen-pseudo")
    p.add_argument("--seed", type=int, help="pseudo oracle seed for --gen-pseudo")
    p.add_argument("--keep-dump", metavar="PATH", help="also write the generated text dump")
    p.set_defaults(func=cmd_build_table)

    p = sub.add_parser("build-lm", help="train a Witten-Bell back-off LM and write ARPA")
    p.add_argument("corpus", help="one sentence per line")
    p.add_argument("-o", "--out", required=True, help="output ARPA path")
    p.add_argument("--order", type=int, default=2)
    p.set_defaults(func=cmd_build_lm)

    p = sub.add_parser("classify", parents=[rt], help="classify one utterance per input line, JSON lines out")
    p.add_argument("input", nargs="?", help="input file (default stdin)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", parents=[rt], help="classification error rate on an utterance<TAB>intent file")
    p.add_argument("test", help="test set TSV")
    p.add_argument("--exclude-rejects", action="store_true", help="drop rejected utterances instead of counting them as errors")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--figure", help="write a per-intent error rate chart here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[rt], help="end-to-end throughput in utterances per second")
    p.add_argument("input", help="utterances, one per line (a test TSV also works)")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--compare", action="append", choices=STRATEGIES, help="also time this strategy on the same input")
    p.add_argument("--figure", help="write a throughput chart here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", parents=[rt], help="HTTP classify service")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usuc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"usuc: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"usuc: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
