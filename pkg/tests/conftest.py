from __future__ import annotations

import itertools

import numpy as np
import pytest

from usuc.embedding_store import build_table, open_table


@pytest.fixture
def make_table(tmp_path):
    """Build a table from ``{key: vector}`` and open it; closed at teardown."""
    opened = []
    counter = itertools.count()

    def _make(entries, dim=None, max_order=None):
        entries = dict(entries)
        if dim is None:
            dim = len(next(iter(entries.values())))
        if max_order is None:
            max_order = max((len(k.split()) if isinstance(k, str) else len(k) for k in entries), default=1)
        path = tmp_path / f"table{next(counter)}.bin"
        build_table(entries.items(), path, dim, max_order)
        table = open_table(path)
        opened.append(table)
        return table

    yield _make
    for t in opened:
        t.close()


@pytest.fixture
def rng():
    return np.random.default_rng(20190415)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in getattr(rep, "nodeid", "") or rep.when != "call" and outcome != "error":
                continue
            props = dict(rep.user_properties)
            label = props.get("criterion", rep.nodeid.split("::")[-1])
            detail = props.get("detail", "")
            lines.append((label, "PASS" if outcome == "passed" else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for label, status, detail in sorted(lines):
            terminalreporter.write_line(f"{status}  {label}" + (f"  ({detail})" if detail else ""))
