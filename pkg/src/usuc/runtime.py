"""Run-time configuration and assembly of table, LM, registry and index.

Configuration precedence: command line flags, then a ``key=value`` config
file (``--config`` or ``$USUC_CONFIG``), then built-in defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from typing import IO, Any

from usuc.backoff_lm import BackoffModel, parse_arpa
from usuc.classifier import IntentRegistry, ParaphraseIndex, classify, index_paraphrases, load_registry
from usuc.embedder import DelayedOracle, Direct, LookupNgram, LookupNgramBackoff, LookupWord, PseudoOracle
from usuc.embedding_store import NgramTable, open_table
from usuc.errors import UsucError

STRATEGIES = ("direct-pseudo", "lookup-word", "lookup-ngram", "lookup-ngram-backoff")
TABLE_STRATEGIES = STRATEGIES[1:]


class ConfigError(UsucError):
    """Invalid or inconsistent configuration."""


@dataclass
class RuntimeConfig:
    table: str | None = None
    arpa: str | None = None
    registry: str | None = None
    strategy: str = "lookup-ngram"
    n: int = 2
    dim: int | None = None
    threshold: float = 0.0
    seed: int = 0
    listen: str = "127.0.0.1:8080"
    paraphrase_strategy: str | None = None
    oracle_delay_ms: float = 0.0

    def validate(self) -> None:
        for name in filter(None, (self.strategy, self.paraphrase_strategy)):
            if name not in STRATEGIES:
                raise ConfigError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
            if name in TABLE_STRATEGIES and not self.table:
                raise ConfigError(f"strategy {name} requires --table")
            if name == "lookup-ngram-backoff" and not self.arpa:
                raise ConfigError("strategy lookup-ngram-backoff requires --arpa")
            if name == "direct-pseudo" and self.dim is None and not self.table:
                raise ConfigError("strategy direct-pseudo requires --dim")
        if self.n < 1:
            raise ConfigError("--n must be >= 1")
        if self.dim is not None and self.dim < 1:
            raise ConfigError("--dim must be positive")
        if self.oracle_delay_ms < 0:
            raise ConfigError("oracle delay must be >= 0")
        if not self.registry:
            raise ConfigError("--registry is required")

    def listen_address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ConfigError(f"bad listen address {self.listen!r}; expected host:port") from None


_FIELD_TYPES = {f.name: f.type for f in fields(RuntimeConfig)}


def _coerce(key: str, value: str) -> Any:
    kind = _FIELD_TYPES[key]
    try:
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None
    return value


def parse_config_file(stream: IO[str], source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(overrides: dict[str, Any], config_path: str | None = None) -> RuntimeConfig:
    """Merge defaults, the config file and non-None ``overrides``."""
    values: dict[str, Any] = {}
    path = config_path or os.environ.get("USUC_CONFIG")
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                values.update(parse_config_file(f, path))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None and k in _FIELD_TYPES})
    return RuntimeConfig(**values)


def _open_text(path: str) -> IO[str]:
    return open(path, encoding="utf-8", newline="")


@dataclass
class Runtime:
    config: RuntimeConfig
    table: NgramTable | None
    lm: BackoffModel | None
    registry: IntentRegistry
    index: ParaphraseIndex

    def make_strategy(self, name: str):
        return make_strategy(name, self.config, self.table, self.lm)

    def classify_line(self, utterance: str) -> dict:
        """JSON-ready result for one utterance; errors become ``{"utterance", "error"}``."""
        try:
            return classify(self.index, utterance, self.config.threshold).to_json(utterance)
        except ValueError as exc:
            return {"utterance": utterance, "error": str(exc)}

    def close(self) -> None:
        if self.table is not None:
            self.table.close()


def dumps_line(obj: dict) -> str:
    """The one serialization used for classify output, on stdout and over HTTP."""
    return json.dumps(obj, ensure_ascii=False)


def make_strategy(name: str, config: RuntimeConfig, table: NgramTable | None, lm: BackoffModel | None):
    if name == "direct-pseudo":
        dim = config.dim if config.dim is not None else table.dim
        oracle = PseudoOracle(dim, config.seed)
        if config.oracle_delay_ms > 0:
            oracle = DelayedOracle(oracle, config.oracle_delay_ms / 1000.0)
        return Direct(oracle)
    try:
        if name == "lookup-word":
            return LookupWord(table)
        if name == "lookup-ngram":
            return LookupNgram(table, config.n)
        if name == "lookup-ngram-backoff":
            return LookupNgramBackoff(table, lm, config.n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown strategy {name!r}")


def build_runtime(config: RuntimeConfig) -> Runtime:
    """Open every configured resource and index the registry.

    Raises ``ConfigError`` for inconsistent settings, ``FormatError`` for bad
    data files and ``OSError`` for unreadable ones.
    """
    config.validate()
    table = open_table(config.table) if config.table else None
    try:
        if table is not None and config.dim is not None and config.dim != table.dim:
            raise ConfigError(f"--dim {config.dim} does not match table dim {table.dim}")
        lm = None
        if config.arpa:
            with _open_text(config.arpa) as f:
                lm = parse_arpa(f, config.arpa)
        with _open_text(config.registry) as f:
            registry = load_registry(f, config.registry)
        strategy = make_strategy(config.strategy, config, table, lm)
        para = make_strategy(config.paraphrase_strategy, config, table, lm) if config.paraphrase_strategy else None
        if para is not None and para.dim != strategy.dim:
            raise ConfigError(f"paraphrase strategy dim {para.dim} != utterance strategy dim {strategy.dim}")
        index = index_paraphrases(registry, strategy, para)
    except BaseException:
        if table is not None:
            table.close()
        raise
    return Runtime(config, table, lm, registry, index)
