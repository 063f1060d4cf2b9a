"""N-gram embedding lookup tables.

Tables are built offline from a text dump produced by an external embedding
model and stored in a flat little-endian binary file that is opened through
``mmap``. Opening reads only the fixed header and the last index record, so it
costs the same for a thousand entries as for a million; vectors are paged in
by the OS when a lookup touches them.

Binary layout (all integers little-endian)::

    header   magic b"NGEMBT01" | u32 version | u32 dim | u32 max_order
             | u32 reserved | u64 entry_count                       (32 bytes)
    index    entry_count x (u64 key_offset, u32 key_len, u64 vector_ordinal)
    keys     concatenated UTF-8 canonical keys, in index order
    vectors  entry_count x dim float32

Every section starts on an 8-byte boundary; gaps are zero filled. Offsets in
index records are relative to the start of their section.
"""

from __future__ import annotations

import math
import mmap
import os
import struct
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from usuc.errors import FormatError, TableFormatError
from usuc.text import UNK, canonical_key, normalize

MAGIC = b"NGEMBT01"
VERSION = 1

_HEADER = struct.Struct("<8sIIIIQ")
_RECORD = struct.Struct("<QIQ")
_ALIGN = 8

Entry = tuple[tuple[str, ...], np.ndarray]


def _pad(n: int) -> int:
    return (-n) % _ALIGN


def _key_tokens(key: Sequence[str] | str) -> tuple[str, ...]:
    if isinstance(key, str):
        return tuple(normalize(key))
    return tuple(key)


def parse_text_dump(stream: IO[str] | Iterable[str], source: str | None = None) -> list[Entry]:
    """Read a text embedding dump.

    The first line is ``<entry_count> <dim>``; each further line holds a
    canonical key, a TAB, then ``dim`` space separated floats. Keys are
    normalized. Returns entries in file order with float64 vectors.
    """
    lines = iter(stream)
    try:
        header = next(lines)
    except StopIteration:
        raise FormatError("missing header line", 1, source) from None
    parts = header.split()
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise FormatError(f"malformed header {header.rstrip()!r}; expected '<entry_count> <dim>'", 1, source)
    declared, dim = int(parts[0]), int(parts[1])
    if dim < 1:
        raise FormatError("dim must be positive", 1, source)

    entries: list[Entry] = []
    seen: dict[tuple[str, ...], int] = {}
    for lineno, line in enumerate(lines, start=2):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if line.count("\t") != 1:
            raise FormatError("expected exactly one TAB between key and vector", lineno, source)
        raw_key, raw_vec = line.split("\t")
        key = tuple(normalize(raw_key))
        if not key:
            raise FormatError("empty n-gram key", lineno, source)
        fields = raw_vec.split()
        if len(fields) != dim:
            raise FormatError(f"vector arity {len(fields)} != {dim}", lineno, source)
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise FormatError(f"bad float: {exc}", lineno, source) from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError("non-finite vector element", lineno, source)
        if key in seen:
            raise FormatError(f"duplicate key {' '.join(key)!r} (first seen on line {seen[key]})", lineno, source)
        seen[key] = lineno
        entries.append((key, np.asarray(values, dtype=np.float64)))

    if len(entries) != declared:
        raise FormatError(f"header declares {declared} entries but body has {len(entries)}", 1, source)
    return entries


def write_text_dump(entries: Iterable[Entry], stream: IO[str], dim: int) -> None:
    entries = list(entries)
    stream.write(f"{len(entries)} {dim}\n")
    for key, vec in entries:
        stream.write(canonical_key(key) + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def build_table(
    entries: Iterable[tuple[Sequence[str] | str, Sequence[float] | np.ndarray]],
    path: str | os.PathLike,
    dim: int,
    max_order: int = 2,
) -> Path:
    """Write a binary table. Output bytes depend only on the entry set, not its order."""
    if dim < 1:
        raise ValueError("dim must be positive")
    if max_order < 1:
        raise ValueError("max_order must be >= 1")

    items: dict[bytes, np.ndarray] = {}
    for key, vec in entries:
        tokens = _key_tokens(key)
        if not tokens:
            raise FormatError("empty n-gram key")
        if len(tokens) > max_order:
            raise FormatError(f"key {' '.join(tokens)!r} has order {len(tokens)} > max_order {max_order}")
        kb = canonical_key(tokens).encode("utf-8")
        if kb in items:
            raise FormatError(f"duplicate key {kb.decode('utf-8')!r}")
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (dim,):
            raise FormatError(f"vector for {kb.decode('utf-8')!r} has shape {arr.shape}, expected ({dim},)")
        with np.errstate(over="ignore"):
            arr32 = arr.astype("<f4")
        if not np.all(np.isfinite(arr32)):
            raise FormatError(f"vector for {kb.decode('utf-8')!r} is not finite as float32")
        items[kb] = arr32

    keys = sorted(items)
    count = len(keys)

    index = bytearray()
    offset = 0
    for ordinal, kb in enumerate(keys):
        index += _RECORD.pack(offset, len(kb), ordinal)
        offset += len(kb)
    blob = b"".join(keys)
    vectors = np.stack([items[k] for k in keys]) if count else np.zeros((0, dim), dtype="<f4")

    path = Path(path)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, dim, max_order, 0, count))
        f.write(index)
        f.write(b"\0" * _pad(len(index)))
        f.write(blob)
        f.write(b"\0" * _pad(len(blob)))
        f.write(vectors.astype("<f4", copy=False).tobytes())
    return path


class NgramTable:
    """Read-only handle on a memory mapped table.

    Safe to share between threads: the mapping is never written and lookups
    keep no per-call state on the handle.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        with open(self.path, "rb") as f:
            size = os.fstat(f.fileno()).st_size
            if size < _HEADER.size:
                raise TableFormatError(f"{self.path}: file too short for header ({size} bytes)")
            self._mm = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
        try:
            self._load_header(size)
        except Exception:
            self._mm.close()
            raise

    def _load_header(self, size: int) -> None:
        magic, version, dim, max_order, _reserved, count = _HEADER.unpack_from(self._mm, 0)
        if magic != MAGIC:
            raise TableFormatError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise TableFormatError(f"{self.path}: unsupported version {version}")
        if dim < 1 or max_order < 1:
            raise TableFormatError(f"{self.path}: invalid dim/max_order in header")
        self.dim = dim
        self.max_order = max_order
        self.entry_count = count

        self._index_start = _HEADER.size
        index_len = count * _RECORD.size
        self._keys_start = self._index_start + index_len + _pad(index_len)
        if self._keys_start > size:
            raise TableFormatError(f"{self.path}: truncated in index section")
        if count:
            off, klen, _ = _RECORD.unpack_from(self._mm, self._index_start + (count - 1) * _RECORD.size)
            blob_len = off + klen
        else:
            blob_len = 0
        self._vectors_start = self._keys_start + blob_len + _pad(blob_len)
        expected = self._vectors_start + count * dim * 4
        if size != expected:
            kind = "truncated" if size < expected else "trailing bytes after vector section"
            raise TableFormatError(f"{self.path}: {kind} (size {size}, header implies {expected})")
        # Views only; nothing is read until indexed.
        self._vectors = np.frombuffer(self._mm, dtype="<f4", count=count * dim, offset=self._vectors_start).reshape(
            count, dim
        )
        self.unk_vector = self.lookup(UNK)

    def __len__(self) -> int:
        return self.entry_count

    def __repr__(self) -> str:
        return f"NgramTable({str(self.path)!r}, entries={self.entry_count}, dim={self.dim}, max_order={self.max_order})"

    def __enter__(self) -> "NgramTable":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._vectors = None
        self.unk_vector = None
        try:
            self._mm.close()
        except BufferError:
            # caller still holds vector views; the mapping is released with them
            pass

    def _key_at(self, i: int) -> bytes:
        off, klen, _ = _RECORD.unpack_from(self._mm, self._index_start + i * _RECORD.size)
        start = self._keys_start + off
        return self._mm[start : start + klen]

    def _find(self, kb: bytes) -> int:
        mm = self._mm
        unpack = _RECORD.unpack_from
        istart, kstart, rsize = self._index_start, self._keys_start, _RECORD.size
        lo, hi = 0, self.entry_count
        while lo < hi:
            mid = (lo + hi) >> 1
            off, klen, ordinal = unpack(mm, istart + mid * rsize)
            start = kstart + off
            probe = mm[start : start + klen]
            if probe < kb:
                lo = mid + 1
            elif probe > kb:
                hi = mid
            else:
                return ordinal
        return -1

    def lookup_bytes(self, kb: bytes) -> np.ndarray | None:
        ordinal = self._find(kb)
        if ordinal < 0:
            return None
        return self._vectors[ordinal]

    def lookup(self, key: Sequence[str] | str) -> np.ndarray | None:
        """Stored float32 vector for ``key``, or None when the n-gram is not in the table."""
        return self.lookup_bytes(canonical_key(_key_tokens(key)).encode("utf-8"))

    def __contains__(self, key: Sequence[str] | str) -> bool:
        return self._find(canonical_key(_key_tokens(key)).encode("utf-8")) >= 0

    def keys(self) -> Iterator[str]:
        """Keys in index (sorted) order."""
        for i in range(self.entry_count):
            yield self._key_at(i).decode("utf-8")

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for i in range(self.entry_count):
            _, _, ordinal = _RECORD.unpack_from(self._mm, self._index_start + i * _RECORD.size)
            yield self._key_at(i).decode("utf-8"), self._vectors[ordinal]


def open_table(path: str | os.PathLike) -> NgramTable:
    return NgramTable(path)
