"""Precomputed embedding matrices, relevance judgments, and their file formats.

Embedding file layout (little-endian)::

    "SEPE" | version u32 = 1 | count u64 | dim u32 | reserved u32 = 0
    payload: count*dim float32, row-major
    id table: count * (u16 byte length, UTF-8 bytes)

Values are stored as float32 and promoted to float64 on load, so a matrix
that came from disk survives save/load bit-for-bit.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from ._io import atomic_write, read_bytes
from .errors import (
    BadMagic,
    CorruptHeader,
    DimMismatch,
    DuplicateId,
    DuplicatePair,
    IoFailure,
    NonFiniteValue,
    ParseError,
    UnknownId,
)

MAGIC = b"SEPE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQII")


class EmbeddingMatrix:
    """Immutable id-indexed matrix of dense vectors (one row per id)."""

    __slots__ = ("ids", "data", "_index", "_tie_rank")

    def __init__(self, ids, data):
        ids = tuple(str(i) for i in ids)
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if arr.ndim == 1 and len(ids) == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise DimMismatch(f"embedding data must be 2-D, got shape {arr.shape}")
        if arr.shape[1] <= 0:
            raise DimMismatch("embedding dim must be positive")
        if arr.shape[0] != len(ids):
            raise DimMismatch(f"{len(ids)} ids but {arr.shape[0]} rows")
        if not np.isfinite(arr).all():
            r, c = np.argwhere(~np.isfinite(arr))[0]
            raise NonFiniteValue(f"non-finite value at row {r} col {c}")
        index = {}
        for i, name in enumerate(ids):
            if name in index:
                raise DuplicateId(f"duplicate id {name!r}")
            index[name] = i
        arr.setflags(write=False)
        self.ids = ids
        self.data = arr
        self._index = index
        self._tie_rank = None

    @property
    def count(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def __len__(self):
        return self.count

    def __repr__(self):
        return f"EmbeddingMatrix(count={self.count}, dim={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.data, other.data)

    __hash__ = None

    def index_of(self, id_):
        try:
            return self._index[id_]
        except KeyError:
            raise UnknownId(f"unknown id {id_!r}") from None

    def rows(self, ids):
        return np.array([self.index_of(i) for i in ids], dtype=np.int64)

    @property
    def tie_rank(self):
        """Position of each row's id in ascending id order (used to break score ties)."""
        if self._tie_rank is None:
            order = sorted(range(self.count), key=self.ids.__getitem__)
            rank = np.empty(self.count, dtype=np.int64)
            rank[order] = np.arange(self.count)
            rank.setflags(write=False)
            self._tie_rank = rank
        return self._tie_rank

    def with_data(self, data):
        return EmbeddingMatrix(self.ids, data)

    def normalized(self):
        """Copy with every row scaled to unit L2 norm (zero rows left as-is)."""
        norms = np.linalg.norm(self.data, axis=1, keepdims=True)
        return self.with_data(self.data / np.where(norms == 0, 1.0, norms))

    def as_storage_precision(self):
        """Copy rounded to the on-disk float32 precision."""
        return self.with_data(self.data.astype(np.float32))


def lookup(m, id_):
    """Row vector for ``id_``."""
    return m.data[m.index_of(id_)]


def encode_embeddings(m):
    """Serialize ``m``; values are rounded to float32."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, m.count, m.dim, 0)]
    parts.append(np.ascontiguousarray(m.data, dtype="<f4").tobytes())
    for name in m.ids:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise IoFailure(f"id of {len(raw)} bytes exceeds the 65535-byte limit")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_embeddings(buf):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not an embedding file (missing SEPE signature)")
    if len(buf) < _HEADER.size:
        raise CorruptHeader("truncated header")
    _, version, count, dim, reserved = _HEADER.unpack_from(buf)
    if version != FORMAT_VERSION:
        raise CorruptHeader(f"unsupported format version {version}")
    if reserved != 0:
        raise CorruptHeader("reserved header field is not zero")
    if dim == 0:
        raise CorruptHeader("dim is zero")
    payload = count * dim * 4
    off = _HEADER.size
    # an id table needs at least 2 bytes per row
    if off + payload + 2 * count > len(buf):
        raise CorruptHeader(f"header claims {count}x{dim} values but file is {len(buf)} bytes")
    data = np.frombuffer(buf, dtype="<f4", count=count * dim, offset=off).reshape(count, dim)
    off += payload
    ids = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            if off + n > len(buf):
                raise CorruptHeader("id table runs past end of file")
            ids.append(buf[off:off + n].decode("utf-8"))
            off += n
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptHeader(f"malformed id table: {exc}") from exc
    if off != len(buf):
        raise CorruptHeader(f"{len(buf) - off} trailing bytes after id table")
    if not np.isfinite(data).all():
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise NonFiniteValue(f"non-finite value at row {r} col {c}")
    return EmbeddingMatrix(ids, data)


def load_embeddings(path):
    return decode_embeddings(read_bytes(path))


def save_embeddings(m, path):
    atomic_write(path, encode_embeddings(m))


class Qrels:
    """Graded relevance judgments: at most one grade per (query, item) pair."""

    def __init__(self, entries=()):
        table = {}
        for qid, did, grade in entries:
            grade = int(grade)
            if grade < 0:
                raise ParseError(f"negative grade for ({qid}, {did})")
            key = (str(qid), str(did))
            if key in table:
                raise DuplicatePair(f"duplicate judgment for {key}")
            table[key] = grade
        by_query = {}
        for (qid, did), grade in table.items():
            by_query.setdefault(qid, {})[did] = grade
        self._table = table
        self._by_query = {q: MappingProxyType(d) for q, d in by_query.items()}

    @property
    def entries(self):
        return tuple((q, d, g) for (q, d), g in self._table.items())

    def __len__(self):
        return len(self._table)

    def __eq__(self, other):
        if not isinstance(other, Qrels):
            return NotImplemented
        return self._table == other._table

    __hash__ = None

    def query_ids(self):
        return list(self._by_query)

    def judged(self, qid):
        """Mapping item_id -> grade for one query (empty if unjudged)."""
        return self._by_query.get(qid, MappingProxyType({}))

    def relevant(self, qid):
        """Mapping item_id -> grade restricted to grade >= 1."""
        return {d: g for d, g in self.judged(qid).items() if g >= 1}

    def positives(self):
        """(query_id, item_id) for every grade >= 1 entry, in insertion order."""
        return [(q, d) for (q, d), g in self._table.items() if g >= 1]


def parse_qrels(text):
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"line {lineno}: expected 3 tab-separated fields, got {len(cols)}")
        qid, did, raw = cols
        try:
            grade = int(raw.strip())
        except ValueError:
            raise ParseError(f"line {lineno}: grade {raw!r} is not an integer") from None
        if grade < 0:
            raise ParseError(f"line {lineno}: negative grade {grade}")
        if not qid or not did:
            raise ParseError(f"line {lineno}: empty id")
        entries.append((qid, did, grade))
    return Qrels(entries)


def load_qrels(path):
    raw = read_bytes(path)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"qrels file is not UTF-8: {exc}") from exc
    return parse_qrels(text)


def format_qrels(qrels):
    return "".join(f"{q}\t{d}\t{g}\n" for q, d, g in qrels.entries)


def save_qrels(qrels, path):
    atomic_write(path, format_qrels(qrels), text=True)


@dataclass(frozen=True)
class Dataset:
    queries: EmbeddingMatrix
    items: EmbeddingMatrix
    qrels: Qrels
    name: str = field(default="", compare=False)

    def __post_init__(self):
        for qid, did, _ in self.qrels.entries:
            if qid not in self.queries._index:
                raise UnknownId(f"qrels query {qid!r} has no embedding")
            if did not in self.items._index:
                raise UnknownId(f"qrels item {did!r} has no embedding")


QUERIES_FILE = "queries.sepe"
ITEMS_FILE = "items.sepe"
QRELS_FILE = "qrels.tsv"


def save_dataset(ds, directory):
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc
    save_embeddings(ds.queries, directory / QUERIES_FILE)
    save_embeddings(ds.items, directory / ITEMS_FILE)
    save_qrels(ds.qrels, directory / QRELS_FILE)


def load_dataset(directory):
    directory = Path(directory)
    return Dataset(
        load_embeddings(directory / QUERIES_FILE),
        load_embeddings(directory / ITEMS_FILE),
        load_qrels(directory / QRELS_FILE),
        name=directory.name,
    )
