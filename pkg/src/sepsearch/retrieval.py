"""Inner-product scoring, exact and IVF top-k search, and head folding.

Rankings are total orders: score descending, then item id ascending.  All
scoring goes through ``kernels.score_rows``, whose per-row arithmetic does
not depend on which rows are scored together; probing every IVF bucket
therefore reproduces brute force exactly, scores included.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._io import atomic_write, read_bytes
from .errors import BadMagic, BadParams, CorruptHeader, DimMismatch, ParseError
from .head import apply, apply_batch

INDEX_MAGIC = b"SEPI"
INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple  # ((item_id, score), ...)

    def item_ids(self):
        return [d for d, _ in self.entries]

    def scores(self):
        return [s for _, s in self.entries]

    def __len__(self):
        return len(self.entries)


def score(qv, dv):
    qv = np.asarray(qv, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    if qv.shape != dv.shape or qv.ndim != 1:
        raise DimMismatch(f"cannot score vectors of shapes {qv.shape} and {dv.shape}")
    return float(kernels.score_rows(dv[None, :], qv)[0])


def relevance_prob(s):
    """Sigmoid of a score, evaluated without overflow for either sign."""
    if s >= 0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


def _ranked(query_id, items, rows, scores):
    return RankedList(query_id, tuple((items.ids[r], float(s) + 0.0) for r, s in zip(rows, scores)))


def _check_query(tq, items):
    tq = np.asarray(tq, dtype=np.float64)
    if tq.ndim != 1 or tq.shape[0] != items.dim:
        raise DimMismatch(f"query of shape {tq.shape} against items of dim {items.dim}")
    return tq


def top_k_exact(tq, items, k, query_id=""):
    """Brute-force top ``k`` items for an (already transformed) query vector."""
    tq = _check_query(tq, items)
    if k < 1:
        raise BadParams("k must be at least 1")
    scores = kernels.score_rows(items.data, tq)
    sel = kernels.topk(scores, items.tie_rank, k)
    return _ranked(query_id, items, sel, scores[sel])


def fold_head(head, queries):
    """Precompose ``head`` into the query embeddings (the folded query encoder)."""
    if head.in_dim is not None and head.in_dim != queries.dim:
        raise DimMismatch(f"head input dim {head.in_dim} != query dim {queries.dim}")
    return apply_batch(head, queries)


@dataclass(frozen=True, eq=False)
class IvfIndex:
    centroids: np.ndarray  # C x dim, float32-representable
    lists: tuple  # C int64 arrays of item row indices
    kmeans_iters: int | None = None
    seed: int | None = None

    @property
    def n_lists(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    @property
    def n_items(self):
        return int(sum(len(b) for b in self.lists))

    def same_as(self, other):
        return (
            np.array_equal(self.centroids, other.centroids)
            and len(self.lists) == len(other.lists)
            and all(np.array_equal(a, b) for a, b in zip(self.lists, other.lists))
        )


def _kmeans(X, C, iters, seed):
    rng = np.random.default_rng(seed)
    cent = X[np.sort(rng.choice(X.shape[0], size=C, replace=False))].copy()
    for _ in range(iters):
        labels = kernels.kmeans_assign(X, cent)
        sums = np.zeros_like(cent)
        np.add.at(sums, labels, X)
        counts = np.bincount(labels, minlength=C)
        nonempty = counts > 0
        cent[nonempty] = sums[nonempty] / counts[nonempty, None]
    # centroids live at storage precision so a saved index reloads exactly
    cent = cent.astype(np.float32).astype(np.float64)
    return cent, kernels.kmeans_assign(X, cent)


def build_ivf(items, n_lists, kmeans_iters=10, seed=0):
    """IVF-flat index: k-means (Euclidean) buckets over the item vectors."""
    if not 1 <= n_lists <= items.count:
        raise BadParams(f"number of lists must be in [1, {items.count}], got {n_lists}")
    if kmeans_iters < 0 or seed < 0:
        raise BadParams("kmeans_iters and seed must be non-negative")
    cent, labels = _kmeans(items.data, n_lists, kmeans_iters, seed)
    lists = tuple(np.flatnonzero(labels == c).astype(np.int64) for c in range(n_lists))
    return IvfIndex(cent, lists, kmeans_iters, seed)


def search_ivf(ix, items, tq, k, nprobe, query_id=""):
    """Top ``k`` among the members of the ``nprobe`` buckets whose centroids score highest."""
    if not 1 <= nprobe <= ix.n_lists:
        raise BadParams(f"nprobe must be in [1, {ix.n_lists}], got {nprobe}")
    if k < 1:
        raise BadParams("k must be at least 1")
    if ix.dim != items.dim:
        raise DimMismatch(f"index dim {ix.dim} != item dim {items.dim}")
    if ix.n_items != items.count:
        raise BadParams(f"index covers {ix.n_items} items, matrix has {items.count}")
    tq = _check_query(tq, items)
    cscores = kernels.score_rows(ix.centroids, tq)
    probe = kernels.topk(cscores, np.arange(ix.n_lists, dtype=np.int64), nprobe)
    rows = np.sort(np.concatenate([ix.lists[c] for c in probe]))
    if rows.size == 0:
        return RankedList(query_id, ())
    scores = kernels.score_rows(items.data, tq, rows)
    sel = kernels.topk(scores, items.tie_rank[rows], k)
    return _ranked(query_id, items, rows[sel], scores[sel])


def search(queries, items, k, head=None, index=None, nprobe=None, threads=1):
    """Rank ``items`` for every query.

    With ``head`` the queries are folded first; with ``index`` the IVF path is
    used (``nprobe`` defaults to probing every bucket).
    """
    tq = queries if head is None else fold_head(head, queries)
    if tq.dim != items.dim:
        raise DimMismatch(f"query dim {tq.dim} != item dim {items.dim}")
    if index is not None and nprobe is None:
        nprobe = index.n_lists

    def one(i):
        if index is None:
            return top_k_exact(tq.data[i], items, k, tq.ids[i])
        return search_ivf(index, items, tq.data[i], k, nprobe, tq.ids[i])

    if threads <= 1:
        return [one(i) for i in range(tq.count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(tq.count)))


def search_with_head(head, queries, items, k):
    """Apply ``head`` to one query at a time, then search (the unfolded path)."""
    return [top_k_exact(apply(head, queries.data[i]), items, k, qid) for i, qid in enumerate(queries.ids)]


def encode_index(ix):
    C, dim = ix.centroids.shape
    offsets = np.zeros(C + 1, dtype="<u8")
    offsets[1:] = np.cumsum([len(b) for b in ix.lists])
    members = np.concatenate(ix.lists).astype("<u8") if C else np.zeros(0, "<u8")
    return b"".join([
        INDEX_MAGIC,
        struct.pack("<III", INDEX_FORMAT_VERSION, C, dim),
        ix.centroids.astype("<f4").tobytes(),
        offsets.tobytes(),
        members.tobytes(),
    ])


def decode_index(buf):
    if buf[:4] != INDEX_MAGIC:
        raise BadMagic("not an index file (missing SEPI signature)")
    if len(buf) < 16:
        raise CorruptHeader("truncated index header")
    version, C, dim = struct.unpack_from("<III", buf, 4)
    if version != INDEX_FORMAT_VERSION:
        raise CorruptHeader(f"unsupported index version {version}")
    off = 16
    need = off + 4 * C * dim + 8 * (C + 1)
    if C == 0 or dim == 0 or len(buf) < need:
        raise CorruptHeader("index header inconsistent with file size")
    cent = np.frombuffer(buf, dtype="<f4", count=C * dim, offset=off).reshape(C, dim).astype(np.float64)
    off += 4 * C * dim
    offsets = np.frombuffer(buf, dtype="<u8", count=C + 1, offset=off).astype(np.int64)
    off += 8 * (C + 1)
    n = int(offsets[-1])
    if offsets[0] != 0 or np.any(np.diff(offsets) < 0) or len(buf) != off + 8 * n:
        raise CorruptHeader("bucket offsets inconsistent with file size")
    members = np.frombuffer(buf, dtype="<u8", count=n, offset=off).astype(np.int64)
    lists = tuple(members[offsets[c]:offsets[c + 1]].copy() for c in range(C))
    if n and (np.unique(members).size != n or members.max() >= n):
        raise CorruptHeader("bucket members are not a partition of the item rows")
    return IvfIndex(cent, lists)


def save_index(ix, path):
    atomic_write(path, encode_index(ix))


def load_index(path):
    return decode_index(read_bytes(path))


def format_run(runs, run_tag="sepsearch"):
    """TREC run lines: ``qid Q0 docid rank score tag``."""
    lines = []
    for run in runs:
        for rank, (did, s) in enumerate(run.entries, 1):
            lines.append(f"{run.query_id} Q0 {did} {rank} {s + 0.0:.6f} {run_tag}\n")
    return "".join(lines)


def parse_run(text):
    per_query = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split()
        if len(cols) != 6:
            raise ParseError(f"run line {lineno}: expected 6 fields, got {len(cols)}")
        qid, _, did, rank, s, _ = cols
        try:
            per_query.setdefault(qid, []).append((int(rank), did, float(s)))
        except ValueError:
            raise ParseError(f"run line {lineno}: bad rank or score") from None
    return [
        RankedList(qid, tuple((d, s) for _, d, s in sorted(rows)))
        for qid, rows in per_query.items()
    ]


def save_run(runs, path, run_tag="sepsearch"):
    atomic_write(path, format_run(runs, run_tag), text=True)


def load_run(path):
    return parse_run(read_bytes(path).decode("utf-8"))
