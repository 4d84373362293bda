"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is picked at import time.  ``use_backend`` switches explicitly,
which the tests and the benchmark rely on.
"""
import numpy as np

from . import _fallback

try:
    from . import _native
except ImportError:  # extension not built
    _native = None

_BACKENDS = {"python": _fallback}
if _native is not None:
    _BACKENDS["native"] = _native

_active = _native if _native is not None else _fallback


def available():
    return sorted(_BACKENDS)


def active():
    return _active.NAME


def use_backend(name):
    """Select ``"native"`` or ``"python"``; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    prev = _active.NAME
    _active = _BACKENDS[name]
    return prev


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def score_rows(X, q, rows=None):
    """Inner product of ``q`` with every row of ``X`` (or only ``rows``)."""
    if rows is not None:
        rows = np.ascontiguousarray(rows, dtype=np.int64)
    return _active.score_rows(_f64(X), _f64(q), rows)


def dense_forward(X, W, b=None):
    """``X @ W.T + b`` computed row by row."""
    return _active.dense_forward(_f64(X), _f64(W), None if b is None else _f64(b))


def topk(scores, tie_rank, k):
    """Indices of the ``k`` best scores, descending, ties by ascending ``tie_rank``."""
    return _active.topk(_f64(scores), np.ascontiguousarray(tie_rank, dtype=np.int64), int(k))


def kmeans_assign(X, centroids):
    """Nearest centroid (squared Euclidean) per row; ties go to the lower index."""
    return _active.kmeans_assign(_f64(X), _f64(centroids))
