import numpy as np

from .errors import DimMismatch, NonFinite


def _check(scores, temperature):
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0 or S.shape[1] < S.shape[0]:
        raise DimMismatch(f"score matrix must be B x M with M >= B >= 1, got {S.shape}")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not np.isfinite(S).all():
        raise NonFinite("score matrix contains non-finite values")
    return S


def info_nce_with_grad(scores, temperature):
    """Loss and d(loss)/d(scores) for in-batch InfoNCE.

    Row ``i`` of ``scores`` holds query ``i`` against every candidate; its
    positive is column ``i``.  Square input is the usual in-batch case.
    """
    S = _check(scores, temperature)
    B = S.shape[0]
    Z = S / temperature
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    denom = E.sum(axis=1)
    diag = np.arange(B)
    log_p = Z[diag, diag] - np.log(denom)
    loss = float(-log_p.mean()) + 0.0  # no negative zero
    P = E / denom[:, None]
    P[diag, diag] -= 1.0
    grad = P / (B * temperature)
    if not np.isfinite(loss):
        raise NonFinite("InfoNCE loss is not finite")
    return loss, grad


def info_nce_loss(scores, temperature=1.0):
    """Mean over rows of ``-log softmax(scores[i] / temperature)[i]``."""
    return info_nce_with_grad(scores, temperature)[0]
