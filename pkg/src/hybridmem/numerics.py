"""Dense float32 tensor primitives used by the matching code.

Tensors are plain ``numpy`` arrays. Inputs are validated (rank, finiteness,
matching widths) and never broadcast. Reductions run in float64 and the
result is rounded back to float32.
"""
from __future__ import annotations

import numpy as np

from .errors import EmptyAxis, NonFiniteValue, ShapeMismatch

DTYPE = np.float32


def as_tensor(x, ndim: int | None = None, name: str = "tensor") -> np.ndarray:
    """Convert ``x`` to a float32 array, checking rank and finiteness."""
    arr = np.asarray(x, dtype=DTYPE)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeMismatch(f"{name}: expected rank {ndim}, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name}: contains NaN or Inf")
    return arr


def softmax(x, axis: str = "rows") -> np.ndarray:
    """Stable softmax of a rank-2 tensor.

    ``axis="rows"`` normalises each row (reduction over columns), ``"cols"``
    normalises each column.
    """
    x = as_tensor(x, 2, "x").astype(np.float64)
    if axis not in ("rows", "cols"):
        raise ValueError(f"axis must be 'rows' or 'cols', got {axis!r}")
    ax = 1 if axis == "rows" else 0
    if x.shape[ax] == 0:
        raise EmptyAxis(f"softmax over empty axis (shape {x.shape})")
    z = np.exp(x - x.max(axis=ax, keepdims=True))
    return (z / z.sum(axis=ax, keepdims=True)).astype(DTYPE)


def _neg_l2_f64(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    q = q.astype(np.float64)
    k = k.astype(np.float64)
    d = (q * q).sum(1)[:, None] - 2.0 * q @ k.T + (k * k).sum(1)[None, :]
    # expansion can go slightly positive through cancellation
    return -np.maximum(d, 0.0)


def pairwise_neg_l2(Q, K) -> np.ndarray:
    """Entry ``(i, j)`` is ``-||Q_i - K_j||^2``."""
    Q = as_tensor(Q, 2, "Q")
    K = as_tensor(K, 2, "K")
    if Q.shape[1] != K.shape[1]:
        raise ShapeMismatch(f"width mismatch: Q {Q.shape} vs K {K.shape}")
    return _neg_l2_f64(Q, K).astype(DTYPE)


def attention(Q, K, V) -> np.ndarray:
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(D)) V``."""
    Q = as_tensor(Q, 2, "Q")
    K = as_tensor(K, 2, "K")
    V = as_tensor(V, 2, "V")
    if Q.shape[1] != K.shape[1]:
        raise ShapeMismatch(f"query/key width mismatch: {Q.shape} vs {K.shape}")
    if K.shape[0] != V.shape[0]:
        raise ShapeMismatch(f"key/value row mismatch: {K.shape} vs {V.shape}")
    if K.shape[0] == 0:
        raise EmptyAxis("attention over zero keys")
    logits = Q.astype(np.float64) @ K.astype(np.float64).T / np.sqrt(Q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return (w @ V.astype(np.float64)).astype(DTYPE)


def matmul(A, B, name: str = "matmul") -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ShapeMismatch(f"{name}: cannot multiply {A.shape} by {B.shape}")
    return (A.astype(np.float64) @ B.astype(np.float64)).astype(DTYPE)
