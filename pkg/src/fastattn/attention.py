"""Self-attention kernels over flattened spatial features.

Inputs are pixel-major matrices: query and key are (n, c'), value is (n, c),
with n the number of spatial positions. Three cores are provided:

* ``softmax_attention``      -- Softmax(Q K^T) V, the quadratic baseline.
* ``cosine_attention_quadratic`` -- (1/n) (Qhat Khat^T) V with L2-normalized
  rows, materializing the n x n affinity. Reference implementation.
* ``fast_attention``         -- (1/n) Qhat (Khat^T V): the same map computed
  right-to-left, never materializing the affinity. Cost O(n c' c).

``fast_attention`` and ``cosine_attention_quadratic`` compute the same linear
map and differ only by floating-point reassociation. An analytic backward for
the fast core is included for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, as_matrix, l2_normalize_rows, matmul, softmax_rows, transpose


def _check_triple(query, key, value):
    query = as_matrix(query)
    key = as_matrix(key)
    value = as_matrix(value)
    if key.shape != query.shape:
        raise ShapeError(f"query {query.shape} and key {key.shape} must have equal shapes")
    if value.shape[0] != query.shape[0]:
        raise ShapeError(f"value has {value.shape[0]} rows, query has {query.shape[0]}")
    return query, key, value


def softmax_attention(query, key, value) -> np.ndarray:
    query, key, value = _check_triple(query, key, value)
    affinity = softmax_rows(matmul(query, transpose(key)))
    return matmul(affinity, value)


def cosine_affinity(query, key, eps: float | None = None) -> np.ndarray:
    """The n x n matrix of row-cosine similarities, entries in [-1, 1]."""
    query = as_matrix(query)
    key = as_matrix(key)
    if key.shape != query.shape:
        raise ShapeError(f"query {query.shape} and key {key.shape} must have equal shapes")
    qn = l2_normalize_rows(query, eps)
    kn = l2_normalize_rows(key, eps)
    return matmul(qn, transpose(kn))


def cosine_attention_quadratic(query, key, value, eps: float | None = None) -> np.ndarray:
    """(1/n) (Qhat Khat^T) V, computed left-to-right through the affinity."""
    query, key, value = _check_triple(query, key, value)
    out = matmul(cosine_affinity(query, key, eps), value)
    out /= query.shape[0]
    return out


def fast_attention(query, key, value, eps: float | None = None) -> np.ndarray:
    """(1/n) Qhat (Khat^T V), computed right-to-left in O(n c' c)."""
    query, key, value = _check_triple(query, key, value)
    qn = l2_normalize_rows(query, eps)
    kn = l2_normalize_rows(key, eps)
    context = matmul(transpose(kn), value)  # (c', c)
    out = matmul(qn, context)
    out /= query.shape[0]
    return out


def dot_affinity(query, key) -> np.ndarray:
    """Raw Q K^T without normalization. Entries are unbounded."""
    query = as_matrix(query)
    key = as_matrix(key)
    if key.shape != query.shape:
        raise ShapeError(f"query {query.shape} and key {key.shape} must have equal shapes")
    return matmul(query, transpose(key))


def dot_attention_unnormalized(query, key, value) -> np.ndarray:
    """(1/n) Q (K^T V): the reordered core without row normalization.

    Kept as the ablation arm showing what normalization buys; its implicit
    affinity (see :func:`dot_affinity`) is unbounded.
    """
    query, key, value = _check_triple(query, key, value)
    context = matmul(transpose(key), value)
    out = matmul(query, context)
    out /= query.shape[0]
    return out


@dataclass(frozen=True)
class FastAttentionGradients:
    d_query: np.ndarray
    d_key: np.ndarray
    d_value: np.ndarray


def _l2_normalize_backward(raw, grad_normalized, eps: float) -> np.ndarray:
    """Backward of row normalization r -> r / max(||r||, eps).

    For ||r|| >= eps the Jacobian is (I - rhat rhat^T) / ||r||. Rows under
    the guard contribute zero gradient by convention: a dead feature row
    should neither produce NaNs nor receive spurious updates.
    """
    norms = np.sqrt(np.sum(raw * raw, axis=1, keepdims=True))
    guarded = np.maximum(norms, eps)
    unit = raw / guarded
    radial = np.sum(unit * grad_normalized, axis=1, keepdims=True)
    grad = (grad_normalized - radial * unit) / guarded
    return np.where(norms >= eps, grad, grad.dtype.type(0.0))


def fast_attention_backward(query, key, value, upstream,
                            eps: float | None = None) -> FastAttentionGradients:
    """Analytic gradients of ``fast_attention`` w.r.t. query, key and value.

    With Y = (1/n) Qhat (Khat^T V) and upstream gradient G:

        dQhat = (1/n) G (Khat^T V)^T,  dKhat = (1/n) V G^T Qhat,
        dV    = (1/n) Khat (Qhat^T G),

    then dQhat/dKhat are pulled back through the row normalization.
    """
    query, key, value = _check_triple(query, key, value)
    upstream = as_matrix(upstream)
    if upstream.shape != (query.shape[0], value.shape[1]):
        raise ShapeError(f"upstream gradient has shape {upstream.shape}, expected "
                         f"{(query.shape[0], value.shape[1])}")
    from .core import eps_for
    if eps is None:
        eps = eps_for(query.dtype)
    n = query.shape[0]
    qn = l2_normalize_rows(query, eps)
    kn = l2_normalize_rows(key, eps)
    context = matmul(transpose(kn), value)              # (c', c)
    d_qn = matmul(upstream, transpose(context)) / n     # (n, c')
    d_context = matmul(transpose(qn), upstream) / n     # (c', c)
    d_kn = matmul(value, transpose(d_context))          # (n, c')
    d_value = matmul(kn, d_context)                     # (n, c)
    d_query = _l2_normalize_backward(query, d_qn, eps)
    d_key = _l2_normalize_backward(key, d_kn, eps)
    return FastAttentionGradients(d_query=d_query, d_key=d_key, d_value=d_value)
