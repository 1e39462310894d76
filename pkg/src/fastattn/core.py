"""Dense matrix primitives shared by every attention variant.

Matrices are 2-D numpy arrays in float32 or float64. All operations here are
pure: inputs are never mutated, outputs are freshly allocated. Feature maps
are channel-first (C, H, W) arrays with an explicit, documented flattening to
pixel-major matrices so that spatial data and attention kernels agree on
layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counting import tally_macs

#: Default small-norm guards, chosen per precision.
DEFAULT_EPS_F64 = 1e-12
DEFAULT_EPS_F32 = 1e-6

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand dimensions do not line up (or are degenerate)."""


def eps_for(dtype) -> float:
    """Default norm guard for a dtype: 1e-12 for float64, 1e-6 for float32."""
    return DEFAULT_EPS_F32 if np.dtype(dtype) == np.dtype(np.float32) else DEFAULT_EPS_F64


def as_matrix(values, dtype=None) -> np.ndarray:
    """Coerce to a 2-D float array, rejecting empty or non-2-D input."""
    matrix = np.asarray(values, dtype=dtype)
    if matrix.dtype not in _FLOAT_DTYPES:
        matrix = matrix.astype(np.float64)
    if matrix.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got array of shape {matrix.shape}")
    if matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ShapeError(f"matrix dimensions must be >= 1, got {matrix.shape}")
    return matrix


def matmul(a, b, *, exact: bool = False) -> np.ndarray:
    """Matrix product ``a @ b`` with MAC accounting.

    Reports m*k*p multiply-accumulates to any active counters. With
    ``exact=True`` the product is computed by sequential accumulation over the
    inner dimension (one rank-1 update per k), which rounds identically to a
    scalar triple loop and is therefore bit-reproducible across runs and
    machines; the default path delegates to BLAS and is merely accurate.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    tally_macs(a.shape[0] * a.shape[1] * b.shape[1])
    if not exact:
        return a @ b
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.result_type(a, b))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def transpose(matrix) -> np.ndarray:
    return as_matrix(matrix).T


def l2_normalize_rows(matrix, eps: float | None = None) -> np.ndarray:
    """Scale each row to unit L2 norm, guarding small rows.

    Each row r becomes r / max(||r||, eps), so exact zero rows stay zero and
    every output row has norm <= 1. ``eps`` defaults per dtype via
    :func:`eps_for` and must be positive.
    """
    matrix = as_matrix(matrix)
    if eps is None:
        eps = eps_for(matrix.dtype)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    norms = np.sqrt(np.sum(matrix * matrix, axis=1, keepdims=True))
    return matrix / np.maximum(norms, np.asarray(eps, dtype=matrix.dtype))


def softmax_rows(matrix) -> np.ndarray:
    """Row-wise softmax with the usual max-subtraction for stability."""
    matrix = as_matrix(matrix)
    shifted = matrix - np.max(matrix, axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / np.sum(expd, axis=1, keepdims=True)


def random_matrix(rows: int, cols: int, seed, distribution: str = "uniform",
                  dtype=np.float64) -> np.ndarray:
    """Seeded random matrix from a PCG64 generator.

    ``distribution`` is one of ``uniform`` ([0, 1)), ``symmetric`` ([-1, 1))
    or ``normal`` (standard normal). Identical arguments give identical
    matrices on every platform; float32 output is drawn in float64 then cast.
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"matrix dimensions must be >= 1, got ({rows}, {cols})")
    rng = np.random.Generator(np.random.PCG64(seed))
    if distribution == "uniform":
        data = rng.random((rows, cols))
    elif distribution == "symmetric":
        data = rng.random((rows, cols)) * 2.0 - 1.0
    elif distribution == "normal":
        data = rng.standard_normal((rows, cols))
    else:
        raise ValueError(f"unknown distribution {distribution!r} "
                         "(expected uniform, symmetric or normal)")
    return data.astype(dtype, copy=False)


@dataclass(frozen=True)
class FeatureMap:
    """Channel-first spatial tensor of shape (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"feature map must be 3-D (C, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"feature map dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def spatial_size(self) -> int:
        return self.height * self.width

    def flatten(self) -> np.ndarray:
        """Pixel-major matrix of shape (H*W, C); row p is pixel (p // W, p % W)."""
        c, h, w = self.data.shape
        return np.ascontiguousarray(self.data.reshape(c, h * w).T)

    @classmethod
    def from_flat(cls, matrix, height: int, width: int) -> "FeatureMap":
        """Inverse of :meth:`flatten` for a (H*W, C) pixel-major matrix."""
        matrix = as_matrix(matrix)
        if matrix.shape[0] != height * width:
            raise ShapeError(f"matrix has {matrix.shape[0]} rows, expected "
                             f"height*width = {height * width}")
        return cls(np.ascontiguousarray(matrix.T).reshape(matrix.shape[1], height, width))


def random_feature_map(channels: int, height: int, width: int, seed,
                       distribution: str = "symmetric", dtype=np.float64) -> FeatureMap:
    flat = random_matrix(height * width, channels, seed, distribution, dtype)
    return FeatureMap.from_flat(flat, height, width)
