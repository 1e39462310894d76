"""Binary tensor container used for fixtures, golden values and weights.

Layout (all little-endian):

    bytes 0..3    magic ``FATN``
    u32           format version (currently 1)
    u8            dtype code: 1 = float32, 2 = float64
    u32           rank
    rank * u64    dimensions
    payload       row-major element data

Loads are strict: wrong magic, unknown version or dtype, short files and
trailing bytes each fail with a dedicated error type so callers can tell
"not our format" apart from "our format, damaged".
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import FeatureMap

MAGIC = b"FATN"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

_HEAD = struct.Struct("<4sIBI")  # magic, version, dtype code, rank


class TensorFormatError(ValueError):
    """Base class for tensor container parse failures."""


class BadMagicError(TensorFormatError):
    """File does not start with the container magic."""


class UnsupportedFormatError(TensorFormatError):
    """Recognized container, but a version/dtype/layout we cannot read."""


class TruncatedFileError(TensorFormatError):
    """File ends before the declared data does."""


def save_tensor(path, array) -> None:
    """Write an array (or FeatureMap) of rank >= 1 in float32/float64."""
    if isinstance(array, FeatureMap):
        array = array.data
    array = np.asarray(array)
    if array.dtype not in _DTYPE_CODES:
        array = array.astype(np.float64)
    if array.ndim < 1:
        raise TensorFormatError("cannot store rank-0 tensors")
    header = _HEAD.pack(MAGIC, FORMAT_VERSION, _DTYPE_CODES[array.dtype], array.ndim)
    dims = struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(header + dims + payload)


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise TruncatedFileError(
            f"{path}: need {_HEAD.size} header bytes, file has {len(raw)}")
    magic, version, dtype_code, rank = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedFormatError(
            f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}")
    if dtype_code not in _CODE_DTYPES:
        raise UnsupportedFormatError(f"{path}: unknown dtype code {dtype_code}")
    dims_end = _HEAD.size + 8 * rank
    if len(raw) < dims_end:
        raise TruncatedFileError(
            f"{path}: need {dims_end} bytes for {rank} dimension sizes, "
            f"file has {len(raw)}")
    dims = struct.unpack_from(f"<{rank}Q", raw, _HEAD.size)
    dtype = _CODE_DTYPES[dtype_code]
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + count * dtype.itemsize
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: payload needs {expected} bytes total, file has {len(raw)}")
    if len(raw) > expected:
        raise UnsupportedFormatError(
            f"{path}: {len(raw) - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)


def load_feature_map(path) -> FeatureMap:
    array = load_tensor(path)
    if array.ndim != 3:
        raise TensorFormatError(
            f"{path}: expected a rank-3 feature map, got rank {array.ndim}")
    return FeatureMap(array)
