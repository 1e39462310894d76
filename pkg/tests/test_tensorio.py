"""Container format: roundtrips and the failure taxonomy."""

import struct

import numpy as np
import pytest

from fastattn.core import FeatureMap
from fastattn.tensorio import (MAGIC, BadMagicError, TensorFormatError,
                               TruncatedFileError, UnsupportedFormatError,
                               load_feature_map, load_tensor, save_tensor)

HEADER = struct.Struct("<4sIBI")


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_bytes(payload)
    return path


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(5,), (3, 4), (2, 3, 4), (2, 2, 2, 3)])
def test_roundtrip_bitwise(tmp_path, dtype, shape):
    original = np.random.default_rng(hash(shape) % 1000).standard_normal(shape).astype(dtype)
    path = tmp_path / "t.fatn"
    save_tensor(path, original)
    loaded = load_tensor(path)
    assert loaded.dtype == dtype
    assert loaded.shape == shape
    assert np.array_equal(loaded.view(np.uint8), original.view(np.uint8))


def test_roundtrip_special_values(tmp_path):
    original = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 1e-300])
    path = tmp_path / "t.fatn"
    save_tensor(path, original)
    loaded = load_tensor(path)
    assert np.array_equal(loaded.view(np.uint64), original.view(np.uint64))


def test_feature_map_roundtrip(tmp_path):
    fm = FeatureMap(np.random.default_rng(1).standard_normal((4, 3, 5)))
    path = tmp_path / "fm.fatn"
    save_tensor(path, fm)
    back = load_feature_map(path)
    np.testing.assert_array_equal(back.data, fm.data)


def test_feature_map_requires_rank_three(tmp_path):
    path = tmp_path / "m.fatn"
    save_tensor(path, np.ones((3, 3)))
    with pytest.raises(TensorFormatError, match="rank-3"):
        load_feature_map(path)


def test_rank_zero_rejected_on_save(tmp_path):
    with pytest.raises(TensorFormatError):
        save_tensor(tmp_path / "s.fatn", np.float64(3.0))


def test_int_input_stored_as_float64(tmp_path):
    path = tmp_path / "i.fatn"
    save_tensor(path, np.arange(6).reshape(2, 3))
    loaded = load_tensor(path)
    assert loaded.dtype == np.float64
    np.testing.assert_array_equal(loaded, np.arange(6.0).reshape(2, 3))


class TestFailureTaxonomy:
    def test_bad_magic(self, tmp_path):
        body = HEADER.pack(b"NOPE", 1, 2, 1) + struct.pack("<Q", 1) + b"\0" * 8
        with pytest.raises(BadMagicError, match="bad magic"):
            load_tensor(_write(tmp_path, "bad.fatn", body))

    def test_unsupported_version(self, tmp_path):
        body = HEADER.pack(MAGIC, 9, 2, 1) + struct.pack("<Q", 1) + b"\0" * 8
        with pytest.raises(UnsupportedFormatError, match="version 9"):
            load_tensor(_write(tmp_path, "v9.fatn", body))

    def test_unknown_dtype_code(self, tmp_path):
        body = HEADER.pack(MAGIC, 1, 77, 1) + struct.pack("<Q", 1) + b"\0" * 8
        with pytest.raises(UnsupportedFormatError, match="dtype code 77"):
            load_tensor(_write(tmp_path, "d77.fatn", body))

    def test_truncated_header_names_byte_counts(self, tmp_path):
        with pytest.raises(TruncatedFileError, match=r"need 13 header bytes, file has 5"):
            load_tensor(_write(tmp_path, "h.fatn", b"FATN\x01"))

    def test_truncated_dims(self, tmp_path):
        # rank 3 declared but only one dimension size present
        body = HEADER.pack(MAGIC, 1, 2, 3) + struct.pack("<Q", 4)
        with pytest.raises(TruncatedFileError, match="dimension sizes"):
            load_tensor(_write(tmp_path, "dims.fatn", body))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "p.fatn"
        save_tensor(path, np.ones((4, 4)))
        whole = path.read_bytes()
        path.write_bytes(whole[:-8])
        with pytest.raises(TruncatedFileError, match="payload needs"):
            load_tensor(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.fatn"
        save_tensor(path, np.ones(3))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(UnsupportedFormatError, match="4 trailing bytes"):
            load_tensor(path)

    def test_empty_file(self, tmp_path):
        with pytest.raises(TruncatedFileError):
            load_tensor(_write(tmp_path, "empty.fatn", b""))

    def test_all_failures_share_base_class(self, tmp_path):
        for payload in (b"", b"WXYZ" + b"\0" * 9):
            with pytest.raises(TensorFormatError):
                load_tensor(_write(tmp_path, "any.fatn", payload))


def test_loaded_array_is_writable_copy(tmp_path):
    path = tmp_path / "w.fatn"
    save_tensor(path, np.ones((2, 2)))
    loaded = load_tensor(path)
    assert loaded.flags.writeable
    loaded[0, 0] = 5.0  # caller owns the copy, not a frombuffer view
