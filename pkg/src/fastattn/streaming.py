"""Sliding-window attention over a frame stream with context reuse.

Each incoming frame contributes a c' x C context matrix Khat^T V computed
once at push time. Attending at time T sums the cached contexts over the
window and applies the query: Y = (1/n) Qhat (sum of contexts). The per-frame
work is therefore independent of the window length apart from (t-1) small
matrix additions; no n x n affinity and no per-frame recomputation of past
keys/values ever happens.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import cosine_attention_quadratic
from .core import ShapeError, as_matrix, l2_normalize_rows, matmul, random_matrix, transpose
from .counting import tally_adds
from . import tensorio


class EmptyCacheError(RuntimeError):
    """attend() was called before any frame was pushed."""


@dataclass(frozen=True)
class FrameContext:
    context: np.ndarray  # (c', C)
    frame_index: int


class FrameCache:
    """Ring of the last ``window`` per-frame context matrices.

    Single-writer: push_frame and attend must not run concurrently on the
    same cache. Distinct caches are independent.
    """

    def __init__(self, window: int, attention_channels: int, channels: int,
                 spatial_size: int, *, eps: float | None = None,
                 normalize_by_window: bool = False):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        if min(attention_channels, channels, spatial_size) < 1:
            raise ValueError("attention_channels, channels and spatial_size must be >= 1")
        self.window = window
        self.attention_channels = attention_channels
        self.channels = channels
        self.spatial_size = spatial_size
        self.eps = eps
        self.normalize_by_window = normalize_by_window
        self._ring: deque[FrameContext] = deque(maxlen=window)
        self._frames_seen = 0

    def __len__(self) -> int:
        return len(self._ring)

    @property
    def contexts(self) -> tuple[FrameContext, ...]:
        return tuple(self._ring)

    def _check_frame(self, key, value):
        key = as_matrix(key)
        value = as_matrix(value)
        if key.shape != (self.spatial_size, self.attention_channels):
            raise ShapeError(f"key shape {key.shape} != "
                             f"{(self.spatial_size, self.attention_channels)}")
        if value.shape != (self.spatial_size, self.channels):
            raise ShapeError(f"value shape {value.shape} != "
                             f"{(self.spatial_size, self.channels)}")
        return key, value

    def push_frame(self, key, value) -> None:
        """Normalize the key rows, fold the frame into a c' x C context, store it."""
        key, value = self._check_frame(key, value)
        context = matmul(transpose(l2_normalize_rows(key, self.eps)), value)
        self._ring.append(FrameContext(context=context, frame_index=self._frames_seen))
        self._frames_seen += 1

    def attend(self, query) -> np.ndarray:
        """Y = (1/n) Qhat (sum of cached contexts), summed fresh each call."""
        if not self._ring:
            raise EmptyCacheError("attend() on an empty cache; push a frame first")
        query = as_matrix(query)
        if query.shape != (self.spatial_size, self.attention_channels):
            raise ShapeError(f"query shape {query.shape} != "
                             f"{(self.spatial_size, self.attention_channels)}")
        total = self._ring[0].context.copy()
        for entry in list(self._ring)[1:]:
            total += entry.context
            tally_adds(total.size)
        out = matmul(l2_normalize_rows(query, self.eps), total)
        scale = self.spatial_size
        if self.normalize_by_window:
            scale *= len(self._ring)
        out /= scale
        return out


def spatial_temporal_reference(query, keys, values, eps: float | None = None,
                               normalize_by_window: bool = False) -> np.ndarray:
    """Batch oracle: sum of per-frame quadratic cosine attention outputs.

    Evaluates sum_i (1/n) Qhat (Khat_i^T V_i) by running the affinity-
    materializing quadratic path per frame and summing, so it shares no
    code path with FrameCache beyond the row normalization.
    """
    if len(keys) != len(values) or not keys:
        raise ValueError("need equal, nonzero numbers of key and value frames")
    out = None
    for key, value in zip(keys, values):
        frame_out = cosine_attention_quadratic(query, key, value, eps)
        out = frame_out if out is None else out + frame_out
    if normalize_by_window:
        out = out / len(keys)
    return out


def write_stream_fixture(directory, spatial_size: int, attention_channels: int,
                         channels: int, window: int, frames: int, seed) -> None:
    """Materialize a seeded stream as tensor files plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"spatial_size": spatial_size, "attention_channels": attention_channels,
                "channels": channels, "window": window, "frames": frames}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for i in range(frames):
        for kind, cols in (("query", attention_channels), ("key", attention_channels),
                           ("value", channels)):
            salt = {"query": 0, "key": 1, "value": 2}[kind]
            data = random_matrix(spatial_size, cols,
                                 np.random.SeedSequence([int(seed), i, salt]),
                                 "symmetric")
            tensorio.save_tensor(directory / f"frame_{i:04d}.{kind}", data)


def read_stream_fixture(directory):
    """Load (manifest, frames) where frames is a list of (query, key, value)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    frames = []
    for i in range(manifest["frames"]):
        triple = []
        for kind in ("query", "key", "value"):
            path = directory / f"frame_{i:04d}.{kind}"
            if not path.exists():
                raise FileNotFoundError(f"stream fixture is missing {path}")
            triple.append(tensorio.load_tensor(path))
        frames.append(tuple(triple))
    return manifest, frames


def per_frame_cost(window: int, attention_channels: int, channels: int,
                   spatial_size: int, seed=0):
    """Measured MACs/adds for one steady-state push+attend cycle.

    Fills a probe cache to capacity, then counts exactly one further
    push_frame + attend. Returns a FlopsReport whose attention-core
    component is identical for every window length at fixed (n, c', C).
    """
    from .counting import count_ops
    from .flops import FlopsReport
    cache = FrameCache(window, attention_channels, channels, spatial_size)
    rng_base = int(seed)
    def frame(i):
        key = random_matrix(spatial_size, attention_channels,
                            np.random.SeedSequence([rng_base, i, 1]), "symmetric")
        value = random_matrix(spatial_size, channels,
                              np.random.SeedSequence([rng_base, i, 2]), "symmetric")
        return key, value
    for i in range(window):
        cache.push_frame(*frame(i))
    query = random_matrix(spatial_size, attention_channels,
                          np.random.SeedSequence([rng_base, window, 0]), "symmetric")
    with count_ops() as push_ops:
        cache.push_frame(*frame(window))
    with count_ops() as attend_ops:
        cache.attend(query)
    return FlopsReport(components=(
        ("context-build", push_ops.macs),
        ("attend-core", attend_ops.macs),
        ("window-sum-adds", attend_ops.adds),
    ))
