"""The attention block: 1x1 projections, fast core, output projection, residual.

The block takes a (C, H, W) feature map, projects each pixel to query/key
(width c', no nonlinearity so correlations keep their sign) and value
(width C, ReLU), runs an attention core, optionally applies a CxC output
projection and adds the input back. 1x1 convolutions are flatten -> matmul
-> unflatten throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import cosine_attention_quadratic, fast_attention, softmax_attention
from .core import FeatureMap, ShapeError, as_matrix, matmul, random_matrix
from .counting import count_ops, tally_adds
from . import tensorio

ATTENTION_IMPLS = ("fast", "quadratic", "softmax")


@dataclass(frozen=True)
class FAWeights:
    """Projection weights; biases optional and off by default."""

    w_query: np.ndarray   # (C, c')
    w_key: np.ndarray     # (C, c')
    w_value: np.ndarray   # (C, C)
    w_out: np.ndarray     # (C, C)
    b_query: np.ndarray | None = None
    b_key: np.ndarray | None = None
    b_value: np.ndarray | None = None
    b_out: np.ndarray | None = None

    def __post_init__(self):
        wq = as_matrix(self.w_query)
        wk = as_matrix(self.w_key)
        wv = as_matrix(self.w_value)
        wo = as_matrix(self.w_out)
        channels = wq.shape[0]
        cprime = wq.shape[1]
        if cprime > channels:
            raise ShapeError(f"attention width {cprime} exceeds channel width {channels}")
        if wk.shape != (channels, cprime):
            raise ShapeError(f"w_key shape {wk.shape} != {(channels, cprime)}")
        if wv.shape != (channels, channels) or wo.shape != (channels, channels):
            raise ShapeError("w_value and w_out must both be square (C, C)")
        for name in ("w_query", "w_key", "w_value", "w_out"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def channels(self) -> int:
        return self.w_query.shape[0]

    @property
    def attention_channels(self) -> int:
        return self.w_query.shape[1]


@dataclass(frozen=True)
class FABlockConfig:
    channels: int
    attention_channels: int = 32
    normalize: bool = True
    use_output_projection: bool = True
    use_residual: bool = True
    relu_on_value: bool = True
    attention_impl: str = "fast"  # fast | quadratic | softmax
    eps: float | None = None

    def __post_init__(self):
        if self.attention_channels < 1:
            raise ValueError("attention_channels must be >= 1")
        if self.attention_channels > self.channels:
            raise ShapeError(f"attention width {self.attention_channels} exceeds "
                             f"channel width {self.channels}")
        if self.attention_impl not in ATTENTION_IMPLS:
            raise ValueError(f"attention_impl must be one of {ATTENTION_IMPLS}, "
                             f"got {self.attention_impl!r}")


def init_fa_weights(channels: int, attention_channels: int, seed,
                    with_bias: bool = False) -> FAWeights:
    """Seeded uniform fan-in initialization: entries ~ U(-1/sqrt(C), 1/sqrt(C)).

    The bound depends on each projection's input width (here always C), so
    every entry of every weight lies strictly inside [-1/sqrt(C), 1/sqrt(C)].
    Biases, when requested, start at zero.
    """
    if channels < 1 or attention_channels < 1:
        raise ValueError("channels and attention_channels must be >= 1")
    if attention_channels > channels:
        raise ShapeError(f"attention width {attention_channels} exceeds "
                         f"channel width {channels}")
    scale = 1.0 / np.sqrt(channels)

    def draw(cols, salt):
        sub = np.random.SeedSequence([_seed_entropy(seed), salt])
        return random_matrix(channels, cols, sub, "symmetric") * scale

    zeros = (np.zeros(attention_channels), np.zeros(attention_channels),
             np.zeros(channels), np.zeros(channels)) if with_bias else (None,) * 4
    return FAWeights(
        w_query=draw(attention_channels, 0),
        w_key=draw(attention_channels, 1),
        w_value=draw(channels, 2),
        w_out=draw(channels, 3),
        b_query=zeros[0], b_key=zeros[1], b_value=zeros[2], b_out=zeros[3],
    )


def _seed_entropy(seed) -> int:
    """Collapse any SeedSequence-compatible seed material to one integer."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return int(seed.generate_state(1, np.uint64)[0])


def _project(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    out = matmul(x, weight)
    if bias is not None:
        tally_adds(out.size)
        out = out + bias[None, :]
    return out


def fa_block_forward(x: FeatureMap, weights: FAWeights, cfg: FABlockConfig) -> FeatureMap:
    if x.channels != cfg.channels or weights.channels != cfg.channels:
        raise ShapeError(f"channel mismatch: input {x.channels}, weights "
                         f"{weights.channels}, config {cfg.channels}")
    if weights.attention_channels != cfg.attention_channels:
        raise ShapeError(f"weights project to {weights.attention_channels} attention "
                         f"channels, config says {cfg.attention_channels}")
    flat = x.flatten()
    query = _project(flat, weights.w_query, weights.b_query)
    key = _project(flat, weights.w_key, weights.b_key)
    value = _project(flat, weights.w_value, weights.b_value)
    if cfg.relu_on_value:
        value = np.maximum(value, 0.0)
    out = _attention_core(query, key, value, cfg)
    if cfg.use_output_projection:
        out = _project(out, weights.w_out, weights.b_out)
    if cfg.use_residual:
        out = out + flat
    return FeatureMap.from_flat(out, x.height, x.width)


def _attention_core(query, key, value, cfg: FABlockConfig) -> np.ndarray:
    if cfg.attention_impl == "softmax":
        return softmax_attention(query, key, value)
    if not cfg.normalize:
        from .attention import dot_attention_unnormalized
        return dot_attention_unnormalized(query, key, value)
    if cfg.attention_impl == "quadratic":
        return cosine_attention_quadratic(query, key, value, cfg.eps)
    return fast_attention(query, key, value, cfg.eps)


@dataclass(frozen=True)
class ChannelSweepRow:
    attention_channels: int
    macs: int
    wall_time_s: float
    projection_pair_macs: int  # Q and K projections, 2*n*C*c'
    core_pair_macs: int        # context build + attend, 2*n*c'*C


def channel_sweep_report(x: FeatureMap, cprime_values, seed,
                         repeats: int = 3) -> list[ChannelSweepRow]:
    """Measured MACs and wall time for the block across attention widths.

    Only the Q/K projections and the attention core depend on c', so the
    measured totals are strictly increasing in c' while the V/output
    projections stay constant.
    """
    from .timing import time_median
    rows = []
    n = x.spatial_size
    channels = x.channels
    for cprime in sorted(cprime_values):
        weights = init_fa_weights(channels, cprime, seed)
        cfg = FABlockConfig(channels=channels, attention_channels=cprime)
        with count_ops() as ops:
            fa_block_forward(x, weights, cfg)
        elapsed = time_median(lambda: fa_block_forward(x, weights, cfg),
                              repeats=repeats)
        rows.append(ChannelSweepRow(
            attention_channels=cprime,
            macs=ops.macs,
            wall_time_s=elapsed,
            projection_pair_macs=2 * n * channels * cprime,
            core_pair_macs=2 * n * cprime * channels,
        ))
    return rows


_WEIGHT_FILES = {
    "w_query": "w_query.fatn", "w_key": "w_key.fatn",
    "w_value": "w_value.fatn", "w_out": "w_out.fatn",
    "b_query": "b_query.fatn", "b_key": "b_key.fatn",
    "b_value": "b_value.fatn", "b_out": "b_out.fatn",
}


def save_fa_weights(directory, weights: FAWeights) -> None:
    """Write each projection as a tensor file plus a JSON manifest naming them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"channels": weights.channels,
                "attention_channels": weights.attention_channels,
                "tensors": {}}
    for name, filename in _WEIGHT_FILES.items():
        tensor = getattr(weights, name)
        if tensor is None:
            continue
        tensorio.save_tensor(directory / filename, np.asarray(tensor))
        manifest["tensors"][name] = filename
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_fa_weights(directory) -> FAWeights:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    tensors = {}
    for name, filename in manifest["tensors"].items():
        tensors[name] = tensorio.load_tensor(directory / filename)
    return FAWeights(**tensors)
