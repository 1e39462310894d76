"""Desk-scale encoder/attention/decoder forward graph.

Encoder: a 3x3 stride-2 stem ("conv0") followed by four residual stages, each
a 2-conv unit whose first conv has stride 2, so stage s runs at 1/(4*2^(s-1))
of the input resolution. Each stage output passes through an attention block.
Decoder: deep-to-shallow fuse steps (bilinear upsample x2, 1x1 conv onto the
shallower width, elementwise add), one long skip from the deepest attention
output into the final decoder stage, a 1x1 classifier, and a final bilinear
upsample back to the input resolution.

An extra spatial reduction (rate 2) can be placed at the stem or at any
stage, realized either by doubling a conv stride or by inserting a 2x2 pool;
the decoder's size-targeted upsampling compensates, so the output shape is
invariant to the placement. Convolutions run as im2col + matmul so the MAC
counter sees them; analytic per-layer costs use the same formulas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .block import FABlockConfig, FAWeights, fa_block_forward
from .core import FeatureMap, ShapeError, matmul, random_matrix
from .flops import FlopsReport, flops_fast_attention_module
from . import tensorio

REDUCTION_STAGES = ("conv0", "res1", "res2", "res3", "res4", "none")
REDUCTION_OPS = ("strided_conv", "max_pool", "avg_pool")

#: Placements ordered from earliest to latest; "none" last.
PLACEMENT_ORDER = ("conv0", "res1", "res2", "res3", "res4", "none")


class ConfigError(ValueError):
    """Invalid network configuration or incompatible input size."""


@dataclass(frozen=True)
class NetConfig:
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    attention_channels: tuple[int, int, int, int] | None = None  # default min(32, C_s)
    reduction_stage: str = "none"
    reduction_op: str = "strided_conv"
    input_channels: int = 3
    num_classes: int = 19
    stem_channels: int = 64
    attention_enabled: bool = True

    def __post_init__(self):
        if len(self.stage_channels) != 4:
            raise ConfigError("stage_channels must list exactly 4 widths")
        if any(c < 1 for c in self.stage_channels):
            raise ConfigError("stage widths must be >= 1")
        if list(self.stage_channels) != sorted(self.stage_channels):
            raise ConfigError(f"stage_channels must be nondecreasing, "
                              f"got {self.stage_channels}")
        if self.reduction_stage not in REDUCTION_STAGES:
            raise ConfigError(f"reduction_stage must be one of {REDUCTION_STAGES}, "
                              f"got {self.reduction_stage!r}")
        if self.reduction_op not in REDUCTION_OPS:
            raise ConfigError(f"reduction_op must be one of {REDUCTION_OPS}, "
                              f"got {self.reduction_op!r}")
        if min(self.input_channels, self.num_classes, self.stem_channels) < 1:
            raise ConfigError("input_channels, num_classes and stem_channels must be >= 1")
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        if self.attention_channels is not None:
            if len(self.attention_channels) != 4:
                raise ConfigError("attention_channels must list exactly 4 widths")
            for cp, c in zip(self.attention_channels, self.stage_channels):
                if not 1 <= cp <= c:
                    raise ConfigError(f"attention width {cp} invalid for stage width {c}")
            object.__setattr__(self, "attention_channels", tuple(self.attention_channels))

    def stage_attention_channels(self, stage: int) -> int:
        """Attention width for stage 1..4; defaults to min(32, stage width)."""
        if self.attention_channels is not None:
            return self.attention_channels[stage - 1]
        return min(32, self.stage_channels[stage - 1])


def total_stride(cfg: NetConfig) -> int:
    return 64 if cfg.reduction_stage != "none" else 32


def stage_resolutions(cfg: NetConfig, height: int, width: int) -> dict[str, tuple[int, int]]:
    """Spatial size of the stem and each stage output; validates the input size.

    The input must be a positive multiple of the network's total stride in
    both dimensions so every downsampling step halves exactly.
    """
    stride = total_stride(cfg)
    if height < stride or width < stride or height % stride or width % stride:
        raise ConfigError(
            f"input {height}x{width} incompatible with total stride {stride}; "
            f"both dimensions must be positive multiples of {stride} "
            f"(minimum input {stride}x{stride})")
    table = {}
    div = 2 * (2 if cfg.reduction_stage == "conv0" else 1)
    table["conv0"] = (height // div, width // div)
    for s in range(1, 5):
        div *= 2 * (2 if cfg.reduction_stage == f"res{s}" else 1)
        table[f"res{s}"] = (height // div, width // div)
    return table


# ---------------------------------------------------------------------------
# primitive layers

def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(C, H, W) -> (H_out*W_out, C*k*k) patches, channel-major patch layout."""
    c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1
    cols = np.empty((c, k, k, h_out, w_out), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, ky, kx] = padded[:, ky:ky + (h_out - 1) * stride + 1:stride,
                                     kx:kx + (w_out - 1) * stride + 1:stride]
    return cols.reshape(c * k * k, h_out * w_out).T.copy()


def conv2d(x: FeatureMap, weight: np.ndarray, stride: int = 1) -> FeatureMap:
    """Convolution with odd kernel and same-style padding, as im2col + matmul.

    ``weight`` has shape (C_out, C_in, k, k); padding is (k-1)//2.
    """
    c_out, c_in, k, _ = weight.shape
    if x.channels != c_in:
        raise ShapeError(f"conv expects {c_in} input channels, got {x.channels}")
    pad = (k - 1) // 2
    cols = _im2col(x.data, k, stride, pad)
    out_flat = matmul(cols, weight.reshape(c_out, c_in * k * k).T)
    h_out = (x.height + 2 * pad - k) // stride + 1
    w_out = (x.width + 2 * pad - k) // stride + 1
    return FeatureMap.from_flat(out_flat, h_out, w_out)


def pool2x2(x: FeatureMap, kind: str) -> FeatureMap:
    if x.height % 2 or x.width % 2:
        raise ShapeError(f"2x2 pooling needs even dims, got {x.height}x{x.width}")
    c, h, w = x.data.shape
    windows = x.data.reshape(c, h // 2, 2, w // 2, 2)
    if kind == "max_pool":
        return FeatureMap(windows.max(axis=(2, 4)))
    if kind == "avg_pool":
        return FeatureMap(windows.mean(axis=(2, 4)))
    raise ValueError(f"unknown pooling kind {kind!r}")


def bilinear_resize(x: FeatureMap, out_height: int, out_width: int) -> FeatureMap:
    """Bilinear sampling with half-pixel (align-corners=false) coordinates.

    Output pixel i samples source coordinate (i + 0.5) * (in/out) - 0.5,
    clamped to the valid range, and blends the four surrounding inputs.
    """
    if out_height < 1 or out_width < 1:
        raise ShapeError("output dimensions must be >= 1")
    src_y = np.clip((np.arange(out_height) + 0.5) * (x.height / out_height) - 0.5,
                    0, x.height - 1)
    src_x = np.clip((np.arange(out_width) + 0.5) * (x.width / out_width) - 0.5,
                    0, x.width - 1)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, x.height - 1)
    x1 = np.minimum(x0 + 1, x.width - 1)
    wy = (src_y - y0).astype(x.data.dtype)
    wx = (src_x - x0).astype(x.data.dtype)
    top = x.data[:, y0][:, :, x0] * (1 - wx) + x.data[:, y0][:, :, x1] * wx
    bottom = x.data[:, y1][:, :, x0] * (1 - wx) + x.data[:, y1][:, :, x1] * wx
    out = top * (1 - wy[None, :, None]) + bottom * wy[None, :, None]
    return FeatureMap(out)


def relu(x: FeatureMap) -> FeatureMap:
    return FeatureMap(np.maximum(x.data, 0.0))


# ---------------------------------------------------------------------------
# network assembly

@dataclass
class Network:
    config: NetConfig
    seed: int
    weights: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def forward(self, image: FeatureMap, collect: bool = False):
        return _forward(self, image, collect)


def _conv_init(c_out: int, c_in: int, k: int, seed_key) -> np.ndarray:
    fan_in = c_in * k * k
    flat = random_matrix(c_out, fan_in, np.random.SeedSequence(seed_key), "symmetric")
    return (flat / np.sqrt(fan_in)).reshape(c_out, c_in, k, k)


def _fa_seed(seed: int, stage: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, 100 + stage])


def build_network(cfg: NetConfig, seed: int = 0) -> Network:
    """Deterministic seeded build; same (cfg, seed) gives identical weights."""
    from .block import init_fa_weights
    seed = int(seed)
    weights: dict[str, np.ndarray] = {}
    weights["conv0"] = _conv_init(cfg.stem_channels, cfg.input_channels, 3, [seed, 0])
    in_c = cfg.stem_channels
    for s, out_c in enumerate(cfg.stage_channels, start=1):
        weights[f"res{s}_conv1"] = _conv_init(out_c, in_c, 3, [seed, 10 * s + 1])
        weights[f"res{s}_conv2"] = _conv_init(out_c, out_c, 3, [seed, 10 * s + 2])
        weights[f"res{s}_shortcut"] = _conv_init(out_c, in_c, 1, [seed, 10 * s + 3])
        fa = init_fa_weights(out_c, cfg.stage_attention_channels(s), _fa_seed(seed, s))
        weights[f"fa{s}_w_query"] = fa.w_query
        weights[f"fa{s}_w_key"] = fa.w_key
        weights[f"fa{s}_w_value"] = fa.w_value
        weights[f"fa{s}_w_out"] = fa.w_out
        in_c = out_c
    chans = cfg.stage_channels
    for s in (4, 3, 2):  # fuse stage s output down onto stage s-1
        weights[f"fuseup{s}_conv"] = _conv_init(chans[s - 2], chans[s - 1], 1,
                                                [seed, 200 + s])
    weights["skip_conv"] = _conv_init(chans[0], chans[3], 1, [seed, 210])
    weights["classifier"] = _conv_init(cfg.num_classes, chans[0], 1, [seed, 211])
    return Network(config=cfg, seed=seed, weights=weights)


def _stage_fa_weights(net: Network, stage: int) -> FAWeights:
    return FAWeights(
        w_query=net.weights[f"fa{stage}_w_query"],
        w_key=net.weights[f"fa{stage}_w_key"],
        w_value=net.weights[f"fa{stage}_w_value"],
        w_out=net.weights[f"fa{stage}_w_out"],
    )


def _forward(net: Network, image: FeatureMap, collect: bool):
    cfg = net.config
    if image.channels != cfg.input_channels:
        raise ShapeError(f"network expects {cfg.input_channels} input channels, "
                         f"got {image.channels}")
    table = stage_resolutions(cfg, image.height, image.width)
    pooled_reduction = cfg.reduction_op in ("max_pool", "avg_pool")
    acts: dict[str, FeatureMap] = {}

    x = image
    if cfg.reduction_stage == "conv0" and pooled_reduction:
        x = pool2x2(x, cfg.reduction_op)
    stem_stride = 4 if (cfg.reduction_stage == "conv0"
                        and cfg.reduction_op == "strided_conv") else 2
    x = relu(conv2d(x, net.weights["conv0"], stride=stem_stride))
    acts["conv0"] = x

    fa_outputs = {}
    for s in range(1, 5):
        reduce_here = cfg.reduction_stage == f"res{s}"
        if reduce_here and pooled_reduction:
            x = pool2x2(x, cfg.reduction_op)
        stride = 4 if (reduce_here and not pooled_reduction) else 2
        main = relu(conv2d(x, net.weights[f"res{s}_conv1"], stride=stride))
        main = conv2d(main, net.weights[f"res{s}_conv2"], stride=1)
        shortcut = conv2d(x, net.weights[f"res{s}_shortcut"], stride=stride)
        x = relu(FeatureMap(main.data + shortcut.data))
        acts[f"res{s}"] = x
        if (x.height, x.width) != table[f"res{s}"]:
            raise ShapeError(f"stage {s} produced {x.height}x{x.width}, "
                             f"expected {table[f'res{s}']}")
        if cfg.attention_enabled:
            fa_cfg = FABlockConfig(channels=x.channels,
                                   attention_channels=cfg.stage_attention_channels(s))
            x = fa_block_forward(x, _stage_fa_weights(net, s), fa_cfg)
        acts[f"fa{s}"] = x
        fa_outputs[s] = x

    d = fa_outputs[4]
    for s in (4, 3, 2):
        lateral = fa_outputs[s - 1]
        up = bilinear_resize(d, lateral.height, lateral.width)
        d = FeatureMap(conv2d(up, net.weights[f"fuseup{s}_conv"]).data + lateral.data)
    skip = bilinear_resize(fa_outputs[4], d.height, d.width)
    d = FeatureMap(d.data + conv2d(skip, net.weights["skip_conv"]).data)
    acts["decoder"] = d
    scores = conv2d(d, net.weights["classifier"])
    acts["scores"] = scores
    out = bilinear_resize(scores, image.height, image.width)
    acts["output"] = out
    if collect:
        return out, acts
    return out


def dump_activations(net: Network, image: FeatureMap, directory) -> dict[str, str]:
    """Run forward and write every recorded stage activation as a tensor file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _, acts = net.forward(image, collect=True)
    index = {}
    for name, fm in acts.items():
        filename = f"{name}.fatn"
        tensorio.save_tensor(directory / filename, fm)
        index[name] = filename
    (directory / "activations.json").write_text(json.dumps(index, indent=2) + "\n")
    return index


# ---------------------------------------------------------------------------
# analytic cost accounting

def network_flops(cfg: NetConfig, height: int, width: int) -> FlopsReport:
    """Per-layer analytic cost for one forward pass.

    Matmul-backed layers (convs, attention, classifier) use the exact counts
    the runtime counter reports. Interpolation components (label suffix
    ``_upsample``, 4 MACs per output element) and pooling components (label
    ``reduction_pool``: 4 adds per output element for averaging, 0 for max)
    are analytic-only: the runtime computes them without matrix products.
    """
    table = stage_resolutions(cfg, height, width)
    parts: list[tuple[str, int]] = []
    pooled = cfg.reduction_op in ("max_pool", "avg_pool")

    def pool_cost(channels, out_hw):
        if cfg.reduction_op == "avg_pool":
            return 4 * channels * out_hw[0] * out_hw[1]
        return 0  # max pooling is comparisons only

    if cfg.reduction_stage == "conv0" and pooled:
        cost = pool_cost(cfg.input_channels, (height // 2, width // 2))
        if cost:
            parts.append(("reduction_pool", cost))
    h0, w0 = table["conv0"]
    parts.append(("conv0", h0 * w0 * 9 * cfg.input_channels * cfg.stem_channels))

    in_c = cfg.stem_channels
    prev_hw = (h0, w0)
    for s, out_c in enumerate(cfg.stage_channels, start=1):
        hs, ws = table[f"res{s}"]
        if cfg.reduction_stage == f"res{s}" and pooled:
            cost = pool_cost(in_c, (prev_hw[0] // 2, prev_hw[1] // 2))
            if cost:
                parts.append(("reduction_pool", cost))
        n_s = hs * ws
        parts.append((f"res{s}_conv1", n_s * 9 * in_c * out_c))
        parts.append((f"res{s}_conv2", n_s * 9 * out_c * out_c))
        parts.append((f"res{s}_shortcut", n_s * in_c * out_c))
        if cfg.attention_enabled:
            fa = flops_fast_attention_module(out_c, hs, ws,
                                             cfg.stage_attention_channels(s))
            parts.append((f"fa{s}", fa.total))
        in_c = out_c
        prev_hw = (hs, ws)

    chans = cfg.stage_channels
    for s in (4, 3, 2):
        h_l, w_l = table[f"res{s - 1}"]
        n_l = h_l * w_l
        parts.append((f"fuseup{s}_upsample", 4 * chans[s - 1] * n_l))
        parts.append((f"fuseup{s}_conv", n_l * chans[s - 1] * chans[s - 2]))
    h1, w1 = table["res1"]
    n1 = h1 * w1
    parts.append(("skip_upsample", 4 * chans[3] * n1))
    parts.append(("skip_conv", n1 * chans[3] * chans[0]))
    parts.append(("classifier", n1 * chans[0] * cfg.num_classes))
    parts.append(("output_upsample", 4 * cfg.num_classes * height * width))
    return FlopsReport(components=tuple(parts))


ANALYTIC_ONLY_LABELS = ("reduction_pool",)


def matmul_flops_total(report: FlopsReport) -> int:
    """The subset of an analytic network report the runtime counter can see."""
    return sum(count for label, count in report.components
               if not label.endswith("_upsample") and label not in ANALYTIC_ONLY_LABELS)


@dataclass(frozen=True)
class PlacementRow:
    reduction_stage: str
    flops: int
    wall_time_s: float


def placement_study(cfg: NetConfig, height: int, width: int, seed: int = 0,
                    repeats: int = 3) -> list[PlacementRow]:
    """Analytic FLOPs and measured forward time for each reduction placement.

    Rows are ordered earliest placement first; FLOPs are monotone
    nondecreasing along the returned order (moving the reduction earlier
    shrinks every downstream stage).
    """
    from .timing import time_median
    rows = []
    image = _seeded_image(cfg.input_channels, height, width, seed)
    for placement in PLACEMENT_ORDER:
        variant = replace(cfg, reduction_stage=placement)
        net = build_network(variant, seed)
        elapsed = time_median(lambda: net.forward(image), repeats=repeats, warmup=1)
        rows.append(PlacementRow(
            reduction_stage=placement,
            flops=network_flops(variant, height, width).total,
            wall_time_s=elapsed,
        ))
    return rows


def _seeded_image(channels: int, height: int, width: int, seed) -> FeatureMap:
    flat = random_matrix(height * width, channels,
                         np.random.SeedSequence([int(seed), 999]), "symmetric")
    return FeatureMap.from_flat(flat, height, width)


# ---------------------------------------------------------------------------
# serialization

def save_network(directory, net: Network) -> None:
    """Config as JSON plus one tensor file per weight, referenced by name."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, weight in net.weights.items():
        filename = f"{name}.fatn"
        tensorio.save_tensor(directory / filename, weight)
        tensors[name] = filename
    cfg = net.config
    doc = {
        "config": {
            "stage_channels": list(cfg.stage_channels),
            "attention_channels": (list(cfg.attention_channels)
                                   if cfg.attention_channels else None),
            "reduction_stage": cfg.reduction_stage,
            "reduction_op": cfg.reduction_op,
            "input_channels": cfg.input_channels,
            "num_classes": cfg.num_classes,
            "stem_channels": cfg.stem_channels,
            "attention_enabled": cfg.attention_enabled,
        },
        "seed": net.seed,
        "tensors": tensors,
    }
    (directory / "network.json").write_text(json.dumps(doc, indent=2) + "\n")


def load_network(directory) -> Network:
    directory = Path(directory)
    doc = json.loads((directory / "network.json").read_text())
    raw = doc["config"]
    cfg = NetConfig(
        stage_channels=tuple(raw["stage_channels"]),
        attention_channels=(tuple(raw["attention_channels"])
                            if raw["attention_channels"] else None),
        reduction_stage=raw["reduction_stage"],
        reduction_op=raw["reduction_op"],
        input_channels=raw["input_channels"],
        num_classes=raw["num_classes"],
        stem_channels=raw["stem_channels"],
        attention_enabled=raw["attention_enabled"],
    )
    weights = {name: tensorio.load_tensor(directory / filename)
               for name, filename in doc["tensors"].items()}
    return Network(config=cfg, seed=doc["seed"], weights=weights)
