"""Named invariant suites behind the ``verify`` command.

Each suite is a function returning CheckResult rows; the registry at the
bottom maps public suite names to them. Checks are deterministic for a given
seed: no wall-clock values appear in results, so two runs with the same seed
produce byte-identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio
from .attention import (cosine_affinity, cosine_attention_quadratic, dot_affinity,
                        fast_attention, fast_attention_backward, softmax_attention)
from .block import FABlockConfig, fa_block_forward, init_fa_weights
from .core import (FeatureMap, l2_normalize_rows, matmul, random_matrix,
                   softmax_rows, transpose)
from .counting import count_ops
from .flops import (REFERENCE_GFLOPS, flops_fast_attention_module,
                    flops_self_attention_module, flops_spatiotemporal,
                    reference_table)
from .streaming import FrameCache, per_frame_cost, spatial_temporal_reference


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""


def rel_deviation(actual, reference) -> float:
    """max |actual - reference| scaled by the largest reference magnitude."""
    actual = np.asarray(actual)
    reference = np.asarray(reference)
    scale = max(float(np.max(np.abs(reference))), 1e-300)
    return float(np.max(np.abs(actual - reference))) / scale


def _triple(n, cprime, channels, seed):
    base = [int(seed), n, cprime, channels]
    query = random_matrix(n, cprime, np.random.SeedSequence(base + [0]), "symmetric")
    key = random_matrix(n, cprime, np.random.SeedSequence(base + [1]), "symmetric")
    value = random_matrix(n, channels, np.random.SeedSequence(base + [2]), "symmetric")
    return query, key, value


# ---------------------------------------------------------------------------

def _suite_core(seed: int) -> list[CheckResult]:
    results = []

    def check(name, passed, detail=""):
        results.append(CheckResult("core", name, bool(passed), detail))

    product = matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
    check("matmul-hand-values",
          np.array_equal(product, [[19.0, 22.0], [43.0, 50.0]]))

    a = random_matrix(17, 9, [seed, 0], "symmetric")
    b = random_matrix(9, 13, [seed, 1], "symmetric")
    reference = np.zeros((17, 13))
    for i in range(17):
        for j in range(13):
            acc = 0.0
            for k in range(9):
                acc += a[i, k] * b[k, j]
            reference[i, j] = acc
    check("matmul-exact-bitwise-vs-triple-loop",
          np.array_equal(matmul(a, b, exact=True), reference))

    with count_ops() as ops:
        matmul(random_matrix(7, 11, [seed, 2]), random_matrix(11, 13, [seed, 3]))
    check("matmul-counter-7x11x13", ops.macs == 7 * 11 * 13,
          f"macs={ops.macs}")

    rows = random_matrix(40, 6, [seed, 4], "normal")
    once = l2_normalize_rows(rows)
    twice = l2_normalize_rows(once)
    check("l2-normalize-idempotent", rel_deviation(twice, once) <= 1e-12,
          f"dev={rel_deviation(twice, once):.3e}")
    norms = np.linalg.norm(once, axis=1)
    check("l2-normalize-unit-norms", float(np.max(np.abs(norms - 1.0))) <= 1e-12)
    zero_rows = l2_normalize_rows(np.zeros((3, 5)))
    check("l2-normalize-zero-row-stays-zero", np.array_equal(zero_rows, np.zeros((3, 5))))

    soft = softmax_rows(random_matrix(8, 5, [seed, 5], "normal") * 50)
    check("softmax-rows-sum-to-one",
          float(np.max(np.abs(soft.sum(axis=1) - 1.0))) <= 1e-12)
    check("softmax-rows-nonnegative", bool(np.all(soft >= 0)))

    fm = FeatureMap(random_matrix(6 * 4, 3, [seed, 6]).T.reshape(3, 6, 4))
    check("feature-map-flatten-roundtrip",
          np.array_equal(FeatureMap.from_flat(fm.flatten(), 6, 4).data, fm.data))

    first = random_matrix(12, 7, [seed, 7], "normal")
    second = random_matrix(12, 7, [seed, 7], "normal")
    check("random-matrix-seed-determinism", np.array_equal(first, second))
    sym = random_matrix(64, 64, [seed, 8], "symmetric")
    check("random-matrix-symmetric-range",
          bool(np.all(sym >= -1.0) and np.all(sym < 1.0)))
    return results


def _suite_equivalence(seed: int) -> list[CheckResult]:
    worst = 0.0
    count = 0
    for n in (1, 2, 8, 64, 256, 1024):
        for channels in (1, 4, 16, 64):
            for cprime in (1, 8, 32):
                for s in (seed, seed + 1):
                    query, key, value = _triple(n, cprime, channels, s)
                    fast = fast_attention(query, key, value)
                    quad = cosine_attention_quadratic(query, key, value)
                    worst = max(worst, rel_deviation(fast, quad))
                    count += 1
    passed = worst <= 1e-10
    return [CheckResult("equivalence", "reordering-grid",
                        passed, f"instances={count} max_rel_dev={worst:.3e}")]


def _suite_bounds(seed: int) -> list[CheckResult]:
    results = []
    worst = 0.0
    for n in (2, 17, 128, 512):
        for cprime in (1, 8, 32):
            query, key, _ = _triple(n, cprime, 4, seed + n + cprime)
            affinity = cosine_affinity(query, key)
            worst = max(worst, float(np.max(np.abs(affinity))) - 1.0)
    results.append(CheckResult("bounds", "cosine-affinity-in-unit-interval",
                               worst <= 1e-12, f"max_excess={worst:.3e}"))

    witness = dot_affinity(np.array([[2.0, 0.0]]), np.array([[3.0, 0.0]]))
    results.append(CheckResult(
        "bounds", "unnormalized-affinity-unbounded-witness",
        float(witness[0, 0]) == 6.0 and abs(float(witness[0, 0])) > 1.0,
        f"witness_affinity={float(witness[0, 0])!r}"))

    # queries orthogonal to every key: attention output is exactly zero
    query = np.zeros((4, 6))
    query[:, 0] = 1.0
    key = np.zeros((4, 6))
    key[:, 1] = 1.0
    value = random_matrix(4, 9, [seed, 11], "normal")
    out = fast_attention(query, key, value)
    results.append(CheckResult("bounds", "orthogonal-queries-zero-output",
                               np.array_equal(out, np.zeros((4, 9)))))

    # single position with query == key: cosine is 1 and 1/n is 1, so Y == V
    single = random_matrix(1, 5, [seed, 12], "normal")
    value1 = random_matrix(1, 7, [seed, 13], "normal")
    dev = rel_deviation(fast_attention(single, single, value1), value1)
    results.append(CheckResult("bounds", "single-position-self-match-returns-value",
                               dev <= 1e-12, f"dev={dev:.3e}"))
    return results


def _finite_difference_instance(n, cprime, channels, seed, step=1e-5) -> float:
    query, key, value = _triple(n, cprime, channels, seed)
    upstream = random_matrix(n, channels, np.random.SeedSequence(
        [int(seed), n, cprime, channels, 3]), "symmetric")
    grads = fast_attention_backward(query, key, value, upstream)

    def loss(q, k, v):
        return float(np.sum(fast_attention(q, k, v) * upstream))

    worst = 0.0
    for target, analytic in (("q", grads.d_query), ("k", grads.d_key),
                             ("v", grads.d_value)):
        base = {"q": query, "k": key, "v": value}
        numeric = np.zeros_like(analytic)
        flat = base[target]
        for idx in np.ndindex(flat.shape):
            bumped = dict(base)
            plus = flat.copy()
            plus[idx] += step
            bumped[target] = plus
            up = loss(bumped["q"], bumped["k"], bumped["v"])
            minus = flat.copy()
            minus[idx] -= step
            bumped[target] = minus
            down = loss(bumped["q"], bumped["k"], bumped["v"])
            numeric[idx] = (up - down) / (2 * step)
        scale = max(float(np.max(np.abs(numeric))), 1e-300)
        worst = max(worst, float(np.max(np.abs(analytic - numeric))) / scale)
    return worst


def _suite_gradients(seed: int, instances: int = 8) -> list[CheckResult]:
    results = []
    query, key, value = _triple(5, 3, 4, seed)
    zeros = fast_attention_backward(query, key, value, np.zeros((5, 4)))
    results.append(CheckResult(
        "gradients", "zero-upstream-zero-gradients",
        all(np.array_equal(g, np.zeros_like(g))
            for g in (zeros.d_query, zeros.d_key, zeros.d_value))))

    dead = query.copy()
    dead[2] = 0.0
    grads = fast_attention_backward(dead, key, value,
                                    random_matrix(5, 4, [seed, 1], "symmetric"))
    results.append(CheckResult(
        "gradients", "zero-norm-row-gets-zero-gradient",
        np.array_equal(grads.d_query[2], np.zeros(3))))

    shapes = [(3, 2, 2), (4, 3, 5), (5, 4, 3), (6, 2, 4), (2, 1, 1),
              (7, 3, 3), (4, 4, 6), (8, 2, 5)]
    worst = 0.0
    for i, (n, cprime, channels) in enumerate(shapes[:instances]):
        worst = max(worst, _finite_difference_instance(n, cprime, channels,
                                                       seed + 17 * i))
    results.append(CheckResult(
        "gradients", "finite-difference-agreement",
        worst <= 1e-6, f"instances={instances} max_rel_err={worst:.3e}"))
    return results


def _suite_streaming(seed: int) -> list[CheckResult]:
    results = []
    n, cprime, channels = 96, 8, 12
    frames = []
    for i in range(8):
        key = random_matrix(n, cprime, [seed, i, 1], "symmetric")
        value = random_matrix(n, channels, [seed, i, 2], "symmetric")
        frames.append((key, value))
    query = random_matrix(n, cprime, [seed, 99], "symmetric")

    worst = 0.0
    for window in (1, 2, 3, 4, 8):
        cache = FrameCache(window, cprime, channels, n)
        for key, value in frames:
            cache.push_frame(key, value)
        live = frames[-min(window, len(frames)):]
        oracle = spatial_temporal_reference(query, [k for k, _ in live],
                                            [v for _, v in live])
        worst = max(worst, rel_deviation(cache.attend(query), oracle))
    results.append(CheckResult("streaming", "window-equals-batch-oracle",
                               worst <= 1e-12, f"max_rel_dev={worst:.3e}"))

    cache = FrameCache(3, cprime, channels, n)
    for key, value in frames[:5]:
        cache.push_frame(key, value)
    indices = tuple(entry.frame_index for entry in cache.contexts)
    results.append(CheckResult("streaming", "ring-keeps-last-window-frames",
                               indices == (2, 3, 4), f"indices={indices}"))

    single = FrameCache(1, cprime, channels, n)
    single.push_frame(*frames[0])
    direct = fast_attention(query, frames[0][0], frames[0][1])
    results.append(CheckResult("streaming", "single-frame-equals-fast-attention",
                               np.array_equal(single.attend(query), direct)))

    twin = FrameCache(2, cprime, channels, n)
    twin.push_frame(*frames[0])
    twin.push_frame(*frames[0])
    doubled = rel_deviation(twin.attend(query), 2.0 * single.attend(query))
    results.append(CheckResult("streaming", "identical-frames-sum-linearly",
                               doubled <= 1e-12, f"dev={doubled:.3e}"))

    zero_ctx = FrameCache(2, cprime, channels, n)
    zero_ctx.push_frame(frames[0][0], np.zeros((n, channels)))
    results.append(CheckResult(
        "streaming", "zero-value-frame-zero-context",
        np.array_equal(zero_ctx.contexts[0].context, np.zeros((cprime, channels)))))

    core_counts = []
    for window in (1, 2, 4, 8):
        report = per_frame_cost(window, cprime, channels, n, seed)
        core_counts.append(report.component("attend-core"))
        if window == 1:
            push = report.component("context-build")
    constant = len(set(core_counts)) == 1
    results.append(CheckResult("streaming", "attend-core-macs-free-of-window",
                               constant, f"core_macs={core_counts}"))
    results.append(CheckResult("streaming", "push-cost-closed-form",
                               push == n * cprime * channels,
                               f"measured={push} expected={n * cprime * channels}"))
    return results


def _suite_flops(seed: int) -> list[CheckResult]:
    results = []
    rows = reference_table(include_bias=True)
    worst_self = max(abs(r.self_att_deviation) for r in rows)
    worst_fast = max(abs(r.fast_deviation) for r in rows)
    results.append(CheckResult("flops", "reference-table-self-attention-within-3pct",
                               worst_self <= 0.03, f"worst_dev={worst_self:.4%}"))
    results.append(CheckResult("flops", "reference-table-fast-within-10pct",
                               worst_fast <= 0.10, f"worst_dev={worst_fast:.4%}"))

    channels, height, width, cprime = 24, 16, 16, 8
    x = FeatureMap(random_matrix(height * width, channels,
                                 [seed, 31], "symmetric").T.reshape(channels, height, width))
    weights = init_fa_weights(channels, cprime, [seed, 32])
    measured = {}
    for impl, model in (("softmax", flops_self_attention_module),
                        ("fast", flops_fast_attention_module)):
        cfg = FABlockConfig(channels=channels, attention_channels=cprime,
                            attention_impl=impl)
        with count_ops() as ops:
            fa_block_forward(x, weights, cfg)
        measured[impl] = ops.macs
        analytic = model(channels, height, width, cprime).total
        results.append(CheckResult(
            "flops", f"analytic-equals-instrumented-{impl}-block",
            ops.macs == analytic, f"measured={ops.macs} analytic={analytic}"))

    double_h = flops_self_attention_module(channels, 2 * height, width, cprime)
    base = flops_self_attention_module(channels, height, width, cprime)
    quad_scale = (double_h.component("affinity") == 4 * base.component("affinity")
                  and double_h.component("aggregation") == 4 * base.component("aggregation"))
    fast_double = flops_fast_attention_module(channels, 2 * height, width, cprime)
    fast_base = flops_fast_attention_module(channels, height, width, cprime)
    lin_scale = (fast_double.component("context") == 2 * fast_base.component("context")
                 and fast_double.component("attend") == 2 * fast_base.component("attend"))
    results.append(CheckResult("flops", "quadratic-vs-linear-spatial-scaling",
                               quad_scale and lin_scale))

    naive2 = flops_spatiotemporal(channels, height, width, cprime, 2, "naive")
    naive4 = flops_spatiotemporal(channels, height, width, cprime, 4, "naive")
    results.append(CheckResult("flops", "naive-window-cost-linear-in-window",
                               naive4.total == 2 * naive2.total))
    fast1 = flops_spatiotemporal(channels, height, width, cprime, 1, "fast")
    fast8 = flops_spatiotemporal(channels, height, width, cprime, 8, "fast")
    results.append(CheckResult(
        "flops", "fast-window-core-constant",
        (fast1.component("context") == fast8.component("context")
         and fast1.component("attend") == fast8.component("attend")
         and fast1.component("context") == fast_base.component("context"))))
    probe = per_frame_cost(4, cprime, channels, height * width, seed)
    model4 = flops_spatiotemporal(channels, height, width, cprime, 4, "fast")
    results.append(CheckResult(
        "flops", "analytic-equals-instrumented-window-cycle",
        (probe.component("context-build") == model4.component("context")
         and probe.component("attend-core") == model4.component("attend")
         and probe.component("window-sum-adds") == model4.component("window-sum-adds")),
        f"probe={probe.components} model={model4.components}"))
    return results


def _suite_costs(seed: int) -> list[CheckResult]:
    results = []
    worst = 0.0
    detail = []
    exact_all = True
    for channels in sorted(REFERENCE_GFLOPS):
        n, cprime = 2048, 32
        height, width = 32, 64
        query, key, value = _triple(n, cprime, channels, seed + channels)
        with count_ops() as self_ops:
            softmax_attention(query, key, value)
        with count_ops() as fast_ops:
            fast_attention(query, key, value)
        ratio = fast_ops.macs / self_ops.macs
        exact_all = exact_all and (
            fast_ops.macs == flops_fast_attention_module(
                channels, height, width, cprime).core_total()
            and self_ops.macs == flops_self_attention_module(
                channels, height, width, cprime).core_total())
        worst = max(worst, ratio)
        detail.append(f"C={channels}:{ratio:.4f}")
    results.append(CheckResult(
        "costs", "instrumented-core-ratio-below-6pct",
        worst <= 0.06, " ".join(detail)))
    results.append(CheckResult(
        "costs", "instrumented-core-counts-match-analytic", exact_all))

    query, key, value = _triple(4096, 32, 64, seed)
    with count_ops() as self_ops:
        softmax_attention(query, key, value)
    with count_ops() as fast_ops:
        fast_attention(query, key, value)
    named = fast_ops.macs / self_ops.macs
    results.append(CheckResult("costs", "named-case-n4096-C64-ratio",
                               named <= 0.06, f"ratio={named:.5f}"))
    return results


def _suite_golden(seed: int, perturb: bool = False) -> list[CheckResult]:
    import tempfile
    from pathlib import Path
    results = []
    n, cprime, channels = 64, 8, 12
    query, key, value = _triple(n, cprime, channels, seed + 7)
    qn = l2_normalize_rows(query)
    kn = l2_normalize_rows(key)
    golden = matmul(qn, matmul(transpose(kn), value, exact=True), exact=True)
    golden /= n
    with tempfile.TemporaryDirectory(prefix="fastattn-golden-") as tmp:
        tmp = Path(tmp)
        for name, arr in (("query", query), ("key", key), ("value", value),
                          ("output", golden)):
            tensorio.save_tensor(tmp / f"{name}.fatn", arr)
        reloaded = {name: tensorio.load_tensor(tmp / f"{name}.fatn")
                    for name in ("query", "key", "value", "output")}
        stored = reloaded["output"]
        if perturb:
            stored = stored.copy()
            stored[0, 0] += 1e-6  # injected corruption: negative control
        qn2 = l2_normalize_rows(reloaded["query"])
        kn2 = l2_normalize_rows(reloaded["key"])
        recomputed = matmul(qn2, matmul(transpose(kn2), reloaded["value"], exact=True),
                            exact=True)
        recomputed /= n
        match = np.array_equal(recomputed, stored)
        results.append(CheckResult(
            "golden", "stored-attention-output-bit-identical",
            match,
            "recomputation matches stored tensor" if match else
            f"max_abs_diff={float(np.max(np.abs(recomputed - stored))):.3e} "
            "(stored golden tensor does not match recomputation)"))

        bad_magic = tmp / "bad_magic.fatn"
        bad_magic.write_bytes(b"NOPE" + (tmp / "output.fatn").read_bytes()[4:])
        try:
            tensorio.load_tensor(bad_magic)
            magic_ok = False
        except tensorio.BadMagicError:
            magic_ok = True
        except tensorio.TensorFormatError:
            magic_ok = False
        results.append(CheckResult("golden", "bad-magic-rejected-distinctly", magic_ok))

        truncated = tmp / "truncated.fatn"
        payload = (tmp / "output.fatn").read_bytes()
        truncated.write_bytes(payload[:len(payload) // 2])
        try:
            tensorio.load_tensor(truncated)
            trunc_ok = False
        except tensorio.TruncatedFileError as err:
            trunc_ok = "bytes" in str(err)
        except tensorio.TensorFormatError:
            trunc_ok = False
        results.append(CheckResult("golden", "truncation-rejected-with-byte-counts",
                                   trunc_ok))
    return results


def _suite_topology(seed: int) -> list[CheckResult]:
    from .net import (NetConfig, PLACEMENT_ORDER, build_network, network_flops,
                      matmul_flops_total, stage_resolutions, _seeded_image)
    results = []
    cfg = NetConfig()
    table = stage_resolutions(cfg, 64, 128)
    expected = {"conv0": (32, 64), "res1": (16, 32), "res2": (8, 16),
                "res3": (4, 8), "res4": (2, 4)}
    results.append(CheckResult("topology", "default-stage-resolutions",
                               table == expected, f"table={table}"))
    reduced = stage_resolutions(NetConfig(reduction_stage="res1"), 64, 128)
    results.append(CheckResult("topology", "reduction-at-first-stage-halves-it",
                               reduced["res1"] == (8, 16), f"res1={reduced['res1']}"))

    image = _seeded_image(3, 64, 128, seed)
    net = build_network(cfg, seed)
    out, acts = net.forward(image, collect=True)
    shape_ok = (out.channels, out.height, out.width) == (cfg.num_classes, 64, 128)
    results.append(CheckResult("topology", "output-shape-classes-by-input-dims",
                               shape_ok, f"output={out.data.shape}"))
    stage_ok = all(acts[name].data.shape[1:] == expected[name]
                   for name in expected)
    results.append(CheckResult("topology", "recorded-activations-match-table",
                               stage_ok))
    results.append(CheckResult("topology", "forward-output-finite",
                               bool(np.all(np.isfinite(out.data)))))

    rebuilt = build_network(cfg, seed)
    same = all(np.array_equal(net.weights[k], rebuilt.weights[k])
               for k in net.weights)
    results.append(CheckResult("topology", "seeded-build-determinism", same))

    zeroed = build_network(cfg, seed)
    zeroed.weights = {k: np.zeros_like(w) for k, w in zeroed.weights.items()}
    scores = zeroed.forward(image)
    results.append(CheckResult("topology", "all-zero-weights-zero-scores",
                               np.array_equal(scores.data,
                                              np.zeros_like(scores.data))))

    with count_ops() as ops:
        net.forward(image)
    report = network_flops(cfg, 64, 128)
    matched = ops.macs == matmul_flops_total(report)
    results.append(CheckResult(
        "topology", "analytic-network-macs-match-counter",
        matched, f"measured={ops.macs} analytic_matmul={matmul_flops_total(report)}"))

    totals = [network_flops(NetConfig(reduction_stage=p), 64, 128).total
              for p in PLACEMENT_ORDER]
    monotone = all(totals[i] < totals[i + 1] for i in range(len(totals) - 1))
    results.append(CheckResult("topology", "placement-flops-strictly-increasing-later",
                               monotone, f"totals={totals}"))
    gaps = [totals[i + 1] - totals[i] for i in range(len(totals) - 1)]
    results.append(CheckResult("topology", "last-stage-gap-smallest",
                               min(gaps) == gaps[-1], f"gaps={gaps}"))

    passthrough = build_network(NetConfig(attention_enabled=False), seed)
    out2 = passthrough.forward(image)
    results.append(CheckResult("topology", "attention-passthrough-keeps-shapes",
                               out2.data.shape == out.data.shape))
    return results


# ---------------------------------------------------------------------------

SUITES = {
    "core": _suite_core,
    "equivalence": _suite_equivalence,
    "bounds": _suite_bounds,
    "gradients": _suite_gradients,
    "streaming": _suite_streaming,
    "flops": _suite_flops,
    "costs": _suite_costs,
    "golden": _suite_golden,
    "topology": _suite_topology,
}


def run_suites(names=None, seed: int = 0, perturb: bool = False) -> list[CheckResult]:
    """Run the selected (or all) suites; unknown names raise KeyError."""
    selected = list(SUITES) if not names else list(names)
    unknown = [name for name in selected if name not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite name(s) {unknown}; available: {list(SUITES)}")
    results: list[CheckResult] = []
    for name in selected:
        if name == "golden":
            results.extend(_suite_golden(seed, perturb=perturb))
        else:
            results.extend(SUITES[name](seed))
    return results
