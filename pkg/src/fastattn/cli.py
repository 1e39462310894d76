"""Command-line front end.

Subcommands: verify (invariant suites), bench (timing/MAC sweeps), flops
(analytic cost tables), stream (sliding-window demo over a fixture
directory), placement (reduction-placement study).

Exit codes: 0 success, 1 verification/check failure, 2 usage error,
3 I/O error. All non-timing output is deterministic for a fixed --seed;
wall-clock readings go to the report's timing fields only, and progress or
timing notes go to stderr so stdout stays byte-stable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .attention import (cosine_attention_quadratic, dot_attention_unnormalized,
                        fast_attention, softmax_attention)
from .core import ShapeError, random_matrix
from .counting import count_ops
from .flops import (flops_fast_attention_module, flops_self_attention_module,
                    flops_spatiotemporal, reference_table)
from .net import ConfigError, NetConfig, placement_study
from .streaming import FrameCache, read_stream_fixture, spatial_temporal_reference, \
    write_stream_fixture
from .tensorio import TensorFormatError
from .timing import time_median
from .verify import SUITES, rel_deviation, run_suites

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

DEFAULT_BUDGET_BYTES = 2 * 1024 ** 3

VARIANT_FUNCS = {
    "fast": fast_attention,
    "quadratic": cosine_attention_quadratic,
    "softmax": softmax_attention,
    "dot": dot_attention_unnormalized,
}

QUADRATIC_VARIANTS = ("quadratic", "softmax")


@dataclass
class BenchRecord:
    variant: str
    n: int
    C: int
    cprime: int
    t: int
    macs: int
    wall_time_s: float
    seed: int


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects comma-separated integers, "
                                         f"got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError(f"{flag} must not be empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastattn",
        description="Linear-cost cosine attention kernels: verification, "
                    "benchmarks, cost tables, streaming demo.")

    def add_global_options(target, suppress):
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        target.add_argument("--seed", type=int,
                            **(kw or {"default": 0}),
                            help="base seed for all generated data (default 0)")
        target.add_argument("--dtype", choices=("f32", "f64"),
                            **(kw or {"default": "f64"}),
                            help="precision for generated benchmark data")
        target.add_argument("--format", choices=("text", "csv", "json"),
                            **(kw or {"default": "text"}),
                            help="report format (default text)")
        target.add_argument("--out", metavar="PATH",
                            **(kw or {"default": None}),
                            help="write the report to PATH instead of stdout")

    add_global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    add_global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run invariant suites", parents=[common])
    p_verify.add_argument("--suite", default=None,
                          help="comma-separated suite names (default: all); "
                               f"available: {','.join(SUITES)}")
    p_verify.add_argument("--perturb", action="store_true",
                          help="inject a corrupted golden tensor (negative control; "
                               "the golden suite must then fail)")
    p_verify.add_argument("--list", action="store_true", dest="list_suites",
                          help="list suite names and exit")
    p_verify.set_defaults(func=cmd_verify)

    p_bench = sub.add_parser("bench", parents=[common], help="timing and MAC sweep over a grid")
    p_bench.add_argument("--sizes", default="1024,4096",
                         help="comma-separated n values (default 1024,4096)")
    p_bench.add_argument("--channels", default="64",
                         help="comma-separated C values (default 64)")
    p_bench.add_argument("--cprime", default="32",
                         help="comma-separated c' values (default 32)")
    p_bench.add_argument("--variants", default="fast,quadratic,softmax",
                         help="comma-separated subset of "
                              f"{','.join(VARIANT_FUNCS)} (default fast,quadratic,softmax)")
    p_bench.add_argument("--repeats", type=int, default=5,
                         help="timed repeats per record, median reported (default 5)")
    p_bench.add_argument("--budget-bytes", type=int, default=DEFAULT_BUDGET_BYTES,
                         help="refuse quadratic variants whose n x n affinity "
                              "would exceed this many bytes (default 2 GiB)")
    p_bench.set_defaults(func=cmd_bench)

    p_flops = sub.add_parser("flops", parents=[common], help="analytic cost model tables")
    p_flops.add_argument("--table1", action="store_true",
                         help="reference reconciliation table at 128x256 "
                              "(default when no dimensions are given)")
    p_flops.add_argument("--channels", type=int, default=None)
    p_flops.add_argument("--height", type=int, default=128)
    p_flops.add_argument("--width", type=int, default=256)
    p_flops.add_argument("--attention-channels", type=int, default=32)
    p_flops.add_argument("--window", type=int, default=None,
                         help="also report sliding-window costs for this window")
    p_flops.set_defaults(func=cmd_flops)

    p_stream = sub.add_parser("stream", parents=[common], help="sliding-window attention over a fixture")
    p_stream.add_argument("--manifest", metavar="DIR", required=True,
                          help="stream fixture directory (see --generate)")
    p_stream.add_argument("--window", type=int, default=None,
                          help="override the fixture's window length")
    p_stream.add_argument("--check", action="store_true",
                          help="compare each frame against the batch oracle")
    p_stream.add_argument("--generate", action="store_true",
                          help="write a seeded fixture into --manifest first")
    p_stream.add_argument("--frames", type=int, default=8)
    p_stream.add_argument("--spatial-size", type=int, default=1024)
    p_stream.add_argument("--cprime", type=int, default=32)
    p_stream.add_argument("--channels", type=int, default=64)
    p_stream.set_defaults(func=cmd_stream)

    p_place = sub.add_parser("placement", parents=[common], help="reduction-placement study")
    p_place.add_argument("--height", type=int, default=64)
    p_place.add_argument("--width", type=int, default=128)
    p_place.add_argument("--op", choices=("strided_conv", "max_pool", "avg_pool"),
                         default="strided_conv")
    p_place.add_argument("--repeats", type=int, default=3)
    p_place.set_defaults(func=cmd_placement)
    return parser


def _emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _dtype(args):
    return np.float32 if args.dtype == "f32" else np.float64


# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    if args.format == "csv":
        print("error: verify supports text and json formats only", file=sys.stderr)
        return EXIT_USAGE
    if args.list_suites:
        _emit(args, "\n".join(SUITES) + "\n")
        return EXIT_OK
    names = args.suite.split(",") if args.suite else None
    try:
        results = run_suites(names, seed=args.seed, perturb=args.perturb)
    except KeyError as err:
        print(f"error: {err.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    failed = [r for r in results if not r.passed]
    if args.format == "json":
        doc = {"seed": args.seed,
               "checks": [asdict(r) for r in results],
               "passed": len(results) - len(failed),
               "failed": len(failed)}
        _emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        lines = []
        for r in results:
            status = "ok" if r.passed else "FAIL"
            detail = f" ({r.detail})" if r.detail else ""
            lines.append(f"[{r.suite}] {r.name} ... {status}{detail}")
        lines.append(f"verify: {len(results)} checks, "
                     f"{len(results) - len(failed)} passed, {len(failed)} failed")
        for r in failed:
            lines.append(f"FAILED: [{r.suite}] {r.name}: {r.detail or 'no detail'}")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def _bench_point_seed(base_seed: int, index: int) -> int:
    return (base_seed * 1_000_003 + index) % (2 ** 63)


def cmd_bench(args) -> int:
    try:
        sizes = _parse_int_list(args.sizes, "--sizes")
        channel_list = _parse_int_list(args.channels, "--channels")
        cprimes = _parse_int_list(args.cprime, "--cprime")
    except argparse.ArgumentTypeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    variants = [v for v in args.variants.split(",") if v]
    unknown = [v for v in variants if v not in VARIANT_FUNCS]
    if unknown or not variants:
        print(f"error: unknown variants {unknown}; available: "
              f"{list(VARIANT_FUNCS)}", file=sys.stderr)
        return EXIT_USAGE
    if args.repeats < 5:
        print("error: --repeats must be >= 5 (median-of-repeats contract)",
              file=sys.stderr)
        return EXIT_USAGE
    dtype = _dtype(args)
    itemsize = np.dtype(dtype).itemsize
    records: list[BenchRecord] = []
    index = 0
    for n in sizes:
        for channels in channel_list:
            for cprime in cprimes:
                point_seed = _bench_point_seed(args.seed, index)
                index += 1
                query = random_matrix(n, cprime, np.random.SeedSequence([point_seed, 0]),
                                      "symmetric", dtype)
                key = random_matrix(n, cprime, np.random.SeedSequence([point_seed, 1]),
                                    "symmetric", dtype)
                value = random_matrix(n, channels, np.random.SeedSequence([point_seed, 2]),
                                      "symmetric", dtype)
                for variant in variants:
                    if variant in QUADRATIC_VARIANTS and n * n * itemsize > args.budget_bytes:
                        print(f"bench: skipping {variant} at n={n}: affinity would take "
                              f"{n * n * itemsize} bytes (budget {args.budget_bytes})",
                              file=sys.stderr)
                        continue
                    fn = VARIANT_FUNCS[variant]
                    with count_ops() as ops:
                        fn(query, key, value)
                    elapsed = time_median(lambda: fn(query, key, value),
                                          repeats=args.repeats, warmup=1)
                    records.append(BenchRecord(
                        variant=variant, n=n, C=channels, cprime=cprime, t=1,
                        macs=ops.macs, wall_time_s=elapsed, seed=point_seed))
    _emit(args, _format_bench(args, records))
    return EXIT_OK


def _speedups(records: list[BenchRecord]) -> list[dict]:
    by_key = {}
    for rec in records:
        by_key.setdefault((rec.n, rec.C, rec.cprime), {})[rec.variant] = rec
    rows = []
    for (n, channels, cprime), group in sorted(by_key.items()):
        fast = group.get("fast")
        if not fast:
            continue
        row = {"n": n, "C": channels, "cprime": cprime}
        for other in ("quadratic", "softmax"):
            if other in group and fast.wall_time_s > 0:
                row[f"{other}_over_fast"] = group[other].wall_time_s / fast.wall_time_s
        if len(row) > 3:
            rows.append(row)
    return rows


def _format_bench(args, records: list[BenchRecord]) -> str:
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["variant", "n", "C", "cprime", "t", "macs",
                         "wall_time_s", "seed"])
        for rec in records:
            writer.writerow([rec.variant, rec.n, rec.C, rec.cprime, rec.t,
                             rec.macs, f"{rec.wall_time_s:.6e}", rec.seed])
        return buf.getvalue()
    if args.format == "json":
        return json.dumps({"records": [asdict(r) for r in records],
                           "speedup": _speedups(records)}, indent=2) + "\n"
    lines = [f"{'variant':<10} {'n':>6} {'C':>5} {'cprime':>6} {'t':>2} "
             f"{'macs':>14} {'wall_time_s':>12}"]
    for rec in records:
        lines.append(f"{rec.variant:<10} {rec.n:>6} {rec.C:>5} {rec.cprime:>6} "
                     f"{rec.t:>2} {rec.macs:>14} {rec.wall_time_s:>12.6f}")
    for row in _speedups(records):
        extras = "  ".join(f"{k}={v:.1f}x" for k, v in row.items()
                           if k.endswith("_over_fast"))
        lines.append(f"speedup n={row['n']} C={row['C']} cprime={row['cprime']}: "
                     f"{extras}")
    return "\n".join(lines) + "\n"


def cmd_flops(args) -> int:
    table_mode = args.table1 or args.channels is None
    if table_mode:
        rows = reference_table(include_bias=True)
        if args.format == "json":
            doc = {"convention": "1 MAC = 1 FLOP", "height": 128, "width": 256,
                   "rows": [{
                       "channels": r.channels,
                       "self_att_model_gflops": r.self_att_model,
                       "self_att_reference_gflops": r.self_att_reference,
                       "self_att_deviation_percent": 100 * r.self_att_deviation,
                       "fast_model_gflops": r.fast_model,
                       "fast_reference_gflops": r.fast_reference,
                       "fast_deviation_percent": 100 * r.fast_deviation,
                   } for r in rows]}
            _emit(args, json.dumps(doc, indent=2) + "\n")
        elif args.format == "csv":
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["channels", "self_att_model_gflops",
                             "self_att_reference_gflops", "self_att_deviation_percent",
                             "fast_model_gflops", "fast_reference_gflops",
                             "fast_deviation_percent"])
            for r in rows:
                writer.writerow([r.channels, f"{r.self_att_model:.4f}",
                                 f"{r.self_att_reference:.1f}",
                                 f"{100 * r.self_att_deviation:+.2f}",
                                 f"{r.fast_model:.4f}", f"{r.fast_reference:.1f}",
                                 f"{100 * r.fast_deviation:+.2f}"])
            _emit(args, buf.getvalue())
        else:
            lines = [f"{'C':>6} {'self model':>12} {'self ref':>9} {'dev':>8} "
                     f"{'fast model':>12} {'fast ref':>9} {'dev':>8}"]
            for r in rows:
                lines.append(
                    f"{r.channels:>6} {r.self_att_model:>12.4f} "
                    f"{r.self_att_reference:>9.1f} {100 * r.self_att_deviation:>+7.2f}% "
                    f"{r.fast_model:>12.4f} {r.fast_reference:>9.1f} "
                    f"{100 * r.fast_deviation:>+7.2f}%")
            lines.append("convention: 1 MAC = 1 FLOP; GFLOPs at 128x256 input; "
                         "bias adds included")
            _emit(args, "\n".join(lines) + "\n")
        return EXIT_OK

    try:
        self_report = flops_self_attention_module(args.channels, args.height,
                                                  args.width, args.attention_channels)
        fast_report = flops_fast_attention_module(args.channels, args.height,
                                                  args.width, args.attention_channels)
        window_report = None
        if args.window is not None:
            window_report = flops_spatiotemporal(args.channels, args.height, args.width,
                                                 args.attention_channels, args.window)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if args.format == "json":
        doc = {"self_attention": dict(self_report.components),
               "fast_attention": dict(fast_report.components),
               "self_total": self_report.total, "fast_total": fast_report.total,
               "ratio": fast_report.total / self_report.total}
        if window_report is not None:
            doc["window"] = dict(window_report.components)
        _emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        lines = [f"module costs at C={args.channels} {args.height}x{args.width} "
                 f"c'={args.attention_channels} (MACs):"]
        for title, report in (("self-attention", self_report),
                              ("fast-attention", fast_report)):
            lines.append(f"  {title}: total {report.total}")
            for label, count in report.components:
                lines.append(f"    {label:<20} {count:>16}")
        lines.append(f"  ratio fast/self: {fast_report.total / self_report.total:.6f}")
        if window_report is not None:
            lines.append(f"  window (t={args.window}): total {window_report.total}")
            for label, count in window_report.components:
                lines.append(f"    {label:<20} {count:>16}")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_stream(args) -> int:
    if args.generate:
        write_stream_fixture(args.manifest, args.spatial_size, args.cprime,
                             args.channels, args.window or 2, args.frames, args.seed)
    manifest, frames = read_stream_fixture(args.manifest)
    window = args.window or manifest["window"]
    if window < 1:
        print("error: window must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    cache = FrameCache(window, manifest["attention_channels"], manifest["channels"],
                       manifest["spatial_size"])
    rows = []
    worst = 0.0
    for i, (query, key, value) in enumerate(frames):
        start = time.perf_counter()
        with count_ops() as ops:
            cache.push_frame(key, value)
            out = cache.attend(query)
        elapsed = time.perf_counter() - start
        row = {"frame": i, "macs": ops.macs, "adds": ops.adds,
               "latency_s": elapsed}
        if args.check:
            live = frames[max(0, i + 1 - window):i + 1]
            oracle = spatial_temporal_reference(query, [f[1] for f in live],
                                                [f[2] for f in live])
            row["oracle_dev"] = frame_dev = rel_deviation(out, oracle)
            worst = max(worst, frame_dev)
        rows.append(row)
    text = _format_stream(args, manifest, window, rows, worst)
    _emit(args, text)
    if args.check and worst > 1e-12:
        print(f"stream: oracle deviation {worst:.3e} exceeds 1e-12", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _format_stream(args, manifest, window, rows, worst) -> str:
    if args.format == "json":
        return json.dumps({"manifest": manifest, "window": window,
                           "frames": rows,
                           "max_oracle_dev": worst if args.check else None},
                          indent=2) + "\n"
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["frame", "macs", "adds", "latency_s"]
        if args.check:
            header.append("oracle_dev")
        writer.writerow(header)
        for row in rows:
            line = [row["frame"], row["macs"], row["adds"], f"{row['latency_s']:.6e}"]
            if args.check:
                line.append(f"{row['oracle_dev']:.3e}")
            writer.writerow(line)
        return buf.getvalue()
    lines = [f"stream: n={manifest['spatial_size']} c'={manifest['attention_channels']} "
             f"C={manifest['channels']} window={window} frames={len(rows)}"]
    for row in rows:
        extra = f" oracle_dev={row['oracle_dev']:.3e}" if args.check else ""
        lines.append(f"  frame {row['frame']:>3}: macs={row['macs']} "
                     f"adds={row['adds']} latency={row['latency_s']:.6f}s{extra}")
    if args.check:
        lines.append(f"max oracle deviation: {worst:.3e}")
    return "\n".join(lines) + "\n"


def cmd_placement(args) -> int:
    cfg = NetConfig(reduction_op=args.op)
    try:
        rows = placement_study(cfg, args.height, args.width, seed=args.seed,
                               repeats=args.repeats)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if args.format == "json":
        _emit(args, json.dumps({"reduction_op": args.op,
                                "rows": [asdict(r) for r in rows]}, indent=2) + "\n")
    elif args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["reduction_stage", "flops", "wall_time_s"])
        for row in rows:
            writer.writerow([row.reduction_stage, row.flops,
                             f"{row.wall_time_s:.6e}"])
        _emit(args, buf.getvalue())
    else:
        lines = [f"placement study ({args.op}, {args.height}x{args.width} input):"]
        for row in rows:
            lines.append(f"  {row.reduction_stage:<6} flops={row.flops:>12} "
                         f"forward={row.wall_time_s * 1e3:>8.2f}ms")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TensorFormatError, FileNotFoundError, NotADirectoryError,
            PermissionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
