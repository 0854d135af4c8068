"""Batch command-line interface.

Subcommands expose every verification and analysis capability with
machine-readable CSV (and optional SVG) outputs:

* ``gradcheck``  finite-difference check of the region operator's gradients
* ``oracle``     closed-form region averages vs the quadrature oracle
* ``footprint``  analytic receptive-field footprints per operator
* ``taxonomy``   the operator comparison table
* ``bench``      wall-clock timings next to predicted operation counts
* ``train-toy``  gradient-descent region recovery on a synthetic task

Exit codes: 0 success, 1 check failed, 2 usage error. A plain ``key=value``
config file may be supplied with ``--config``; explicit flags win. All output
files are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
import time

import numpy as np

from .analyzer import (
    FOOTPRINT_OPERATORS,
    complexity_estimate,
    footprint,
    footprint_weights,
    render_footprint_svg,
    taxonomy_table,
)
from .harness import TrainConfig, finite_diff_gradcheck, make_region_task, train_toy
from .numerics import FeatureMap
from .operators import (
    ConvWeights,
    KernelGrid,
    MODULATION_MODES,
    OFFSET_TRANSFORMS,
    RadConvParams,
    radconv_forward,
)
from .region import Region, quadrature_oracle, region_average
from .rng import PortableRng
from .tensorio import load_radt, save_radt

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"shape must look like CxHxW, got {text!r}")
    try:
        c, h, w = (int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from exc
    if min(c, h, w) < 1:
        raise argparse.ArgumentTypeError(f"shape dims must be positive, got {text!r}")
    return c, h, w


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str | None, header: list[str], rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _write_text(path, buf.getvalue())


def _splice_config(argv: list[str]) -> list[str]:
    """Replace ``--config FILE`` with the file's key=value pairs, inserted
    right after the subcommand so explicit flags override them."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise UsageError("--config requires a file path")
    path = argv[idx + 1]
    rest = argv[:idx] + argv[idx + 2 :]
    if not rest:
        raise UsageError("--config requires a subcommand")
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    extra: list[str] = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line must be key=value, got {line!r}")
        key, value = line.split("=", 1)
        extra += [f"--{key.strip().replace('_', '-')}", value.strip()]
    return [rest[0]] + extra + rest[1:]


# ---------------------------------------------------------------- gradcheck


def _cmd_gradcheck(args) -> int:
    try:
        params = RadConvParams(
            kernel=KernelGrid.square(args.kernel),
            groups=args.groups,
            offset_transform=args.transform,
            modulation_mode=args.modulation,
        )
        if args.shape[0] % args.groups != 0:
            raise ValueError(f"channels {args.shape[0]} not divisible by groups {args.groups}")
        if not 1e-7 <= args.h <= 1e-3:
            raise ValueError(f"step size must lie in [1e-7, 1e-3], got {args.h}")
        if args.tolerance <= 0:
            raise ValueError("tolerance must be positive")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = finite_diff_gradcheck(
        args.seed,
        args.shape,
        params,
        args.h,
        samples_per_class=args.samples,
        negative_control=args.negative_control,
    )
    rows = [
        (name, f"{err:.6e}", f"{args.tolerance:.3e}", "pass" if err < args.tolerance else "fail")
        for name, err in report.errors().items()
    ]
    _write_csv(args.out, ["parameter_class", "max_rel_error", "tolerance", "status"], rows)
    ok = report.passed(args.tolerance)
    print(f"gradcheck seed={args.seed} max_rel_error={report.max_error:.3e} -> {'OK' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAILED


# ------------------------------------------------------------------- oracle


def _cmd_oracle(args) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be positive, got {args.trials}")
    if args.n < 1:
        raise UsageError(f"--n must be positive, got {args.n}")
    if args.tolerance <= 0:
        raise UsageError("--tolerance must be positive")
    channels, height, width = args.shape
    rng = PortableRng(args.seed)
    fixed_plane = load_radt(args.input) if args.input else None
    rows = []
    worst = 0.0
    for trial in range(args.trials):
        if fixed_plane is not None:
            fmap = fixed_plane
        else:
            fmap = FeatureMap(rng.uniforms((channels, height, width), -1.0, 1.0))
        if trial == 0 and args.dump:
            save_radt(fmap, args.dump)
        h, w = fmap.height, fmap.width
        left = rng.uniform(0.0, w - 1.5)
        right = rng.uniform(left + 0.4, w - 1.0)
        top = rng.uniform(0.0, h - 1.5)
        bottom = rng.uniform(top + 0.4, h - 1.0)
        region = Region(top, bottom, left, right)
        exact = region_average(fmap, 0, region)
        approx = quadrature_oracle(fmap, 0, region, args.n)
        err = abs(exact - approx)
        worst = max(worst, err)
        rows.append((trial, f"{exact:.12e}", f"{approx:.12e}", f"{err:.3e}"))
    _write_csv(args.out, ["trial", "exact", "quadrature", "abs_error"], rows)
    ok = worst < args.tolerance
    print(f"oracle trials={args.trials} n={args.n} max|exact-quadrature|={worst:.3e} -> {'OK' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAILED


# ---------------------------------------------------------------- footprint


def _parse_region(text: str, height: int, width: int) -> Region:
    if text == "full":
        return Region(0.0, float(height - 1), 0.0, float(width - 1))
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"--region must be 'full' or 't,b,l,r', got {text!r}")
    try:
        t, b, l, r = (float(p) for p in parts)
        return Region(t, b, l, r)
    except ValueError as exc:
        raise UsageError(f"bad region {text!r}: {exc}") from exc


def _cmd_footprint(args) -> int:
    channels, height, width = args.shape
    if args.position:
        try:
            row, col = (int(p) for p in args.position.split(","))
        except ValueError as exc:
            raise UsageError(f"--position must be 'row,col', got {args.position!r}") from exc
    else:
        row, col = height // 2, width // 2
    try:
        grid = KernelGrid.square(args.kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rng = PortableRng(args.seed)
    rows = []
    last_weights: dict = {}
    last_regions: list[Region] = []
    for trial in range(args.trials):
        config: dict = {"grid": grid}
        if args.op.startswith("dcn"):
            groups = args.groups if args.op in ("dcnv3", "dcnv4") else 1
            config["point_offsets"] = rng.uniforms((groups, grid.k, 2), -2.0, 2.0)
            if args.op != "dcnv1":
                config["raw_modulation"] = rng.uniforms((groups, grid.k), -1.0, 1.0)
        elif args.op == "radconv":
            regions = []
            if args.region:
                base = _parse_region(args.region, height, width)
                regions = [base for _ in range(grid.k)]
            else:
                half = max(1.0, (min(height, width) - 1) / 2.0)
                for dx, dy in grid.offsets:
                    cy, cx = row + dy, col + dx
                    regions.append(
                        Region(
                            cy - rng.uniform(0.3, half),
                            cy + rng.uniform(0.3, half),
                            cx - rng.uniform(0.3, half),
                            cx + rng.uniform(0.3, half),
                        )
                    )
            config["regions"] = regions
            last_regions = regions
        report = footprint(args.op, (height, width), (row, col), **config)
        if args.svg:
            last_weights = footprint_weights(args.op, (height, width), (row, col), **config)
        bbox = report.bounding_box or ("", "", "", "")
        rows.append((args.op, trial, row, col, report.count, *bbox))
    _write_csv(
        args.out,
        ["operator", "trial", "row", "col", "count", "bbox_top", "bbox_left", "bbox_bottom", "bbox_right"],
        rows,
    )
    if args.svg:
        svg = render_footprint_svg((height, width), last_weights, regions=last_regions)
        _write_text(args.svg, svg)
    print(f"footprint op={args.op} trials={args.trials} max_count={max(r[4] for r in rows)}")
    return EXIT_OK


def _cmd_taxonomy(args) -> int:
    rows = [
        (r.operator, r.window_size_class, "enabled" if r.long_range else "disabled", r.aggregation, r.complexity)
        for r in taxonomy_table()
    ]
    _write_csv(args.out, ["operator", "window_size_class", "long_range", "aggregation", "complexity"], rows)
    return EXIT_OK


# -------------------------------------------------------------------- bench


def time_radconv_forward(
    shape: tuple[int, int, int],
    kernel_size: int,
    region_side: float,
    repeats: int,
    stride: int = 1,
) -> float:
    """Median wall-clock seconds of one forward pass with uniform regions of
    the given side length."""
    channels, height, width = shape
    grid = KernelGrid.square(kernel_size)
    params = RadConvParams(kernel=grid, groups=1, modulation_mode="none", stride=stride)
    raw_val = math.log(region_side / 2.0)
    raw_off = np.full((4 * grid.k, height, width), raw_val)
    raw_mod = np.ones((grid.k, height, width))
    weights = ConvWeights(group_proj=np.eye(channels)[None])
    rng = PortableRng(7)
    x = FeatureMap(rng.uniforms(shape, -1.0, 1.0))
    radconv_forward(x, weights, raw_off, raw_mod, params)  # warm up
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        radconv_forward(x, weights, raw_off, raw_mod, params)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    return float(np.polyfit(lx, ly, 1)[0])


def _cmd_bench(args) -> int:
    if args.repeats < 1:
        raise UsageError(f"--repeats must be positive, got {args.repeats}")
    rows = []
    for shape in args.shapes:
        channels, height, width = shape
        positions = height * width
        k_times = []
        for k_size in args.k_sweep:
            grid_k = k_size * k_size
            seconds = time_radconv_forward(shape, k_size, args.region_side, args.repeats)
            predicted = complexity_estimate(
                "radconv", positions=positions, kernel_size=grid_k, region_side=args.region_side
            ).count
            rows.append(
                ("radconv", f"{channels}x{height}x{width}", grid_k, args.region_side, args.repeats,
                 f"{seconds:.6e}", f"{predicted:.0f}")
            )
            k_times.append((grid_k, seconds))
        r_times = []
        for side in args.r_sweep:
            seconds = time_radconv_forward(shape, 1, float(side), args.repeats)
            predicted = complexity_estimate(
                "radconv", positions=positions, kernel_size=1, region_side=float(side)
            ).count
            rows.append(
                ("radconv", f"{channels}x{height}x{width}", 1, float(side), args.repeats,
                 f"{seconds:.6e}", f"{predicted:.0f}")
            )
            r_times.append((side, seconds))
        if len(k_times) > 1:
            slope = fit_loglog_slope([k for k, _ in k_times], [t for _, t in k_times])
            print(f"shape {shape}: K-sweep log-log slope {slope:.2f} (linear ~ 1)")
        if len(r_times) > 1:
            slope = fit_loglog_slope([r for r, _ in r_times], [t for _, t in r_times])
            print(f"shape {shape}: R-sweep log-log slope {slope:.2f} (quadratic ~ 2)")
    _write_csv(
        args.out,
        ["operator", "shape", "kernel_k", "region_side", "repeats", "median_seconds", "predicted_count"],
        rows,
    )
    return EXIT_OK


# ---------------------------------------------------------------- train-toy


def _cmd_train_toy(args) -> int:
    if args.size < 4:
        raise UsageError(f"--size must be at least 4, got {args.size}")
    if args.steps < 0:
        raise UsageError(f"--steps must be nonnegative, got {args.steps}")
    if args.lr <= 0:
        raise UsageError(f"--lr must be positive, got {args.lr}")
    if not 0 < args.target:
        raise UsageError(f"--target must be positive, got {args.target}")
    task = make_region_task(args.seed, args.size, args.size)
    result = train_toy(task, TrainConfig(learning_rate=args.lr, steps=args.steps, seed=args.seed))
    rows = [(i, f"{loss:.12e}") for i, loss in enumerate(result.losses)]
    _write_csv(args.out, ["step", "loss"], rows)
    if result.diverged:
        print("train-toy diverged: loss or boundary logits became non-finite or ran away", file=sys.stderr)
        return EXIT_FAILED
    ratio = result.final_loss / result.initial_loss if result.initial_loss > 0 else float("inf")
    print(
        f"train-toy seed={args.seed} initial={result.initial_loss:.4e} final={result.final_loss:.4e} "
        f"ratio={ratio:.4f} boundary_error={result.boundary_error:.3f}px"
    )
    return EXIT_OK if ratio < args.target else EXIT_FAILED


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radconv",
        description="Verification and analysis tools for exact region-integration convolution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=_parse_shape, required=True, help="CxHxW")
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--groups", type=int, default=1)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--samples", type=int, default=32, help="coordinates probed per parameter class")
    p.add_argument("--transform", choices=OFFSET_TRANSFORMS, default="exponential")
    p.add_argument("--modulation", choices=MODULATION_MODES, default="softmax_over_k")
    p.add_argument("--negative-control", choices=["flip-right"], default=None)
    p.add_argument("--out", default=None, help="CSV output path (stdout when omitted)")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("oracle", help="closed-form averages vs quadrature")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n", type=int, default=2048, help="quadrature subdivisions per axis")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=_parse_shape, default=(1, 8, 8))
    p.add_argument("--input", default=None, help="RADT tensor to use instead of random planes")
    p.add_argument("--dump", default=None, help="write the first trial's plane as RADT")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("footprint", help="receptive-field footprints")
    p.add_argument("--op", choices=list(FOOTPRINT_OPERATORS), required=True)
    p.add_argument("--shape", type=_parse_shape, default=(1, 16, 16))
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--groups", type=int, default=1)
    p.add_argument("--position", default=None, help="row,col (default: center)")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region", default=None, help="radconv region: 'full' or 't,b,l,r'")
    p.add_argument("--svg", default=None, help="write an SVG rendering of the last trial")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_footprint)

    p = sub.add_parser("taxonomy", help="operator comparison table")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_taxonomy)

    p = sub.add_parser("bench", help="wall-clock timings vs predicted counts")
    p.add_argument("--shapes", type=lambda t: [_parse_shape(s) for s in t.split(",")],
                   default=[(1, 16, 16)])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--k-sweep", type=_parse_int_list, default=[1, 3, 5],
                   help="kernel sizes (per side)")
    p.add_argument("--r-sweep", type=_parse_int_list, default=[2, 4, 8],
                   help="region side lengths")
    p.add_argument("--region-side", type=float, default=4.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("train-toy", help="gradient-descent region recovery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--target", type=float, default=0.01,
                   help="required final/initial loss ratio")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_train_toy)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        argv = _splice_config(argv)
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
