"""Command-line interface.

Exit codes: 0 success, 2 invalid arguments, 3 data errors, 4 numerical
errors. Diagnostics go to stderr, machine-readable summaries to stdout.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .affine import AffineTransform, load_affine, save_affine
from .errors import DataError, NumericalError
from .evaluation import dice, jacobian_report
from .features import LabelSelection
from .graph import read_graph, write_graph
from .polyaffine import (WeightConfig, affine_result, dumps_sidecar, estimate_polyaffine,
                         invert_transform, load_result, result_paths, save_result)
from .synth import SynthSpec, generate, save_pair
from .volume_io import read_volume, resample, write_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _threads(args):
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("POLAFFINI_THREADS", "1"))


def _selection(args):
    sel = LabelSelection()
    if getattr(args, "exclude", None):
        sel = LabelSelection.dkt_default() if args.exclude == "dkt" else LabelSelection.load(args.exclude)
    return sel


def _sigma(text):
    if text == "auto":
        return text
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("sigma must be positive or 'auto'")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected an integer >= 1")
    return value


def _emit(summary):
    print(json.dumps(summary, sort_keys=True))


def _load_transform(path):
    """An affine text file, or the prefix of a saved polyaffine result."""
    p = str(path)
    if p.endswith(".txt"):
        return load_affine(p)
    for ext in (".nii.gz", ".nii"):
        if Path(result_paths(p, ext)["full_displacement"]).exists():
            return load_result(p, ext)
    raise FileNotFoundError(f"no transform found at {p!r}")


def cmd_estimate(args):
    threads = _threads(args)
    ref = read_volume(args.reference, kind="label")
    mov = read_volume(args.moving, kind="label")
    sel = _selection(args)
    graph = read_graph(args.graph) if args.graph else None
    cfg = WeightConfig(sigma=args.sigma, background_weight=args.bg_weight)
    local_model = "affine" if args.model in ("polyaffine", "affine") else args.model
    t0 = time.perf_counter()
    result = estimate_polyaffine(ref, mov, sel, model=local_model, cfg=cfg,
                                 svf_downsample=args.downsample, steps=args.steps,
                                 threads=threads, graph=graph)
    wall = time.perf_counter() - t0
    if args.model == "affine":
        info, g = result.info, result.graph
        result = affine_result(result.background, ref.grid, threads)
        result.info, result.graph = info, g
        result.info["parameters"]["model"] = "affine"
    else:
        result.info["parameters"]["model"] = args.model
        result.info["parameters"]["local_model"] = local_model
    result.info["timing_seconds"]["estimate_wall"] = wall
    paths = save_result(result, args.output, args.ext, affine_only=args.model == "affine")
    if args.save_graph:
        write_graph(result.graph if result.graph is not None else graph, args.save_graph)
    max_disp = float(np.abs(result.full_displacement.data).max()) if result.full_displacement.data.size else 0.0
    print(f"estimate: {result.info['labels']['paired']} points, "
          f"{len(result.info['fallbacks'])} fallbacks, {wall:.2f} s", file=sys.stderr)
    _emit({"command": "estimate", "model": args.model, "n_points": result.info["labels"]["paired"],
           "fallbacks": len(result.info["fallbacks"]), "wall_seconds": round(wall, 3),
           "max_displacement_mm": max_disp, "outputs": paths})
    return EXIT_OK


def cmd_apply(args):
    threads = _threads(args)
    moving = read_volume(args.moving)
    target = read_volume(args.reference).grid if args.reference else moving.grid
    transform = _load_transform(args.transform) if args.transform else None
    if args.inverse:
        if isinstance(transform, AffineTransform):
            transform = transform.inverse()
        else:
            transform = invert_transform(transform, threads=threads)
    interp = args.interp or ("nearest" if moving.is_integer else "linear")
    out, report = resample(moving, transform, target, interp, threads=threads, return_report=True)
    write_volume(out, args.output)
    if report.clamped:
        print(f"apply: {report.out_of_domain} of {report.total} samples fell outside the "
              "moving grid (edge-clamped)", file=sys.stderr)
    _emit({"command": "apply", "output": args.output, "interpolation": interp,
           "out_of_domain": report.out_of_domain})
    return EXIT_OK


def cmd_dice(args):
    ref = read_volume(args.reference, kind="label")
    warped = read_volume(args.warped, kind="label")
    report = dice(ref, warped, _selection(args))
    if args.json:
        print(report.to_json())
    else:
        print(report.table())
        print(f"mean_dice {report.mean_dice:.6f}")
    return EXIT_OK


def cmd_jacobian(args):
    transform = _load_transform(args.transform)
    if isinstance(transform, AffineTransform):
        grid = read_volume(args.reference).grid
        transform = affine_result(transform, grid)
    report = jacobian_report(transform)
    print(report.to_json() if args.json else report.table())
    return EXIT_OK


def cmd_synth(args):
    spec = SynthSpec(seed=args.seed, n_regions=args.n_regions, dims=tuple(args.dims),
                     spacing=args.spacing, warp=args.warp, affine_in_header=args.affine_in_header,
                     k_anchors=args.k_anchors, magnitude=args.magnitude)
    pair = generate(spec)
    paths = save_pair(pair, args.output, args.ext)
    _emit({"command": "synth", "outputs": paths})
    return EXIT_OK


def cmd_invert(args):
    threads = _threads(args)
    transform = _load_transform(args.transform)
    if isinstance(transform, AffineTransform):
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        save_affine(transform.inverse(), args.output)
        paths = {"affine": args.output}
    else:
        paths = save_result(invert_transform(transform, threads=threads), args.output, args.ext)
    _emit({"command": "invert", "outputs": paths})
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="polaffini",
        description="Feature-based polyaffine initialisation from paired segmentations.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: $POLAFFINI_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="estimate a polyaffine transform")
    p.add_argument("reference", help="reference (fixed) segmentation")
    p.add_argument("moving", help="moving segmentation")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.add_argument("--model", choices=("polyaffine", "affine", "rigid", "translation"),
                   default="polyaffine")
    p.add_argument("--sigma", type=_sigma, default=20.0, help="kernel width in mm, or 'auto'")
    p.add_argument("--bg-weight", type=float, default=1e-5)
    p.add_argument("--steps", type=_positive_int, default=7)
    p.add_argument("--downsample", type=_positive_int, default=2)
    p.add_argument("--exclude", help="label config file, or 'dkt' for the shipped list")
    p.add_argument("--graph", help="precomputed reference graph file")
    p.add_argument("--save-graph", help="write the reference graph here")
    p.add_argument("--ext", choices=(".nii.gz", ".nii"), default=".nii.gz")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("apply", parents=[common], help="resample a volume through a transform")
    p.add_argument("moving")
    p.add_argument("-t", "--transform", help="affine .txt file or result prefix (default identity)")
    p.add_argument("-r", "--reference", help="target grid (default: moving grid)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--interp", choices=("nearest", "linear"))
    p.add_argument("--inverse", action="store_true")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("dice", parents=[common], help="Dice overlap per label")
    p.add_argument("reference")
    p.add_argument("warped")
    p.add_argument("--exclude", help="label config file (exclusions and merges)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_dice)

    p = sub.add_parser("jacobian", parents=[common], help="Jacobian determinant statistics")
    p.add_argument("transform", help="result prefix or affine .txt")
    p.add_argument("-r", "--reference", help="grid for affine transforms")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_jacobian)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic pair with ground truth")
    p.add_argument("output", help="output directory")
    p.add_argument("--warp", choices=("identity", "affine", "polyaffine", "fold"), default="polyaffine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-regions", type=int, default=40)
    p.add_argument("--dims", type=_positive_int, nargs=3, default=[64, 64, 64])
    p.add_argument("--spacing", type=float, default=2.0)
    p.add_argument("--k-anchors", type=_positive_int, default=8)
    p.add_argument("--magnitude", type=float, default=0.2)
    p.add_argument("--affine-in-header", action="store_true")
    p.add_argument("--ext", choices=(".nii.gz", ".nii"), default=".nii.gz")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("invert", parents=[common], help="invert a transform")
    p.add_argument("transform", help="result prefix or affine .txt")
    p.add_argument("-o", "--output", required=True, help="output prefix (or .txt for affines)")
    p.add_argument("--ext", choices=(".nii.gz", ".nii"), default=".nii.gz")
    p.set_defaults(func=cmd_invert)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
