"""Command-line interface.

Exit codes: 0 success, 2 configuration/schema error, 3 IO error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .annotations import (
    LandmarkSet,
    compute_rtre,
    read_landmarks_csv,
    transform_points,
    write_landmarks_csv,
)
from .config import RegistrationConfig, load_config
from .errors import ConfigError, FormatError, NumericalError, PipelineError
from .fields import read_field
from .pipeline import run_pipeline
from .preprocessing import normalize_intensity, to_grayscale
from .pyramid_io import load_image, read_region, resample
from .synthetic import AffineRanges, generate_synthetic_pair, write_synthetic_case
from .warping import WarpPlan, warp_image_tiled

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _cmd_register(args) -> int:
    cfg = load_config(args.config) if args.config else RegistrationConfig()
    if args.fixed:
        cfg.input.fixed = args.fixed
    if args.moving:
        cfg.input.moving = args.moving
    out_dir = Path(args.out_dir)
    if cfg.output.warped_path is None:
        cfg.output.warped_path = str(out_dir / "warped.tiff")
    if cfg.output.field_path is None:
        cfg.output.field_path = str(out_dir / "field.dhdf")
    report = run_pipeline(cfg)
    total = sum(s.seconds for s in report.stages)
    print(f"registered in {total:.1f}s")
    for key, value in sorted(report.outputs.items()):
        print(f"  {key}: {value}")
    for warning in report.warnings:
        print(f"  warning: {warning}")
    return EXIT_OK


def _cmd_warp(args) -> int:
    field = read_field(args.field)
    source = load_image(args.input)
    plan = WarpPlan(field, source, field.level0_width, field.level0_height,
                    tile_size=args.tile, interpolation=args.interp, fill=args.fill)
    stats = warp_image_tiled(plan, args.output)
    print(f"warped {stats.tiles} tiles, {stats.bytes_written} bytes, "
          f"max fan-in {stats.max_fanin}")
    return EXIT_OK


def _cmd_transform_points(args) -> int:
    field = read_field(args.field)
    direction = args.direction.replace("-", "_")
    source_frame = "fixed" if direction == "fixed_to_moving" else "moving"
    pts = read_landmarks_csv(args.points, source_frame)
    out = transform_points(pts, field, direction)
    write_landmarks_csv(out, args.output)
    bad = 0 if out.converged is None else int((~out.converged).sum())
    print(f"transformed {len(out)} points"
          + (f" ({bad} not converged)" if bad else ""))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    warped = read_landmarks_csv(args.warped_points, "moving")
    target = read_landmarks_csv(args.target_points, "moving")
    result = compute_rtre(warped, target, args.diag)
    print(f"points: {len(warped)}")
    print(f"median_rtre: {result.median:.6g}")
    print(f"mean_rtre: {result.mean:.6g}")
    print(f"max_rtre: {result.max:.6g}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    ranges = AffineRanges() if args.full_affine else AffineRanges.gentle()
    pair = generate_synthetic_pair(args.seed, args.size, ranges,
                                   max_deform=args.max_deform)
    paths = write_synthetic_case(pair, args.out_dir)
    for key, value in sorted(paths.items()):
        print(f"  {key}: {value}")
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    from PIL import Image

    img = load_image(args.input)
    level = 0
    for k, desc in enumerate(img.levels):
        if max(desc.width, desc.height) >= args.long_side:
            level = k
        else:
            break
    desc = img.levels[level]
    raster = read_region(img, level, 0, 0, desc.width, desc.height)
    factor = args.long_side / max(desc.width, desc.height)
    if factor != 1.0:
        raster = resample(raster, factor)
    gray = to_grayscale(raster)
    norm, flat = normalize_intensity(gray)
    Image.fromarray(norm).save(args.output)
    print(f"wrote {args.output}" + (" (constant input)" if flat else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slidereg",
        description="Whole-slide image registration: affine + dense nonrigid, "
                    "with memory-bounded tiled warping.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="run the full registration pipeline")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--fixed", help="fixed image path (overrides config)")
    p.add_argument("--moving", help="moving image path (overrides config)")
    p.add_argument("--out-dir", default=".", help="directory for default outputs")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("warp", help="apply a saved displacement field")
    p.add_argument("--field", required=True, help="displacement field (.dhdf)")
    p.add_argument("--input", required=True, help="image to warp (TIFF or PNG)")
    p.add_argument("--output", required=True, help="output pyramidal TIFF")
    p.add_argument("--interp", choices=("bilinear", "nearest"), default="bilinear")
    p.add_argument("--tile", type=int, default=512, choices=(256, 512, 1024))
    p.add_argument("--fill", type=int, default=255)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("transform-points", help="map landmark CSV through a field")
    p.add_argument("--field", required=True)
    p.add_argument("--points", required=True, help="input CSV (header x,y)")
    p.add_argument("--direction", required=True,
                   choices=("fixed-to-moving", "moving-to-fixed"))
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_transform_points)

    p = sub.add_parser("evaluate", help="relative target registration error")
    p.add_argument("--warped-points", required=True)
    p.add_argument("--target-points", required=True)
    p.add_argument("--diag", type=float, required=True,
                   help="fixed image level-0 diagonal in pixels")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("synth", help="generate a seeded synthetic pair")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, default=2048)
    p.add_argument("--max-deform", type=float, default=0.0)
    p.add_argument("--full-affine", action="store_true",
                   help="sample rotations in the full +/-180 range")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="normalize one image to a PNG preview")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--long-side", type=int, default=2048)
    p.set_defaults(func=_cmd_preprocess)

    return parser


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc.cause)
    except (ConfigError, FormatError, NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
