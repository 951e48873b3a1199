"""End-to-end registration runs: load, preprocess, align, warp, report.

Every run produces a ``report.json`` next to the warped output (also on
failure, truncated at the failing stage) containing per-stage wall times,
result summaries, warnings, and the effective configuration.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .affine import AffineTransform
from .config import RegistrationConfig
from .errors import ConfigError, PipelineError
from .fields import DisplacementField, compose_affine_with_field, write_field, zero_field
from .initial_alignment import InitialAlignmentResult, run_initial
from .nonrigid import LevelSchedule, run_nonrigid
from .preprocessing import normalize_intensity, preprocess_pair, to_grayscale
from .pyramid_io import PyramidImage, load_image, read_region, resample
from .warping import WarpPlan, warp_image_tiled


@dataclass
class StageReport:
    name: str
    seconds: float
    summary: dict


@dataclass
class RunReport:
    stages: list[StageReport] = dc_field(default_factory=list)
    warnings: list[str] = dc_field(default_factory=list)
    config: dict = dc_field(default_factory=dict)
    outputs: dict = dc_field(default_factory=dict)
    error: dict | None = None

    def to_dict(self) -> dict:
        return {
            "stages": [{"name": s.name, "seconds": s.seconds, "summary": s.summary}
                       for s in self.stages],
            "warnings": list(self.warnings),
            "config": self.config,
            "outputs": self.outputs,
            "error": self.error,
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def render_checkerboard(a: np.ndarray, b: np.ndarray, cell: int) -> np.ndarray:
    """Alternate cell x cell blocks of two same-shape rasters."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if cell < 1:
        raise ValueError("cell must be positive")
    h, w = a.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    take_a = ((yy // cell) + (xx // cell)) % 2 == 0
    if a.ndim == 3:
        take_a = take_a[:, :, None]
    return np.where(take_a, a, b)


def _zero_field_for(pair, fixed_img: PyramidImage) -> DisplacementField:
    """Zero field on a domain with exactly uniform grid scale covering the
    fixed image."""
    gh, gw = pair.fixed.shape[:2]
    k = max(-(-fixed_img.level0_width // gw), -(-fixed_img.level0_height // gh), 1)
    return zero_field(gw, gh, gw * k, gh * k)


def _preview_of_warped(path, pair_shape) -> np.ndarray:
    """Read a pyramid level of the warped output near preview resolution."""
    img = load_image(path)
    target = max(pair_shape)
    k = 0
    for i, level in enumerate(img.levels):
        if max(level.width, level.height) >= target:
            k = i
        else:
            break
    level = img.levels[k]
    raster = read_region(img, k, 0, 0, level.width, level.height)
    factor = target / max(level.width, level.height)
    if factor != 1.0:
        raster = resample(raster, factor)
    gray = to_grayscale(raster)
    norm, _ = normalize_intensity(gray)
    out = np.zeros(pair_shape, np.uint8)
    h = min(pair_shape[0], norm.shape[0])
    w = min(pair_shape[1], norm.shape[1])
    out[:h, :w] = norm[:h, :w]
    return out


def run_pipeline(cfg: RegistrationConfig) -> RunReport:
    """Execute the configured pipeline; raises PipelineError on failure after
    writing the partial report."""
    if not cfg.input.fixed or not cfg.input.moving:
        raise ConfigError("input.fixed and input.moving are required", "input")
    if not cfg.output.warped_path or not cfg.output.field_path:
        raise ConfigError("output.warped_path and output.field_path are required",
                          "output")
    out_dir = Path(cfg.output.warped_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(config=cfg.to_dict())
    report_path = out_dir / "report.json"
    report.outputs["report"] = str(report_path)

    stage_name = "load"

    def finish_stage(name: str, started: float, summary: dict) -> None:
        report.stages.append(StageReport(name, time.perf_counter() - started, summary))

    try:
        t0 = time.perf_counter()
        fixed_img = load_image(cfg.input.fixed)
        moving_img = load_image(cfg.input.moving)
        finish_stage("load", t0, {
            "fixed": [fixed_img.level0_width, fixed_img.level0_height,
                      fixed_img.channels, fixed_img.num_levels],
            "moving": [moving_img.level0_width, moving_img.level0_height,
                       moving_img.channels, moving_img.num_levels],
        })

        stage_name = "preprocess"
        t0 = time.perf_counter()
        pair = preprocess_pair(
            fixed_img, moving_img, cfg.preprocessing.target_long_side,
            low_percentile=cfg.preprocessing.low_percentile,
            high_percentile=cfg.preprocessing.high_percentile,
            read_fill=cfg.preprocessing.read_fill)
        if pair.fixed_flat:
            report.warnings.append("fixed image is constant after preprocessing")
        if pair.moving_flat:
            report.warnings.append("moving image is constant after preprocessing")
        finish_stage("preprocess", t0, {
            "shape": list(pair.fixed.shape), "scale": pair.scale,
        })

        stage_name = "initial"
        t0 = time.perf_counter()
        if cfg.initial_alignment.enabled:
            initial = run_initial(
                pair, angle_step_deg=cfg.initial_alignment.angle_step_deg,
                refine_max_iters=cfg.initial_alignment.refine_max_iters,
                working_long_side=cfg.initial_alignment.working_long_side)
            if initial.low_confidence:
                report.warnings.append(
                    f"initial alignment low confidence (NCC {initial.search_score:.4f}); "
                    "using centroid translation only")
        else:
            initial = InitialAlignmentResult(AffineTransform.identity(), 0.0, 1.0,
                                             False, [])
        if initial.refine_costs:
            _write_trace_csv(out_dir / "refine_trace.csv",
                             ("iteration", "cost"),
                             list(enumerate(initial.refine_costs)))
            report.outputs["refine_trace"] = str(out_dir / "refine_trace.csv")
        finish_stage("initial", t0, {
            "enabled": cfg.initial_alignment.enabled,
            "matrix": initial.transform.matrix.tolist(),
            "rotation_deg": initial.angle_deg,
            "search_score": initial.search_score,
            "low_confidence": initial.low_confidence,
            "refine_iterations": max(len(initial.refine_costs) - 1, 0),
        })

        stage_name = "nonrigid"
        t0 = time.perf_counter()
        if cfg.nonrigid.enabled:
            schedule = LevelSchedule.default(cfg.nonrigid.levels,
                                             tuple(cfg.nonrigid.iterations),
                                             cfg.nonrigid.step, cfg.nonrigid.sigma)
            field, trace = run_nonrigid(pair, initial.transform, schedule,
                                        cfg.nonrigid.registration_long_side)
            _write_trace_csv(out_dir / "nonrigid_trace.csv",
                             ("level", "iteration", "cost"),
                             [(t.level, t.iteration, t.cost) for t in trace])
            report.outputs["nonrigid_trace"] = str(out_dir / "nonrigid_trace.csv")
            per_level = {}
            for t in trace:
                per_level.setdefault(t.level, []).append(t.cost)
            nonrigid_summary = {
                "enabled": True,
                "grid": [field.grid_width, field.grid_height],
                "levels": {str(k): {"initial_cost": v[0], "final_cost": v[-1],
                                    "iterations": len(v) - 1}
                           for k, v in per_level.items()},
            }
        else:
            field = _zero_field_for(pair, fixed_img)
            nonrigid_summary = {"enabled": False,
                                "grid": [field.grid_width, field.grid_height]}
        finish_stage("nonrigid", t0, nonrigid_summary)

        stage_name = "compose"
        t0 = time.perf_counter()
        total = compose_affine_with_field(initial.transform, field)
        finish_stage("compose", t0, {"grid": [total.grid_width, total.grid_height],
                                     "max_displacement": float(np.abs(total.u).max())})

        stage_name = "save_field"
        t0 = time.perf_counter()
        write_field(total, cfg.output.field_path)
        report.outputs["field"] = str(cfg.output.field_path)
        finish_stage("save_field", t0, {"path": str(cfg.output.field_path)})

        stage_name = "warp"
        t0 = time.perf_counter()
        plan = WarpPlan(total, moving_img, fixed_img.level0_width,
                        fixed_img.level0_height, tile_size=cfg.output.tile_size,
                        interpolation=cfg.output.interpolation, fill=cfg.output.fill)
        stats = warp_image_tiled(plan, cfg.output.warped_path,
                                 num_levels=cfg.output.save_levels)
        report.outputs["warped"] = str(cfg.output.warped_path)
        finish_stage("warp", t0, {
            "tiles": stats.tiles, "bytes_written": stats.bytes_written,
            "max_fanin": stats.max_fanin,
            "peak_tracked_bytes": stats.peak_tracked_bytes,
        })

        stage_name = "qc"
        t0 = time.perf_counter()
        preview = _preview_of_warped(cfg.output.warped_path, pair.fixed.shape)
        board = render_checkerboard(pair.fixed, preview,
                                    max(pair.fixed.shape) // 8 or 1)
        from PIL import Image

        qc_path = out_dir / "qc_checkerboard.png"
        Image.fromarray(board).save(qc_path)
        report.outputs["qc_checkerboard"] = str(qc_path)
        finish_stage("qc", t0, {"path": str(qc_path)})
    except Exception as exc:
        report.error = {"stage": stage_name, "type": type(exc).__name__,
                        "message": str(exc)}
        report.write(report_path)
        raise PipelineError(stage_name, exc) from exc

    report.write(report_path)
    return report


def _write_trace_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
