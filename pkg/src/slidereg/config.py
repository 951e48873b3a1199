"""JSON pipeline configuration: strict schema, defaults, round-trippable.

Unknown keys are rejected (a typo must not silently fall back to a default)
and every violation names the offending dotted key path. The effective
configuration, defaults included, serializes back to JSON and re-parses to
the same values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError

VALID_TILE_SIZES = (256, 512, 1024)
VALID_INTERPOLATIONS = ("bilinear", "nearest")


@dataclass
class InputConfig:
    fixed: str | None = None
    moving: str | None = None


@dataclass
class PreprocessingConfig:
    target_long_side: int = 4096
    low_percentile: float = 1.0
    high_percentile: float = 99.0
    read_fill: int = 255


@dataclass
class InitialAlignmentConfig:
    enabled: bool = True
    angle_step_deg: float = 15.0
    refine_max_iters: int = 100
    working_long_side: int = 1024


@dataclass
class NonrigidConfig:
    enabled: bool = True
    levels: int = 3
    iterations: list[int] = field(default_factory=lambda: [100, 100, 50])
    step: float = 0.5
    sigma: float = 2.0
    registration_long_side: int = 4096


@dataclass
class OutputConfig:
    warped_path: str | None = None
    field_path: str | None = None
    save_levels: int = 5
    tile_size: int = 512
    interpolation: str = "bilinear"
    fill: int = 255


@dataclass
class RegistrationConfig:
    input: InputConfig = field(default_factory=InputConfig)
    preprocessing: PreprocessingConfig = field(default_factory=PreprocessingConfig)
    initial_alignment: InitialAlignmentConfig = field(default_factory=InitialAlignmentConfig)
    nonrigid: NonrigidConfig = field(default_factory=NonrigidConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "input": dict(self.input.__dict__),
            "preprocessing": dict(self.preprocessing.__dict__),
            "initial_alignment": dict(self.initial_alignment.__dict__),
            "nonrigid": {**self.nonrigid.__dict__,
                         "iterations": list(self.nonrigid.iterations)},
            "output": dict(self.output.__dict__),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _require(cond: bool, message: str, path: str) -> None:
    if not cond:
        raise ConfigError(message, path)


def _get_bool(v, path):
    _require(isinstance(v, bool), f"expected true/false, got {v!r}", path)
    return v


def _get_int(v, path, lo, hi):
    _require(isinstance(v, int) and not isinstance(v, bool),
             f"expected an integer, got {v!r}", path)
    _require(lo <= v <= hi, f"value {v} outside [{lo}, {hi}]", path)
    return v


def _get_float(v, path, lo, hi, exclusive_lo=False):
    _require(isinstance(v, (int, float)) and not isinstance(v, bool),
             f"expected a number, got {v!r}", path)
    v = float(v)
    if exclusive_lo:
        _require(lo < v <= hi, f"value {v} outside ({lo}, {hi}]", path)
    else:
        _require(lo <= v <= hi, f"value {v} outside [{lo}, {hi}]", path)
    return v


def _get_str_or_none(v, path):
    _require(v is None or isinstance(v, str), f"expected a string or null, got {v!r}", path)
    return v


def _get_choice(v, path, choices):
    _require(v in choices, f"expected one of {choices}, got {v!r}", path)
    return v


def _section(doc: dict, name: str) -> dict:
    v = doc.get(name, {})
    _require(isinstance(v, dict), "expected an object", name)
    return v


def _reject_unknown(d: dict, known, path: str) -> None:
    for key in d:
        if key not in known:
            raise ConfigError(f"unknown key", f"{path}.{key}" if path else key)


def parse_config(text: str) -> RegistrationConfig:
    """Parse and validate a JSON configuration document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    _require(isinstance(doc, dict), "configuration must be a JSON object", "")
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> RegistrationConfig:
    _reject_unknown(doc, {"input", "preprocessing", "initial_alignment",
                          "nonrigid", "output", "seed"}, "")
    cfg = RegistrationConfig()

    sec = _section(doc, "input")
    _reject_unknown(sec, {"fixed", "moving"}, "input")
    if "fixed" in sec:
        cfg.input.fixed = _get_str_or_none(sec["fixed"], "input.fixed")
    if "moving" in sec:
        cfg.input.moving = _get_str_or_none(sec["moving"], "input.moving")

    sec = _section(doc, "preprocessing")
    _reject_unknown(sec, {"target_long_side", "low_percentile", "high_percentile",
                          "read_fill"}, "preprocessing")
    p = cfg.preprocessing
    if "target_long_side" in sec:
        p.target_long_side = _get_int(sec["target_long_side"],
                                      "preprocessing.target_long_side", 64, 65536)
    if "low_percentile" in sec:
        p.low_percentile = _get_float(sec["low_percentile"],
                                      "preprocessing.low_percentile", 0.0, 49.0)
    if "high_percentile" in sec:
        p.high_percentile = _get_float(sec["high_percentile"],
                                       "preprocessing.high_percentile", 51.0, 100.0)
    if "read_fill" in sec:
        p.read_fill = _get_int(sec["read_fill"], "preprocessing.read_fill", 0, 255)

    sec = _section(doc, "initial_alignment")
    _reject_unknown(sec, {"enabled", "angle_step_deg", "refine_max_iters",
                          "working_long_side"}, "initial_alignment")
    ia = cfg.initial_alignment
    if "enabled" in sec:
        ia.enabled = _get_bool(sec["enabled"], "initial_alignment.enabled")
    if "angle_step_deg" in sec:
        ia.angle_step_deg = _get_float(sec["angle_step_deg"],
                                       "initial_alignment.angle_step_deg",
                                       0.0, 90.0, exclusive_lo=True)
    if "refine_max_iters" in sec:
        ia.refine_max_iters = _get_int(sec["refine_max_iters"],
                                       "initial_alignment.refine_max_iters", 0, 100000)
    if "working_long_side" in sec:
        ia.working_long_side = _get_int(sec["working_long_side"],
                                        "initial_alignment.working_long_side", 64, 8192)

    sec = _section(doc, "nonrigid")
    _reject_unknown(sec, {"enabled", "levels", "iterations", "step", "sigma",
                          "registration_long_side"}, "nonrigid")
    nr = cfg.nonrigid
    if "enabled" in sec:
        nr.enabled = _get_bool(sec["enabled"], "nonrigid.enabled")
    if "levels" in sec:
        nr.levels = _get_int(sec["levels"], "nonrigid.levels", 1, 8)
        if "iterations" not in sec:
            default_iters = [100] * (nr.levels - 1) + [50] if nr.levels > 1 else [50]
            nr.iterations = default_iters
    if "iterations" in sec:
        v = sec["iterations"]
        _require(isinstance(v, list), f"expected a list, got {v!r}", "nonrigid.iterations")
        nr.iterations = [_get_int(it, f"nonrigid.iterations[{i}]", 0, 100000)
                         for i, it in enumerate(v)]
    if "step" in sec:
        nr.step = _get_float(sec["step"], "nonrigid.step", 0.0, 100.0, exclusive_lo=True)
    if "sigma" in sec:
        nr.sigma = _get_float(sec["sigma"], "nonrigid.sigma", 0.0, 50.0)
    if "registration_long_side" in sec:
        nr.registration_long_side = _get_int(sec["registration_long_side"],
                                             "nonrigid.registration_long_side", 64, 65536)
    _require(len(nr.iterations) == nr.levels,
             f"needs exactly {nr.levels} entries (one per level), got {len(nr.iterations)}",
             "nonrigid.iterations")

    sec = _section(doc, "output")
    _reject_unknown(sec, {"warped_path", "field_path", "save_levels", "tile_size",
                          "interpolation", "fill"}, "output")
    out = cfg.output
    if "warped_path" in sec:
        out.warped_path = _get_str_or_none(sec["warped_path"], "output.warped_path")
    if "field_path" in sec:
        out.field_path = _get_str_or_none(sec["field_path"], "output.field_path")
    if "save_levels" in sec:
        out.save_levels = _get_int(sec["save_levels"], "output.save_levels", 1, 16)
    if "tile_size" in sec:
        out.tile_size = _get_choice(sec["tile_size"], "output.tile_size", VALID_TILE_SIZES)
    if "interpolation" in sec:
        out.interpolation = _get_choice(sec["interpolation"], "output.interpolation",
                                        VALID_INTERPOLATIONS)
    if "fill" in sec:
        out.fill = _get_int(sec["fill"], "output.fill", 0, 255)

    if "seed" in doc:
        cfg.seed = _get_int(doc["seed"], "seed", -(2 ** 62), 2 ** 62)

    _require(cfg.preprocessing.low_percentile < cfg.preprocessing.high_percentile,
             "low_percentile must be below high_percentile", "preprocessing")
    return cfg


def load_config(path) -> RegistrationConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
