"""Whole-slide image registration: affine + dense nonrigid alignment with
memory-bounded tiled warping, landmark/mask transfer, and evaluation."""

from .affine import AffineTransform
from .annotations import (
    LandmarkSet,
    compute_rtre,
    read_landmarks_csv,
    transform_points,
    warp_mask,
    write_landmarks_csv,
)
from .config import RegistrationConfig, load_config, parse_config
from .errors import (
    ConfigError,
    FormatError,
    NumericalError,
    PipelineError,
    SlideRegError,
)
from .fields import (
    DisplacementField,
    compose_affine_with_field,
    invert_field,
    read_field,
    sample_displacement,
    upsample_field,
    write_field,
    zero_field,
)
from .initial_alignment import (
    estimate_tissue_centroid,
    exhaustive_rotation_search,
    refine_affine,
    run_initial,
)
from .nonrigid import LevelSchedule, ScheduleLevel, demons_iteration, run_nonrigid
from .pipeline import RunReport, render_checkerboard, run_pipeline
from .preprocessing import (
    PreprocessedPair,
    normalize_intensity,
    preprocess_pair,
    to_grayscale,
)
from .pyramid_io import (
    LevelDescriptor,
    PyramidImage,
    box_downsample2,
    iter_tiles,
    load_image,
    pad_to_common,
    read_region,
    resample,
    save_array_pyramid,
    save_pyramid_tiff,
)
from .similarity import mind_data_cost, mind_descriptors, ncc_global
from .synthetic import AffineRanges, SyntheticPair, generate_synthetic_pair, write_synthetic_case
from .warping import WarpPlan, WarpStats, warp_image_tiled, warp_region

__version__ = "0.1.0"
