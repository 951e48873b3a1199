import numpy as np
import pytest

from conftest import tissue_raster
from slidereg.affine import AffineTransform
from slidereg.fields import DisplacementField, sample_displacement, zero_field
from slidereg.nonrigid import (
    LevelSchedule,
    ScheduleLevel,
    demons_iteration,
    run_nonrigid,
)
from slidereg.preprocessing import PreprocessedPair
from slidereg.similarity import mind_data_cost, mind_descriptors


def test_schedule_validation():
    with pytest.raises(ValueError):
        LevelSchedule(())
    with pytest.raises(ValueError):
        LevelSchedule((ScheduleLevel(4, 10, 0.5, 2.0),))  # must end at 1
    with pytest.raises(ValueError):
        LevelSchedule((ScheduleLevel(2, 10, 0.5, 2.0), ScheduleLevel(2, 5, 0.5, 2.0)))
    with pytest.raises(ValueError):
        LevelSchedule((ScheduleLevel(1, -1, 0.5, 2.0),))
    sched = LevelSchedule.default()
    assert [lv.downsample for lv in sched.levels] == [4, 2, 1]
    assert [lv.iterations for lv in sched.levels] == [100, 100, 50]


def test_demons_identical_pair_zero_update():
    img = tissue_raster(0, 64)
    d = mind_descriptors(img)
    f = zero_field(64, 64, 64, 64)
    out, cost = demons_iteration(d, d, f, step=0.5, sigma=2.0)
    assert cost == 0.0
    assert np.abs(out.u).max() < 1e-12


def test_demons_shift_decreases_cost():
    img = tissue_raster(1, 96)
    shifted = np.zeros_like(img)
    shifted[:, 2:] = img[:, :-2]  # moving content 2 px right
    df = mind_descriptors(img)
    dm = mind_descriptors(shifted)
    f = zero_field(96, 96, 96, 96)
    before = mind_data_cost(df, dm, f, 1.0)
    out, after = demons_iteration(df, dm, f, step=0.5, sigma=2.0)
    assert out is not f
    assert after < before


def test_demons_returned_cost_never_above_input_cost():
    rng = np.random.default_rng(2)
    img_a = tissue_raster(3, 64)
    img_b = tissue_raster(4, 64)
    df, dm = mind_descriptors(img_a), mind_descriptors(img_b)
    f = DisplacementField(rng.normal(0, 2, (64, 64, 2)), 64, 64)
    base = mind_data_cost(df, dm, f, 1.0)
    for step in (0.1, 0.5, 5.0, 500.0):
        _, cost = demons_iteration(df, dm, f, step=step, sigma=1.0)
        assert cost <= base


def test_demons_rejects_dimension_mismatch():
    img = tissue_raster(5, 64)
    d = mind_descriptors(img)
    with pytest.raises(ValueError):
        demons_iteration(d, d[:32], zero_field(64, 64, 64, 64), 0.5, 2.0)
    with pytest.raises(ValueError):
        demons_iteration(d, d, zero_field(32, 32, 64, 64), 0.5, 2.0)


def make_pair(fixed, moving, scale=1.0):
    return PreprocessedPair(fixed=fixed, moving=moving, scale=scale)


def test_run_nonrigid_identical_pair_small_field():
    img = tissue_raster(6, 256)
    sched = LevelSchedule.default(3, (20, 20, 10))
    field, trace = run_nonrigid(make_pair(img, img), AffineTransform.identity(), sched)
    assert np.abs(field.u).max() < 0.5
    assert trace[0].cost == 0.0


def test_run_nonrigid_zero_iterations_zero_field():
    img = tissue_raster(7, 128)
    sched = LevelSchedule((ScheduleLevel(4, 0, 0.5, 2.0),
                           ScheduleLevel(2, 0, 0.5, 2.0),
                           ScheduleLevel(1, 0, 0.5, 2.0)))
    field, trace = run_nonrigid(make_pair(img, img), AffineTransform.identity(), sched)
    assert np.all(field.u == 0.0)
    assert field.grid_width == 128 and field.level0_width == 128
    assert len(trace) == 3


def test_run_nonrigid_trace_non_increasing_per_level():
    img = tissue_raster(8, 192)
    # moving: smooth synthetic deformation of the fixed raster
    import cv2

    gx, gy = np.meshgrid(np.arange(192, dtype=np.float32), np.arange(192, dtype=np.float32))
    rng = np.random.default_rng(9)
    du = cv2.GaussianBlur(rng.standard_normal((192, 192, 2)).astype(np.float32), (0, 0), 24)
    du *= 6.0 / np.abs(du).max()
    moving = cv2.remap(img, gx + du[:, :, 0], gy + du[:, :, 1], cv2.INTER_LINEAR,
                       borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    sched = LevelSchedule.default(3, (15, 15, 8))
    field, trace = run_nonrigid(make_pair(img, moving), AffineTransform.identity(), sched)
    for level in range(3):
        costs = [t.cost for t in trace if t.level == level]
        assert all(b <= a + 1e-15 for a, b in zip(costs, costs[1:]))
    # the deformation is partially recovered
    assert trace[-1].cost < [t.cost for t in trace if t.level == 2][0] or \
        len([t for t in trace if t.level == 2]) == 1


def test_run_nonrigid_recovers_synthetic_shift():
    img = tissue_raster(10, 192)
    moving = np.zeros_like(img)
    moving[:, 5:] = img[:, :-5]  # moving(x) = img(x - 5): true backward u_x = +5
    sched = LevelSchedule.default(3, (60, 60, 30))
    field, _ = run_nonrigid(make_pair(img, moving), AffineTransform.identity(), sched)
    # displacement near the tissue center should approach the true shift
    c = 96
    dx, dy = sample_displacement(field, c, c)
    assert abs(dx - 5.0) < 1.5
    assert abs(dy) < 1.0


def test_run_nonrigid_respects_scale_units():
    # same geometry at scale 2: displacements come out in level-0 px
    img = tissue_raster(11, 160)
    moving = np.zeros_like(img)
    moving[:, 4:] = img[:, :-4]  # true backward u_x = +4 preprocessed px
    sched = LevelSchedule.default(2, (60, 30))
    field, _ = run_nonrigid(make_pair(img, moving, scale=2.0),
                            AffineTransform.identity(), sched)
    assert field.level0_width == 320
    dx, _ = sample_displacement(field, 160.0, 160.0)
    assert abs(dx - 8.0) < 3.0  # 4 preprocessed px = 8 level-0 px
