import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slidereg.fields import DisplacementField, zero_field
from slidereg.similarity import (
    MIND_EPSILON,
    mind_data_cost,
    mind_descriptors,
    ncc_global,
)


def bilinear_scalar(stack, x, y):
    """Independent scalar clamp-to-edge bilinear sampler (float64)."""
    h, w = stack.shape[:2]
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    p00 = stack[y0, x0].astype(np.float64)
    p01 = stack[y0, x1].astype(np.float64)
    p10 = stack[y1, x0].astype(np.float64)
    p11 = stack[y1, x1].astype(np.float64)
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return top * (1 - fy) + bot * fy


# ---------------------------------------------------------------------------
# NCC


def test_ncc_self_correlation_is_one():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    assert ncc_global(img, img) == 1.0


def test_ncc_perfect_anticorrelation():
    a = np.array([[1], [2], [3]], np.uint8)
    b = np.array([[3], [2], [1]], np.uint8)
    assert ncc_global(a, b) == pytest.approx(-1.0)


def test_ncc_hand_evaluated_case():
    # Pearson on 4 samples, computed by the direct formula
    a = np.array([0, 1, 0, 1], np.float64).reshape(4, 1)
    b = np.array([1, 1, 0, 0], np.float64).reshape(4, 1)
    am, bm = a - a.mean(), b - b.mean()
    expected = float((am * bm).sum() / np.sqrt((am ** 2).sum() * (bm ** 2).sum()))
    assert expected == 0.0
    assert ncc_global(a, b) == pytest.approx(expected)


def test_ncc_zero_variance_returns_zero():
    flat = np.full((8, 8), 7, np.uint8)
    rng = np.random.default_rng(1)
    other = rng.integers(0, 256, (8, 8), dtype=np.uint8)
    assert ncc_global(flat, other) == 0.0
    assert ncc_global(other, flat) == 0.0


def test_ncc_dimension_mismatch():
    with pytest.raises(ValueError):
        ncc_global(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ncc_mask_selects_subset():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    b = a.copy()
    b[8:] = rng.integers(0, 256, (8, 16), dtype=np.uint8)
    mask = np.zeros((16, 16), bool)
    mask[:8] = True
    assert ncc_global(a, b, mask) == 1.0


def test_ncc_mask_too_small_rejected():
    mask = np.zeros((8, 8), bool)
    mask[0, :8] = True
    with pytest.raises(ValueError, match="16"):
        ncc_global(np.zeros((8, 8)), np.zeros((8, 8)), mask)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ncc_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, (12, 12), dtype=np.uint8)
    b = rng.integers(0, 256, (12, 12), dtype=np.uint8)
    v = ncc_global(a, b)
    assert v == ncc_global(b, a)
    assert -1.0 <= v <= 1.0


def test_ncc_invariant_under_affine_intensity_map():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 80, (20, 20)).astype(np.float64)
    b = rng.integers(0, 80, (20, 20)).astype(np.float64)
    assert ncc_global(a, 3.0 * b + 11.0) == pytest.approx(ncc_global(a, b), abs=1e-12)
    assert ncc_global(a, a * 2.5 + 4.0) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# descriptors


def test_mind_constant_image_hits_epsilon_floor():
    d = mind_descriptors(np.full((16, 16), 120, np.uint8))
    assert d.shape == (16, 16, 4)
    assert np.all(d == 1.0)


def test_mind_single_bright_pixel_symmetry():
    img = np.zeros((17, 17), np.uint8)
    img[8, 8] = 255
    d = mind_descriptors(img)
    center = d[8, 8]
    assert np.allclose(center, center[0])


def test_mind_max_normalized_per_pixel():
    rng = np.random.default_rng(4)
    d = mind_descriptors(rng.integers(0, 256, (24, 24), dtype=np.uint8))
    assert np.allclose(d.max(axis=2), 1.0)
    assert d.min() >= 0.0


def test_mind_invariant_under_affine_intensity_change():
    # needs real local contrast so the distances dwarf the epsilon floor
    rng = np.random.default_rng(5)
    yy, xx = np.mgrid[0:32, 0:32]
    img = (((xx + yy) % 2) * 200 + rng.uniform(0, 55, (32, 32))).astype(np.float32)
    d1 = mind_descriptors(img)
    d2 = mind_descriptors(img * 2.3 + 15.0)
    assert np.abs(d1 - d2).max() < 1e-5


def test_mind_rejects_small_rasters():
    with pytest.raises(ValueError):
        mind_descriptors(np.zeros((4, 100), np.uint8))


# ---------------------------------------------------------------------------
# descriptor data cost


def naive_data_cost(df, dm, field, scale):
    """Brute-force double-loop oracle."""
    h, w, c = df.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            dx, dy = field.u[y, x]
            sampled = bilinear_scalar(dm, x + dx / scale, y + dy / scale)
            for k in range(c):
                diff = sampled[k] - df[y, x, k]
                total += diff * diff
    return total / (h * w)


def test_data_cost_zero_for_identical_and_zero_field():
    rng = np.random.default_rng(6)
    d = mind_descriptors(rng.integers(0, 256, (16, 16), dtype=np.uint8))
    f = zero_field(16, 16, 16, 16)
    assert mind_data_cost(d, d, f, 1.0) == 0.0


def test_data_cost_exact_shift_compensation():
    # dm shifted right by 1 px with field (scale, 0): zero residual away from
    # the border column, verified per pixel by the scalar oracle
    rng = np.random.default_rng(7)
    h, w, scale = 20, 24, 2.0
    df = rng.random((h, w, 4))
    dm = np.empty_like(df)
    dm[:, 1:] = df[:, :-1]
    dm[:, 0] = df[:, 0]
    u = np.zeros((h, w, 2))
    u[:, :, 0] = scale
    f = DisplacementField(u, int(w * scale), int(h * scale))
    per_pixel = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            diff = bilinear_scalar(dm, x + 1.0, y) - df[y, x]
            per_pixel[y, x] = float((diff ** 2).sum())
    assert np.all(per_pixel[:, : w - 1] == 0.0)
    assert mind_data_cost(df, dm, f, scale) == pytest.approx(per_pixel.mean(), rel=1e-12)


def test_data_cost_matches_naive_oracle():
    rng = np.random.default_rng(8)
    df = mind_descriptors(rng.integers(0, 256, (20, 22), dtype=np.uint8))
    dm = mind_descriptors(rng.integers(0, 256, (20, 22), dtype=np.uint8))
    u = rng.normal(0, 3, (20, 22, 2))
    f = DisplacementField(u, 44, 40)
    got = mind_data_cost(df, dm, f, 2.0)
    want = naive_data_cost(df, dm, f, 2.0)
    assert abs(got - want) <= 1e-10 * abs(want)


def test_data_cost_nonnegative_and_dimension_checked():
    rng = np.random.default_rng(9)
    df = mind_descriptors(rng.integers(0, 256, (16, 16), dtype=np.uint8))
    f = zero_field(16, 16, 16, 16)
    dm = mind_descriptors(rng.integers(0, 256, (16, 16), dtype=np.uint8))
    assert mind_data_cost(df, dm, f, 1.0) >= 0.0
    with pytest.raises(ValueError):
        mind_data_cost(df[:8], dm, f, 1.0)
    with pytest.raises(ValueError):
        mind_data_cost(df, dm, zero_field(8, 8, 16, 16), 2.0)
