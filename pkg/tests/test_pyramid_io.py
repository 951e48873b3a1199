import numpy as np
import pytest
import tifffile
from hypothesis import given, settings, strategies as st

from slidereg.errors import FormatError
from slidereg.pyramid_io import (
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


def rand_raster(rng, h, w, c=3):
    shape = (h, w) if c == 1 else (h, w, c)
    return rng.integers(0, 256, shape, dtype=np.uint8)


# ---------------------------------------------------------------------------
# save / load round trips


def test_save_load_roundtrip_rgb(tmp_path):
    rng = np.random.default_rng(0)
    img = rand_raster(rng, 700, 900, 3)
    path = tmp_path / "a.tiff"
    save_array_pyramid(img, path, tile_size=256, num_levels=3)
    pyr = load_image(path)
    assert pyr.channels == 3
    assert [(l.width, l.height) for l in pyr.levels] == [(900, 700), (450, 350), (225, 175)]
    back = read_region(pyr, 0, 0, 0, 900, 700)
    assert np.array_equal(back, img)


def test_save_load_roundtrip_gray(tmp_path):
    rng = np.random.default_rng(1)
    img = rand_raster(rng, 300, 257, 1)
    path = tmp_path / "g.tiff"
    save_array_pyramid(img, path, tile_size=256, num_levels=2)
    pyr = load_image(path)
    assert pyr.channels == 1
    assert np.array_equal(read_region(pyr, 0, 0, 0, 257, 300), img)


def test_pyramid_levels_follow_halving_rule(tmp_path):
    # ceil halving on odd dimensions
    img = np.full((1001, 515), 7, np.uint8)
    path = tmp_path / "h.tiff"
    save_array_pyramid(img, path, tile_size=256, num_levels=4)
    pyr = load_image(path)
    dims = [(l.width, l.height) for l in pyr.levels]
    assert dims == [(515, 1001), (258, 501), (129, 251), (65, 126)]


def test_load_rejects_non_halving_pyramid(tmp_path):
    path = tmp_path / "bad.tiff"
    with tifffile.TiffWriter(str(path)) as tw:
        tw.write(np.zeros((600, 800), np.uint8), tile=(256, 256))
        tw.write(np.zeros((299, 400), np.uint8), tile=(256, 256))  # height must be 300
    with pytest.raises(FormatError, match="non-halving"):
        load_image(path)


def test_load_rejects_unsupported_sample_format(tmp_path):
    path = tmp_path / "u16.tiff"
    tifffile.imwrite(str(path), np.zeros((64, 64), np.uint16), tile=(256, 256))
    with pytest.raises(FormatError, match="8-bit"):
        load_image(path)


def test_load_rejects_unsupported_compression(tmp_path):
    from PIL import Image

    path = tmp_path / "lzw.tiff"
    Image.fromarray(np.zeros((64, 64), np.uint8)).save(path, compression="tiff_lzw")
    with pytest.raises(FormatError, match="compression"):
        load_image(path)


def test_load_png_single_level(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(2)
    img = rand_raster(rng, 512, 512, 3)
    path = tmp_path / "p.png"
    Image.fromarray(img).save(path)
    pyr = load_image(path)
    assert pyr.num_levels == 1
    assert np.array_equal(read_region(pyr, 0, 0, 0, 512, 512), img)


def test_load_reads_tifffile_written_uncompressed(tmp_path):
    # compression "none" must also be readable
    rng = np.random.default_rng(3)
    img = rand_raster(rng, 300, 300, 1)
    path = tmp_path / "raw.tiff"
    tifffile.imwrite(str(path), img, tile=(256, 256))
    pyr = load_image(path)
    assert np.array_equal(read_region(pyr, 0, 0, 0, 300, 300), img)


def test_load_reads_striped_tiff(tmp_path):
    rng = np.random.default_rng(4)
    img = rand_raster(rng, 311, 200, 3)
    path = tmp_path / "s.tiff"
    tifffile.imwrite(str(path), img, rowsperstrip=64, compression="adobe_deflate")
    pyr = load_image(path)
    assert np.array_equal(read_region(pyr, 0, 0, 0, 200, 311), img)


# ---------------------------------------------------------------------------
# read_region


def test_read_region_top_left_tile_identity(tmp_path):
    rng = np.random.default_rng(5)
    img = rand_raster(rng, 600, 600, 3)
    path = tmp_path / "t.tiff"
    save_array_pyramid(img, path, tile_size=256, num_levels=1)
    pyr = load_image(path)
    region = read_region(pyr, 0, 0, 0, 256, 256)
    assert np.array_equal(region, img[:256, :256])


def test_read_region_out_of_bounds_fill():
    img = PyramidImage.from_array(np.full((64, 64), 255, np.uint8))
    region = read_region(img, 0, -10, -10, 20, 20, fill=255)
    assert region.shape == (20, 20)
    assert np.all(region == 255)


def test_read_region_fill_value_configurable():
    img = PyramidImage.from_array(np.zeros((8, 8), np.uint8))
    region = read_region(img, 0, -16, 0, 8, 8, fill=17)
    assert np.all(region == 17)


def test_read_region_stitching_matches_monolithic_decode(tmp_path):
    # oracle: tifffile's own full-page decode
    rng = np.random.default_rng(6)
    img = rand_raster(rng, 777, 1033, 3)
    path = tmp_path / "m.tiff"
    save_array_pyramid(img, path, tile_size=256, num_levels=2)
    pyr = load_image(path)
    for level in range(2):
        oracle = tifffile.imread(str(path), key=level)
        h, w = oracle.shape[:2]
        stitched = np.empty_like(oracle)
        step = 200
        for y in range(0, h, step):
            for x in range(0, w, step):
                bw, bh = min(step, w - x), min(step, h - y)
                stitched[y : y + bh, x : x + bw] = read_region(pyr, level, x, y, bw, bh)
        assert np.array_equal(stitched, oracle)
        assert np.array_equal(read_region(pyr, level, 0, 0, w, h), oracle)


@settings(max_examples=25, deadline=None)
@given(st.integers(-20, 120), st.integers(-20, 120), st.integers(1, 64), st.integers(1, 64))
def test_read_region_any_window_matches_array_slice(x, y, w, h):
    rng = np.random.default_rng(7)
    base = rand_raster(rng, 100, 100, 1)
    img = PyramidImage.from_array(base, tile_size=32)
    got = read_region(img, 0, x, y, w, h, fill=9)
    ref = np.full((h, w), 9, np.uint8)
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, 100), min(y + h, 100)
    if x0 < x1 and y0 < y1:
        ref[y0 - y : y1 - y, x0 - x : x1 - x] = base[y0:y1, x0:x1]
    assert np.array_equal(got, ref)


def test_read_region_rejects_bad_level_and_dims():
    img = PyramidImage.from_array(np.zeros((8, 8), np.uint8))
    with pytest.raises(ValueError):
        read_region(img, 1, 0, 0, 4, 4)
    with pytest.raises(ValueError):
        read_region(img, 0, 0, 0, 0, 4)


# ---------------------------------------------------------------------------
# downsampling in the writer


def test_downsample_constant_image_all_levels(tmp_path):
    img = np.full((4096, 4096), 128, np.uint8)
    path = tmp_path / "c.tiff"
    save_array_pyramid(img, path, tile_size=1024, num_levels=3)
    pyr = load_image(path)
    for level, desc in enumerate(pyr.levels):
        r = read_region(pyr, level, 0, 0, desc.width, desc.height)
        assert np.all(r == 128), f"level {level} not constant"


def test_downsample_rounds_half_up():
    # hand-computed oracle: round((0+0+255+255)/4) = round(127.5) = 128
    block = np.array([[0, 0], [255, 255]], np.uint8)
    assert box_downsample2(block)[0, 0] == 128


def test_downsample_edge_blocks_average_covering_samples():
    a = np.array([[10, 20, 30], [40, 50, 60]], np.uint8)
    out = box_downsample2(a)
    assert out.shape == (1, 2)
    assert out[0, 0] == 30  # (10+20+40+50)/4
    assert out[0, 1] == 45  # (30+60)/2


def test_saved_level1_equals_box_downsample_oracle(tmp_path):
    rng = np.random.default_rng(8)
    img = rand_raster(rng, 513, 601, 3)
    path = tmp_path / "d.tiff"
    save_array_pyramid(img, path, tile_size=256, num_levels=2)
    oracle = box_downsample2(img)
    got = tifffile.imread(str(path), key=1)
    assert np.array_equal(got, oracle)


def test_writer_rejects_short_generator(tmp_path):
    tiles = iter([np.zeros((256, 256), np.uint8)])
    with pytest.raises(FormatError, match="exhausted"):
        save_pyramid_tiff(tiles, tmp_path / "x.tiff", width=600, height=600,
                          channels=1, tile_size=256, num_levels=1)


def test_writer_rejects_bad_tile_size(tmp_path):
    with pytest.raises(ValueError, match="tile_size"):
        save_pyramid_tiff(iter([]), tmp_path / "x.tiff", width=10, height=10,
                          channels=1, tile_size=100, num_levels=1)


def test_writer_output_is_classic_little_endian_tiled_deflate(tmp_path):
    img = np.zeros((300, 300), np.uint8)
    path = tmp_path / "fmt.tiff"
    save_array_pyramid(img, path, tile_size=256, num_levels=2)
    with tifffile.TiffFile(str(path)) as tf:
        assert not tf.is_bigtiff
        assert tf.byteorder == "<"
        assert len(tf.pages) == 2
        for page in tf.pages:
            assert page.is_tiled
            assert page.tilewidth == 256 and page.tilelength == 256
            assert int(page.compression) in (8, 32946)


# ---------------------------------------------------------------------------
# pad / resample


def test_pad_to_common_per_dimension_max():
    a = np.zeros((80, 100), np.uint8)
    b = np.zeros((120, 60), np.uint8)
    pa, pb = pad_to_common(a, b, fill=0)
    assert pa.shape == (120, 100) and pb.shape == (120, 100)


def test_pad_to_common_identical_shapes_passthrough():
    rng = np.random.default_rng(9)
    a, b = rand_raster(rng, 33, 44), rand_raster(rng, 33, 44)
    pa, pb = pad_to_common(a, b, fill=0)
    assert np.array_equal(pa, a) and np.array_equal(pb, b)


def test_pad_to_common_fill_placement():
    a = np.array([[5]], np.uint8)
    b = np.zeros((3, 3), np.uint8)
    pa, _ = pad_to_common(a, b, fill=255)
    assert pa[0, 0] == 5
    assert (pa == 255).sum() == 8


def test_pad_to_common_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        pad_to_common(np.zeros((4, 4), np.uint8), np.zeros((4, 4, 3), np.uint8), 0)


def test_resample_dimension_rule():
    r = np.zeros((3000, 4000), np.uint8)
    out = resample(r, 0.5)
    assert out.shape == (1500, 2000)


def test_resample_identity_factor():
    rng = np.random.default_rng(10)
    r = rand_raster(rng, 101, 57)
    assert np.array_equal(resample(r, 1.0), r)


@pytest.mark.parametrize("factor", [0.25, 0.4, 0.77, 1.5, 2.0])
def test_resample_constant_stays_constant(factor):
    r = np.full((64, 96), 77, np.uint8)
    out = resample(r, factor)
    assert np.all(out == 77)


def test_resample_rejects_degenerate():
    with pytest.raises(ValueError):
        resample(np.zeros((4, 4), np.uint8), 0.01)
    with pytest.raises(ValueError):
        resample(np.zeros((4, 4), np.uint8), -1.0)


def test_iter_tiles_covers_image():
    rng = np.random.default_rng(11)
    img = rand_raster(rng, 70, 90, 3)
    rebuilt = np.zeros_like(img)
    it = iter_tiles(img, 32)
    for y in range(0, 70, 32):
        for x in range(0, 90, 32):
            rebuilt[y : y + 32, x : x + 32] = next(it)
    assert np.array_equal(rebuilt, img)
