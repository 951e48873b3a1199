"""Tiled pyramidal TIFF and PNG input, and streaming pyramid TIFF output.

The supported interchange subset is deliberately narrow: classic
little-endian TIFF, tiled or striped, 8-bit unsigned samples, 1 (gray) or
3 (RGB) interleaved channels, no compression or Deflate, pyramid levels as
chained IFDs in descending resolution where level k has dimensions
``ceil(level0 / 2**k)``. PNG files are ingested as single-level pyramids.

Reads are tile-granular: a region request decodes only the tiles it
intersects, so peak memory is bounded by the output buffer plus one tile.
The pyramid writer consumes level-0 tiles from a generator and spills each
downsampled level to a temporary file, keeping peak memory at one tile row
per level.
"""

from __future__ import annotations

import math
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import cv2
import tifffile

from .errors import FormatError
from .membudget import TRACKER

#: TIFF compression codes accepted by the reader (none, Adobe Deflate, Deflate).
SUPPORTED_COMPRESSIONS = (1, 8, 32946)

#: Tile sizes the pyramid writer accepts.
VALID_TILE_SIZES = (256, 512, 1024)

DEFAULT_FILL = 255


@dataclass(frozen=True)
class LevelDescriptor:
    """Geometry of one pyramid level; edge tiles may be partial."""

    width: int
    height: int
    tile_width: int
    tile_height: int

    @property
    def tiles_across(self) -> int:
        return -(-self.width // self.tile_width)

    @property
    def tiles_down(self) -> int:
        return -(-self.height // self.tile_height)


class _ArrayLevel:
    """Level backed by an in-memory uint8 array of shape (h, w, c)."""

    def __init__(self, arr: np.ndarray):
        self.arr = arr

    def read_into(self, out: np.ndarray, x: int, y: int) -> int:
        h, w = out.shape[:2]
        H, W = self.arr.shape[:2]
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, W), min(y + h, H)
        if x0 < x1 and y0 < y1:
            out[y0 - y : y1 - y, x0 - x : x1 - x] = self.arr[y0:y1, x0:x1]
        return 1


class _TiffLevel:
    """Level backed by tile/strip segments of a TIFF page on disk."""

    def __init__(self, path, width, height, channels, tile_w, tile_h,
                 offsets, bytecounts, compression, is_tiled):
        self.path = path
        self.width = width
        self.height = height
        self.channels = channels
        self.tile_w = tile_w
        self.tile_h = tile_h
        self.offsets = offsets
        self.bytecounts = bytecounts
        self.compression = compression
        self.is_tiled = is_tiled

    def _decode(self, fh, index: int) -> np.ndarray:
        offset = self.offsets[index]
        count = self.bytecounts[index]
        rows = self.tile_h
        if not self.is_tiled:
            rows = min(self.tile_h, self.height - index * self.tile_h)
        expected = rows * self.tile_w * self.channels
        if count == 0 or offset == 0:
            return np.zeros((rows, self.tile_w, self.channels), np.uint8)
        fh.seek(offset)
        raw = fh.read(count)
        if len(raw) != count:
            raise FormatError(f"truncated segment {index} in {self.path}")
        data = raw if self.compression == 1 else zlib.decompress(raw)
        if len(data) < expected:
            raise FormatError(f"segment {index} in {self.path} decodes short "
                              f"({len(data)} < {expected} bytes)")
        arr = np.frombuffer(data[:expected], np.uint8)
        return arr.reshape(rows, self.tile_w, self.channels)

    def read_into(self, out: np.ndarray, x: int, y: int) -> int:
        h, w = out.shape[:2]
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, self.width), min(y + h, self.height)
        if x0 >= x1 or y0 >= y1:
            return 0
        tx0, tx1 = x0 // self.tile_w, (x1 - 1) // self.tile_w
        ty0, ty1 = y0 // self.tile_h, (y1 - 1) // self.tile_h
        tiles_across = -(-self.width // self.tile_w)
        touched = 0
        with open(self.path, "rb") as fh:
            for ty in range(ty0, ty1 + 1):
                for tx in range(tx0, tx1 + 1):
                    tile = self._decode(fh, ty * tiles_across + tx)
                    touched += 1
                    with TRACKER.track(tile.nbytes):
                        ox, oy = tx * self.tile_w, ty * self.tile_h
                        sx0, sy0 = max(x0, ox), max(y0, oy)
                        sx1 = min(x1, ox + tile.shape[1])
                        sy1 = min(y1, oy + tile.shape[0])
                        out[sy0 - y : sy1 - y, sx0 - x : sx1 - x] = \
                            tile[sy0 - oy : sy1 - oy, sx0 - ox : sx1 - ox]
        return touched


class PyramidImage:
    """Multi-level tiled raster; immutable after load, safe for shared reads.

    Level k has dimensions ``ceil(level0 / 2**k)``; samples are 8-bit with
    1 or 3 interleaved channels.
    """

    def __init__(self, path, channels: int, levels: list[LevelDescriptor], backings):
        self.path = path
        self.channels = channels
        self.levels = levels
        self._backings = backings

    @property
    def level0_width(self) -> int:
        return self.levels[0].width

    @property
    def level0_height(self) -> int:
        return self.levels[0].height

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def __repr__(self) -> str:
        return (f"PyramidImage({self.level0_width}x{self.level0_height}, "
                f"{self.channels}ch, {self.num_levels} levels)")

    @classmethod
    def from_array(cls, arr: np.ndarray, tile_size: int | None = None) -> "PyramidImage":
        """Wrap an in-memory uint8 array as a single-level pyramid.

        ``tile_size`` only declares the virtual tile grid used for access
        statistics; reads slice the array directly.
        """
        a = _as_raster3d(arr)
        h, w, c = a.shape
        tw = tile_size or w
        th = tile_size or h
        level = LevelDescriptor(w, h, tw, th)
        return cls(None, c, [level], [_ArrayLevel(a)])


def _as_raster3d(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise FormatError(f"raster must be uint8, got {a.dtype}")
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise FormatError(f"raster must have 1 or 3 channels, got shape {a.shape}")
    return np.ascontiguousarray(a)


def _squeeze_raster(arr: np.ndarray) -> np.ndarray:
    return arr[:, :, 0] if arr.ndim == 3 and arr.shape[2] == 1 else arr


def raster_channels(r: np.ndarray) -> int:
    if r.ndim == 2:
        return 1
    if r.ndim == 3 and r.shape[2] in (1, 3):
        return r.shape[2]
    raise FormatError(f"not a raster: shape {r.shape}")


def _sniff(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:4] in (b"II*\x00", b"MM\x00*"):
        return "tiff"
    if head[:8] == b"\x89PNG\r\n\x1a\n":
        return "png"
    raise FormatError(f"{path}: not a TIFF or PNG file")


def _validate_page(path, k, page) -> None:
    bps = page.bitspersample
    if isinstance(bps, (tuple, list)):
        ok_bits = all(b == 8 for b in bps)
    else:
        ok_bits = bps == 8
    if not ok_bits:
        raise FormatError(f"{path}: level {k} is not 8-bit (bits={bps})")
    if page.samplesperpixel not in (1, 3):
        raise FormatError(f"{path}: level {k} has {page.samplesperpixel} "
                          "samples per pixel (need 1 or 3)")
    if int(page.photometric) not in (1, 2):
        raise FormatError(f"{path}: level {k} photometric {page.photometric!r} unsupported")
    if page.samplesperpixel > 1 and int(page.planarconfig) != 1:
        raise FormatError(f"{path}: level {k} planar configuration unsupported")
    if int(page.compression) not in SUPPORTED_COMPRESSIONS:
        raise FormatError(f"{path}: level {k} compression {page.compression!r} "
                          "unsupported (need none or Deflate)")
    predictor = getattr(page, "predictor", 1)
    if predictor not in (None, 1) and int(predictor) != 1:
        raise FormatError(f"{path}: level {k} uses a predictor, unsupported")
    fmt = getattr(page, "sampleformat", 1)
    if isinstance(fmt, (tuple, list)):
        fmt = fmt[0]
    if fmt not in (None, 1) and int(fmt) != 1:
        raise FormatError(f"{path}: level {k} sample format not unsigned int")


def load_image(path) -> PyramidImage:
    """Open a pyramidal TIFF or a PNG and validate its level chain."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    kind = _sniff(path)
    if kind == "png":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode == "L":
                channels = 1
            elif im.mode == "RGB":
                channels = 3
            else:
                raise FormatError(f"{path}: PNG mode {im.mode!r} unsupported "
                                  "(need 8-bit L or RGB)")
            arr = _as_raster3d(np.asarray(im))
        h, w = arr.shape[:2]
        img = PyramidImage(path, channels, [LevelDescriptor(w, h, w, h)],
                           [_ArrayLevel(arr)])
        return img

    levels: list[LevelDescriptor] = []
    backings: list[_TiffLevel] = []
    channels = None
    with tifffile.TiffFile(str(path)) as tf:
        pages = list(tf.pages)
        if not pages:
            raise FormatError(f"{path}: TIFF contains no images")
        w0 = pages[0].imagewidth
        h0 = pages[0].imagelength
        for k, page in enumerate(pages):
            _validate_page(path, k, page)
            spp = page.samplesperpixel
            if channels is None:
                channels = spp
            elif spp != channels:
                raise FormatError(f"{path}: level {k} changes channel count")
            ew = -(-w0 // (1 << k))
            eh = -(-h0 // (1 << k))
            if page.imagewidth != ew or page.imagelength != eh:
                raise FormatError(
                    f"{path}: non-halving pyramid: level {k} is "
                    f"{page.imagewidth}x{page.imagelength}, expected {ew}x{eh}")
            if page.is_tiled:
                tw, th = page.tilewidth, page.tilelength
                is_tiled = True
            else:
                tw = page.imagewidth
                th = min(page.rowsperstrip or page.imagelength, page.imagelength)
                is_tiled = False
            levels.append(LevelDescriptor(page.imagewidth, page.imagelength, tw, th))
            backings.append(_TiffLevel(
                path, page.imagewidth, page.imagelength, channels, tw, th,
                tuple(page.dataoffsets), tuple(page.databytecounts),
                int(page.compression), is_tiled))
    return PyramidImage(path, channels, levels, backings)


def read_region(img: PyramidImage, level: int, x: int, y: int, w: int, h: int,
                fill: int = DEFAULT_FILL) -> np.ndarray:
    """Read a w*h region at (x, y) of a pyramid level.

    Pixels outside the level bounds are set to ``fill``. Only tiles that
    intersect the request are decoded.
    """
    if not 0 <= level < img.num_levels:
        raise ValueError(f"level {level} out of range (image has {img.num_levels})")
    if w <= 0 or h <= 0:
        raise ValueError(f"region dimensions must be positive, got {w}x{h}")
    out = np.full((h, w, img.channels), np.uint8(fill), np.uint8)
    with TRACKER.track(out.nbytes):
        img._backings[level].read_into(out, x, y)
    return _squeeze_raster(out)


def box_downsample2(r: np.ndarray) -> np.ndarray:
    """Halve a raster by 2x2 box mean, rounding half up.

    Output dimensions are ``ceil(input / 2)``; edge blocks average only the
    covering samples.
    """
    a = _as_raster3d(r)
    h, w, c = a.shape
    if h % 2:
        a = np.concatenate([a, a[-1:]], axis=0)
    if w % 2:
        a = np.concatenate([a, a[:, -1:]], axis=1)
    s = a.reshape(a.shape[0] // 2, 2, a.shape[1] // 2, 2, c).astype(np.uint32)
    s = s.sum(axis=(1, 3))
    out = ((s + 2) >> 2).astype(np.uint8)
    return out if r.ndim == 3 else out[:, :, 0]


def iter_tiles(arr: np.ndarray, tile_size: int) -> Iterator[np.ndarray]:
    """Yield row-major tiles of a raster; edge tiles are cropped, not padded."""
    h, w = arr.shape[:2]
    for y in range(0, h, tile_size):
        for x in range(0, w, tile_size):
            yield arr[y : min(y + tile_size, h), x : min(x + tile_size, w)]


def _strip_tiles(strip: np.ndarray, ts: int, channels: int) -> Iterator[np.ndarray]:
    """Yield TIFF-ready tiles of a full-width strip, zero-padded to ts*ts."""
    rows, width = strip.shape[:2]
    for x in range(0, width, ts):
        cols = min(ts, width - x)
        if rows == ts and cols == ts:
            tile = np.ascontiguousarray(strip[:, x : x + ts])
        else:
            tile = np.zeros((ts, ts, channels), np.uint8)
            tile[:rows, :cols] = strip[:, x : x + cols]
        yield tile if channels > 1 else tile[:, :, 0]


def save_pyramid_tiff(tiles: Iterable[np.ndarray], path, *, width: int, height: int,
                      channels: int, tile_size: int, num_levels: int,
                      compression_level: int = 1) -> None:
    """Stream level-0 tiles into a tiled pyramidal TIFF.

    ``tiles`` must yield row-major level-0 tiles of ``tile_size`` (edge tiles
    cropped to the image bounds). Level k+1 is the 2x2 box mean of level k;
    each downsampled level is spilled to a temporary file so peak memory stays
    at one tile row per level. The writer emits classic little-endian TIFF,
    Deflate-compressed, pyramid levels as chained IFDs.
    """
    if tile_size not in VALID_TILE_SIZES:
        raise ValueError(f"tile_size must be one of {VALID_TILE_SIZES}, got {tile_size}")
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    if width < 1 or height < 1:
        raise ValueError(f"bad image dimensions {width}x{height}")
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    photometric = "minisblack" if channels == 1 else "rgb"
    src = iter(tiles)

    def gen_strips_from_tiles(w: int, h: int) -> Iterator[np.ndarray]:
        for y in range(0, h, tile_size):
            rows = min(tile_size, h - y)
            strip = np.empty((rows, w, channels), np.uint8)
            with TRACKER.track(strip.nbytes):
                for x in range(0, w, tile_size):
                    cols = min(tile_size, w - x)
                    try:
                        t = next(src)
                    except StopIteration:
                        raise FormatError(
                            "tile generator exhausted before declared dimensions") from None
                    t = _as_raster3d(t)
                    if t.shape != (rows, cols, channels):
                        raise FormatError(
                            f"tile at ({x},{y}) has shape {t.shape[:2]}, "
                            f"expected {(rows, cols)}")
                    strip[:, x : x + cols] = t
                yield strip

    def gen_strips_from_spill(f, w: int, h: int) -> Iterator[np.ndarray]:
        f.seek(0)
        for y in range(0, h, tile_size):
            rows = min(tile_size, h - y)
            buf = f.read(rows * w * channels)
            strip = np.frombuffer(buf, np.uint8).reshape(rows, w, channels)
            with TRACKER.track(strip.nbytes):
                yield strip

    def level_tiles(strips: Iterator[np.ndarray], sink) -> Iterator[np.ndarray]:
        # spill before yielding: the writer stops pulling after the last tile
        for strip in strips:
            if sink is not None:
                sink.write(box_downsample2(strip).tobytes())
            yield from _strip_tiles(strip, tile_size, channels)

    with tifffile.TiffWriter(str(path), bigtiff=False) as tw:
        spill = None
        lw, lh = width, height
        for k in range(num_levels):
            next_spill = tempfile.TemporaryFile() if k + 1 < num_levels else None
            if k == 0:
                strips = gen_strips_from_tiles(lw, lh)
            else:
                strips = gen_strips_from_spill(spill, lw, lh)
            shape = (lh, lw) if channels == 1 else (lh, lw, channels)
            tw.write(level_tiles(strips, next_spill), shape=shape, dtype=np.uint8,
                     tile=(tile_size, tile_size), photometric=photometric,
                     compression="adobe_deflate",
                     compressionargs={"level": compression_level},
                     subfiletype=0 if k == 0 else 1)
            if spill is not None:
                spill.close()
            spill = next_spill
            lw, lh = -(-lw // 2), -(-lh // 2)
        if spill is not None:
            spill.close()


def save_array_pyramid(arr: np.ndarray, path, *, tile_size: int = 512,
                       num_levels: int | None = None,
                       compression_level: int = 1) -> None:
    """Save an in-memory raster as a pyramidal TIFF."""
    a = _as_raster3d(arr)
    h, w, c = a.shape
    if num_levels is None:
        num_levels = 1
        lw, lh = w, h
        while max(lw, lh) > tile_size:
            lw, lh = -(-lw // 2), -(-lh // 2)
            num_levels += 1
    save_pyramid_tiff(iter_tiles(a, tile_size), path, width=w, height=h,
                      channels=c, tile_size=tile_size, num_levels=num_levels,
                      compression_level=compression_level)


def pad_to_common(a: np.ndarray, b: np.ndarray, fill: int) -> tuple[np.ndarray, np.ndarray]:
    """Pad both rasters to their per-dimension maximum, originals at origin."""
    ca, cb = raster_channels(a), raster_channels(b)
    if ca != cb:
        raise ValueError(f"channel mismatch: {ca} vs {cb}")
    h = max(a.shape[0], b.shape[0])
    w = max(a.shape[1], b.shape[1])

    def pad_one(r: np.ndarray) -> np.ndarray:
        if r.shape[0] == h and r.shape[1] == w:
            return r
        shape = (h, w) if r.ndim == 2 else (h, w, r.shape[2])
        out = np.full(shape, np.uint8(fill), np.uint8)
        out[: r.shape[0], : r.shape[1]] = r
        return out

    return pad_one(a), pad_one(b)


def resample(r: np.ndarray, factor: float) -> np.ndarray:
    """Rescale a raster by ``factor``: bilinear above 0.5, box average below.

    Output dimensions are ``round(dims * factor)`` (half rounds up).
    """
    if factor <= 0:
        raise ValueError(f"resample factor must be positive, got {factor}")
    raster_channels(r)
    h, w = r.shape[:2]
    ow = int(math.floor(w * factor + 0.5))
    oh = int(math.floor(h * factor + 0.5))
    if ow < 1 or oh < 1:
        raise ValueError(f"resample factor {factor} degenerates {w}x{h} to {ow}x{oh}")
    if factor == 1.0:
        return r.copy()
    interp = cv2.INTER_LINEAR if factor > 0.5 else cv2.INTER_AREA
    return cv2.resize(r, (ow, oh), interpolation=interp)
