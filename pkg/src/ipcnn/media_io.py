"""Raw luma frame ingestion and 8x8 block tiling.

Supported inputs: headerless raw luma (one byte per sample, row-major),
planar YUV 4:2:0 (luma plane read, chroma discarded), and binary PGM (P5,
maxval 255). Dimensions not divisible by 8 are cropped down at the bottom
and right edges; nothing is ever padded.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

BLOCK = 8

FORMAT_RAW = "raw-y"
FORMAT_YUV420 = "yuv420"
FORMAT_PGM = "pgm"
FORMATS = (FORMAT_RAW, FORMAT_YUV420, FORMAT_PGM)


class SizeMismatchError(ValueError):
    """Declared dimensions are inconsistent with the file's byte count."""


class PgmHeaderError(ValueError):
    """Malformed or unsupported PGM header."""


class BlockOrigin(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class Plane:
    """One 8-bit luma sample grid; both dimensions positive multiples of 8."""

    samples: np.ndarray

    def __post_init__(self):
        s = self.samples
        if s.ndim != 2 or s.dtype != np.uint8:
            raise ValueError("plane samples must be a 2-D uint8 array")
        h, w = s.shape
        if h <= 0 or w <= 0 or h % BLOCK or w % BLOCK:
            raise ValueError(f"plane dimensions {w}x{h} are not positive multiples of {BLOCK}")

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]


def _crop_to_block_grid(arr: np.ndarray) -> Plane:
    h = (arr.shape[0] // BLOCK) * BLOCK
    w = (arr.shape[1] // BLOCK) * BLOCK
    if h == 0 or w == 0:
        raise SizeMismatchError(
            f"image {arr.shape[1]}x{arr.shape[0]} is smaller than one {BLOCK}x{BLOCK} block"
        )
    return Plane(np.ascontiguousarray(arr[:h, :w]))


def _parse_pgm(data: bytes, path: str) -> np.ndarray:
    # Header = magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, then exactly one whitespace byte before the pixels.
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmHeaderError(f"{path}: truncated PGM header")
        return data[start:pos]

    if next_token() != b"P5":
        raise PgmHeaderError(f"{path}: not a binary PGM (P5) file")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise PgmHeaderError(f"{path}: non-numeric PGM header field") from exc
    if width <= 0 or height <= 0:
        raise PgmHeaderError(f"{path}: invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise PgmHeaderError(f"{path}: unsupported PGM maxval {maxval}, only 255 (8-bit)")
    pos += 1  # the single whitespace separating header from pixel data
    pixels = data[pos : pos + width * height]
    if len(pixels) < width * height:
        raise SizeMismatchError(f"{path}: PGM pixel data shorter than {width}x{height}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def load_luma(path: str, fmt: str, width: int | None = None,
              height: int | None = None, frame: int = 0) -> Plane:
    """Load one luma frame and crop it to the 8x8 block grid.

    width/height are required for raw-y and yuv420 and must be consistent
    with the file's byte count; for pgm they are read from the header (and
    cross-checked if also supplied). frame selects a frame in multi-frame
    yuv420 files and must be 0 otherwise.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}, expected one of {FORMATS}")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as f:
        data = f.read()

    if fmt == FORMAT_PGM:
        if frame != 0:
            raise ValueError("frame index is only meaningful for yuv420 input")
        arr = _parse_pgm(data, path)
        if width is not None and width != arr.shape[1]:
            raise SizeMismatchError(f"{path}: declared width {width} != header width {arr.shape[1]}")
        if height is not None and height != arr.shape[0]:
            raise SizeMismatchError(f"{path}: declared height {height} != header height {arr.shape[0]}")
        return _crop_to_block_grid(arr)

    if width is None or height is None or width <= 0 or height <= 0:
        raise ValueError(f"{fmt} input requires positive --width and --height")

    if fmt == FORMAT_RAW:
        if frame != 0:
            raise ValueError("frame index is only meaningful for yuv420 input")
        if len(data) != width * height:
            raise SizeMismatchError(
                f"{path}: {len(data)} bytes, expected {width * height} for {width}x{height} raw-y"
            )
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
        return _crop_to_block_grid(arr)

    # yuv420: planar, luma first, chroma subsampled 2x2 and discarded
    frame_size = width * height * 3 // 2
    if width % 2 or height % 2:
        raise SizeMismatchError(f"{path}: yuv420 requires even dimensions, got {width}x{height}")
    if len(data) == 0 or len(data) % frame_size:
        raise SizeMismatchError(
            f"{path}: {len(data)} bytes is not a multiple of the {width}x{height} "
            f"yuv420 frame size {frame_size}"
        )
    n_frames = len(data) // frame_size
    if not 0 <= frame < n_frames:
        raise SizeMismatchError(f"{path}: frame {frame} out of range, file holds {n_frames}")
    start = frame * frame_size
    luma = data[start : start + width * height]
    arr = np.frombuffer(luma, dtype=np.uint8).reshape(height, width)
    return _crop_to_block_grid(arr)


def write_luma(plane: Plane, path: str) -> None:
    """Write a plane as headerless raw-y bytes (atomic: temp file + rename)."""
    write_bytes_atomic(path, plane.samples.tobytes())


def write_bytes_atomic(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tile_origins(plane: Plane) -> list[BlockOrigin]:
    """All 8x8 block origins in raster order (left to right, top to bottom)."""
    return [
        BlockOrigin(x, y)
        for y in range(0, plane.height, BLOCK)
        for x in range(0, plane.width, BLOCK)
    ]
