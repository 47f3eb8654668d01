"""Frame ingestion: raw-y / yuv420 / pgm parsing, cropping, tiling."""

import numpy as np
import pytest

from ipcnn.media_io import (
    BLOCK,
    FORMAT_PGM,
    FORMAT_RAW,
    FORMAT_YUV420,
    BlockOrigin,
    PgmHeaderError,
    Plane,
    SizeMismatchError,
    load_luma,
    tile_origins,
    write_luma,
)


def make_pgm(arr: np.ndarray, comment: bool = False) -> bytes:
    h, w = arr.shape
    header = b"P5\n"
    if comment:
        header += b"# a comment line\n"
    header += f"{w} {h}\n255\n".encode()
    return header + arr.astype(np.uint8).tobytes()


class TestPlane:
    def test_valid_plane(self):
        p = Plane(np.zeros((16, 24), dtype=np.uint8))
        assert p.width == 24
        assert p.height == 16

    def test_rejects_non_multiple_of_8(self):
        with pytest.raises(ValueError):
            Plane(np.zeros((12, 16), dtype=np.uint8))

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValueError):
            Plane(np.zeros((8, 8), dtype=np.int32))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            Plane(np.zeros((8, 8, 3), dtype=np.uint8))


class TestRawY:
    def test_constant_16x16(self, tmp_path):
        path = tmp_path / "c.yuv"
        path.write_bytes(bytes([128]) * 256)
        plane = load_luma(str(path), FORMAT_RAW, 16, 16)
        assert plane.samples.shape == (16, 16)
        assert (plane.samples == 128).all()

    def test_row_major_layout(self, tmp_path):
        data = np.arange(16 * 8, dtype=np.uint8).reshape(8, 16)
        path = tmp_path / "r.yuv"
        path.write_bytes(data.tobytes())
        plane = load_luma(str(path), FORMAT_RAW, 16, 8)
        assert (plane.samples == data).all()

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "bad.yuv"
        path.write_bytes(bytes(255))
        with pytest.raises(SizeMismatchError):
            load_luma(str(path), FORMAT_RAW, 16, 16)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_luma(str(tmp_path / "absent.yuv"), FORMAT_RAW, 16, 16)

    def test_crop_to_block_grid(self, tmp_path):
        # 18x18 raw frame loads as the top-left 16x16
        data = np.arange(18 * 18, dtype=np.uint8).reshape(18, 18)
        path = tmp_path / "odd.yuv"
        path.write_bytes(data.tobytes())
        plane = load_luma(str(path), FORMAT_RAW, 18, 18)
        assert plane.samples.shape == (16, 16)
        assert (plane.samples == data[:16, :16]).all()

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        plane = Plane(rng.integers(0, 256, (24, 32), dtype=np.uint8))
        path = tmp_path / "rt.yuv"
        write_luma(plane, str(path))
        again = load_luma(str(path), FORMAT_RAW, 32, 24)
        assert (again.samples == plane.samples).all()


class TestYuv420:
    def test_first_frame_luma_is_leading_bytes(self, tmp_path):
        # oracle: the luma plane is exactly the first width*height bytes
        rng = np.random.default_rng(11)
        data = rng.integers(0, 256, 64 * 64 * 3 // 2, dtype=np.uint8)
        path = tmp_path / "f.yuv"
        path.write_bytes(data.tobytes())
        plane = load_luma(str(path), FORMAT_YUV420, 64, 64)
        assert (plane.samples.ravel() == data[: 64 * 64]).all()

    def test_frame_index(self, tmp_path):
        frame_size = 16 * 16 * 3 // 2
        f0 = bytes([7]) * frame_size
        f1 = bytes([9]) * frame_size
        path = tmp_path / "two.yuv"
        path.write_bytes(f0 + f1)
        assert (load_luma(str(path), FORMAT_YUV420, 16, 16, frame=1).samples == 9).all()

    def test_frame_out_of_range(self, tmp_path):
        path = tmp_path / "one.yuv"
        path.write_bytes(bytes(16 * 16 * 3 // 2))
        with pytest.raises(SizeMismatchError):
            load_luma(str(path), FORMAT_YUV420, 16, 16, frame=1)

    def test_partial_frame_rejected(self, tmp_path):
        path = tmp_path / "p.yuv"
        path.write_bytes(bytes(16 * 16 * 3 // 2 + 1))
        with pytest.raises(SizeMismatchError):
            load_luma(str(path), FORMAT_YUV420, 16, 16)


class TestPgm:
    def test_basic(self, tmp_path):
        rng = np.random.default_rng(5)
        arr = rng.integers(0, 256, (16, 24), dtype=np.uint8)
        path = tmp_path / "a.pgm"
        path.write_bytes(make_pgm(arr))
        plane = load_luma(str(path), FORMAT_PGM)
        assert (plane.samples == arr).all()

    def test_comment_in_header(self, tmp_path):
        arr = np.full((8, 8), 3, dtype=np.uint8)
        path = tmp_path / "c.pgm"
        path.write_bytes(make_pgm(arr, comment=True))
        assert (load_luma(str(path), FORMAT_PGM).samples == 3).all()

    def test_crops_18x18_to_16x16(self, tmp_path):
        arr = np.arange(18 * 18, dtype=np.uint8).reshape(18, 18)
        path = tmp_path / "odd.pgm"
        path.write_bytes(make_pgm(arr))
        plane = load_luma(str(path), FORMAT_PGM)
        assert plane.samples.shape == (16, 16)
        assert (plane.samples == arr[:16, :16]).all()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "p2.pgm"
        path.write_bytes(b"P2\n8 8\n255\n" + bytes(64))
        with pytest.raises(PgmHeaderError):
            load_luma(str(path), FORMAT_PGM)

    def test_bad_maxval(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n8 8\n65535\n" + bytes(128))
        with pytest.raises(PgmHeaderError):
            load_luma(str(path), FORMAT_PGM)

    def test_truncated_pixels(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n8 8\n255\n" + bytes(63))
        with pytest.raises(SizeMismatchError):
            load_luma(str(path), FORMAT_PGM)

    def test_declared_dims_cross_checked(self, tmp_path):
        arr = np.zeros((16, 16), dtype=np.uint8)
        path = tmp_path / "x.pgm"
        path.write_bytes(make_pgm(arr))
        with pytest.raises(SizeMismatchError):
            load_luma(str(path), FORMAT_PGM, width=24, height=16)


class TestTileOrigins:
    def test_16x16(self):
        plane = Plane(np.zeros((16, 16), dtype=np.uint8))
        assert tile_origins(plane) == [
            BlockOrigin(0, 0), BlockOrigin(8, 0), BlockOrigin(0, 8), BlockOrigin(8, 8),
        ]

    def test_single_block(self):
        plane = Plane(np.zeros((8, 8), dtype=np.uint8))
        assert tile_origins(plane) == [BlockOrigin(0, 0)]

    def test_24x16_raster_order(self):
        plane = Plane(np.zeros((16, 24), dtype=np.uint8))
        origins = tile_origins(plane)
        assert len(origins) == 6
        assert origins[:3] == [BlockOrigin(0, 0), BlockOrigin(8, 0), BlockOrigin(16, 0)]

    def test_count_covers_plane(self):
        plane = Plane(np.zeros((40, 64), dtype=np.uint8))
        assert len(tile_origins(plane)) * BLOCK * BLOCK == plane.width * plane.height
