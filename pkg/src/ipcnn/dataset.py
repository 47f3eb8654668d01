"""Training-corpus construction: 16x16 context blocks and residual targets.

Each eligible 8x8 block (one with fully coded neighbors above, left, and
above-left) yields one sample: the three neighboring reconstruction blocks
plus the block's own best-mode intra prediction, assembled into a 16x16
grid normalized to [0, 1], paired with its residual against the original
pixels. The prediction quadrant therefore carries prediction error and the
other three carry reconstruction error; both are what the network learns
to remove.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .intra_codec import PuRecord, Qp, reconstruct_plane
from .media_io import BLOCK, BlockOrigin, Plane, tile_origins, write_bytes_atomic

CONTEXT = 2 * BLOCK  # 16

MAGIC = b"IPDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIQII")


class ContextUnavailableError(ValueError):
    """The block sits on the top row or left column; no full context exists."""


class DatasetFormatError(ValueError):
    """Dataset file has a bad magic, version, shape, or byte count."""


@dataclass
class TrainingSample:
    input: np.ndarray     # 16x16 context, [0, 1]
    original: np.ndarray  # co-located original window, [0, 1]
    target: np.ndarray    # input - original


@dataclass
class Dataset:
    """In-memory form of a dataset file: per-QP context/residual pairs."""

    qp: int
    inputs: np.ndarray   # (count, 16, 16) float32
    targets: np.ndarray  # (count, 16, 16) float32

    @property
    def count(self) -> int:
        return self.inputs.shape[0]


def assemble_context(recon: np.ndarray, origin: BlockOrigin,
                     prediction: np.ndarray) -> np.ndarray:
    """Compose the normalized 16x16 context: three reconstruction quadrants
    from the plane, the block's own quadrant from its intra prediction."""
    x0, y0 = origin
    if x0 < BLOCK or y0 < BLOCK:
        raise ContextUnavailableError(
            f"block at {origin} has no fully coded 16x16 context"
        )
    ctx = recon[y0 - BLOCK : y0 + BLOCK, x0 - BLOCK : x0 + BLOCK].astype(np.float64)
    ctx[BLOCK:, BLOCK:] = prediction
    return ctx / 255.0


def extract_context(recon: Plane, records: list[PuRecord],
                    pu_origin: BlockOrigin) -> np.ndarray:
    """Context for one coded block, using its recorded best-mode prediction."""
    for record in records:
        if record.origin == pu_origin:
            return assemble_context(
                recon.samples.astype(np.int32), pu_origin, record.prediction
            )
    raise ValueError(f"no coding record for block at {pu_origin}")


def make_training_sample(context: np.ndarray, original: Plane,
                         pu_origin: BlockOrigin) -> TrainingSample:
    x0, y0 = pu_origin
    if not (BLOCK <= x0 <= original.width - BLOCK and BLOCK <= y0 <= original.height - BLOCK):
        raise ValueError(f"16x16 window at {pu_origin} outside plane")
    window = original.samples[y0 - BLOCK : y0 + BLOCK, x0 - BLOCK : x0 + BLOCK]
    norm = window.astype(np.float64) / 255.0
    return TrainingSample(input=context, original=norm, target=context - norm)


def eligible_origins(plane: Plane) -> list[BlockOrigin]:
    """Block origins with a full context, in raster order."""
    return [o for o in tile_origins(plane) if o.x >= BLOCK and o.y >= BLOCK]


def build_dataset(planes: list[Plane], qp: Qp) -> Dataset:
    """Code every plane at qp and collect one sample per eligible block."""
    if not planes:
        raise ValueError("empty corpus")
    inputs, targets = [], []
    for plane in planes:
        recon, records = reconstruct_plane(plane, qp)
        by_origin = {r.origin: r for r in records}
        recon_arr = recon.samples.astype(np.int32)
        for origin in eligible_origins(plane):
            context = assemble_context(recon_arr, origin, by_origin[origin].prediction)
            sample = make_training_sample(context, plane, origin)
            inputs.append(sample.input.astype(np.float32))
            targets.append(sample.target.astype(np.float32))
    if not inputs:
        raise ValueError("corpus has no block with a full 16x16 context")
    return Dataset(
        qp=qp.value,
        inputs=np.stack(inputs),
        targets=np.stack(targets),
    )


def write_dataset(dataset: Dataset, path: str) -> None:
    header = _HEADER.pack(MAGIC, VERSION, dataset.qp, dataset.count, CONTEXT, CONTEXT)
    body = np.empty((dataset.count, 2, CONTEXT, CONTEXT), dtype="<f4")
    body[:, 0] = dataset.inputs
    body[:, 1] = dataset.targets
    write_bytes_atomic(path, header + body.tobytes())


def read_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, qp, count, height, width = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if height != CONTEXT or width != CONTEXT:
        raise DatasetFormatError(f"{path}: unexpected sample dims {width}x{height}")
    expected = _HEADER.size + count * 2 * CONTEXT * CONTEXT * 4
    if len(data) != expected:
        raise DatasetFormatError(
            f"{path}: {len(data)} bytes, expected {expected} for {count} samples"
        )
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    body = body.reshape(count, 2, CONTEXT, CONTEXT)
    return Dataset(qp=int(qp), inputs=body[:, 0].copy(), targets=body[:, 1].copy())
