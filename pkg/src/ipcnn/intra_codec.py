"""Simplified HEVC-style intra coding for fixed 8x8 prediction units.

Implements the 35 HEVC intra modes (planar, DC, 33 angular) with
reference-sample substitution and smoothing, minimum-SSE mode selection,
and a transform/quantize/reconstruct loop using the orthonormal 8x8 DCT-II
with uniform scalar quantization (qstep = 2^((QP-4)/6)). Blocks are coded
in raster order so every block's references come from already-reconstructed
neighbors, like a real decoder would see them.

Deliberate simplifications versus a full HEVC encoder: one block size
(PU = CU = TU = 8x8), no RDO, no RQT, no entropy coding, no in-loop
filters. Every rounding choice is round-half-away-from-zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .media_io import BLOCK, BlockOrigin, Plane, tile_origins, write_bytes_atomic

N_MODES = 35
MODE_PLANAR = 0
MODE_DC = 1
MODE_HORIZONTAL = 10
MODE_VERTICAL = 26

# Reference smoothing applies at 8x8 luma only to planar and the three
# exact diagonals: min(|mode-26|, |mode-10|) exceeds the threshold of 7.
SMOOTHED_MODES = frozenset((0, 2, 18, 34))

# Displacement per row/column in 1/32-pel units, modes 2..34.
INTRA_PRED_ANGLE = (
    32, 26, 21, 17, 13, 9, 5, 2, 0, -2, -5, -9, -13, -17, -21, -26, -32,
    -26, -21, -17, -13, -9, -5, -2, 0, 2, 5, 9, 13, 17, 21, 26, 32,
)

# round(8192 / angle) for the negative angles; used to project the side
# reference into the main reference array.
INV_ANGLE = {
    -2: -4096, -5: -1638, -9: -910, -13: -630,
    -17: -482, -21: -390, -26: -315, -32: -256,
}

DEFAULT_SAMPLE = 128  # 1 << (bitdepth - 1)


def _dct_matrix() -> np.ndarray:
    k = np.arange(BLOCK, dtype=np.float64)[:, None]
    n = np.arange(BLOCK, dtype=np.float64)[None, :]
    m = np.sqrt(2.0 / BLOCK) * np.cos(np.pi * (2 * n + 1) * k / (2 * BLOCK))
    m[0] *= np.sqrt(0.5)
    return m


DCT8 = _dct_matrix()


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (the codec-wide rule)."""
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


@dataclass(frozen=True)
class Qp:
    """Quantization parameter in [0, 51] and its derived step size."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value <= 51:
            raise ValueError(f"qp {self.value} outside [0, 51]")

    @property
    def qstep(self) -> float:
        return 2.0 ** ((self.value - 4) / 6.0)


@dataclass
class RefSamples:
    """The 33 boundary samples of an 8x8 block, after substitution.

    left[i] sits at (x-1, y+i) top to bottom, corner at (x-1, y-1), top[j]
    at (x+j, y-1) left to right. The *_available flags record availability
    before substitution.
    """

    left: np.ndarray
    corner: int
    top: np.ndarray
    left_available: np.ndarray
    corner_available: bool
    top_available: np.ndarray


@dataclass
class PuRecord:
    origin: BlockOrigin
    mode: int
    prediction: np.ndarray
    reconstruction: np.ndarray
    sse: int


def gather_reference_samples(recon: np.ndarray, origin: BlockOrigin) -> RefSamples:
    """Collect and substitute the 33 reference samples around one block.

    recon is the in-progress reconstruction; a sample is available iff it
    lies inside the plane and its block precedes origin in raster coding
    order. Unavailable samples are filled by scanning bottom-left to
    top-right and propagating the previous available value (all 128 when
    nothing is available).
    """
    h, w = recon.shape
    x0, y0 = origin
    if x0 % BLOCK or y0 % BLOCK or not (0 <= x0 <= w - BLOCK and 0 <= y0 <= h - BLOCK):
        raise ValueError(f"block origin {origin} outside plane {w}x{h}")

    left = np.zeros(2 * BLOCK, dtype=np.int32)
    top = np.zeros(2 * BLOCK, dtype=np.int32)
    left_avail = np.zeros(2 * BLOCK, dtype=bool)
    top_avail = np.zeros(2 * BLOCK, dtype=bool)
    corner = 0
    corner_avail = x0 > 0 and y0 > 0
    if corner_avail:
        corner = int(recon[y0 - 1, x0 - 1])
    if x0 > 0:
        # Beside the block only; below-left rows are not yet coded in raster order.
        left_avail[:BLOCK] = True
        left[:BLOCK] = recon[y0 : y0 + BLOCK, x0 - 1]
    if y0 > 0:
        n_top = min(2 * BLOCK, w - x0)
        top_avail[:n_top] = True
        top[:n_top] = recon[y0 - 1, x0 : x0 + n_top]

    # Substitution scan: left bottom-to-top, corner, top left-to-right.
    scan = np.concatenate((left[::-1], [corner], top))
    avail = np.concatenate((left_avail[::-1], [corner_avail], top_avail))
    if not avail.any():
        scan[:] = DEFAULT_SAMPLE
    else:
        if not avail[0]:
            scan[0] = scan[np.flatnonzero(avail)[0]]
        for i in range(1, scan.size):
            if not avail[i]:
                scan[i] = scan[i - 1]

    return RefSamples(
        left=scan[15::-1].copy(),
        corner=int(scan[16]),
        top=scan[17:].copy(),
        left_available=left_avail,
        corner_available=bool(corner_avail),
        top_available=top_avail,
    )


def _smoothed(refs: RefSamples) -> RefSamples:
    # [1 2 1]/4 along the boundary, endpoints kept; the scan array ordering
    # makes each sample's filter neighbors its scan neighbors.
    a = np.concatenate((refs.left[::-1], [refs.corner], refs.top)).astype(np.int32)
    b = a.copy()
    b[1:-1] = (a[:-2] + 2 * a[1:-1] + a[2:] + 2) >> 2
    return RefSamples(
        left=b[15::-1].copy(),
        corner=int(b[16]),
        top=b[17:].copy(),
        left_available=refs.left_available,
        corner_available=refs.corner_available,
        top_available=refs.top_available,
    )


def filter_reference_samples(refs: RefSamples, mode: int) -> RefSamples:
    """Apply 8x8 luma reference smoothing for the modes that use it."""
    if mode in SMOOTHED_MODES:
        return _smoothed(refs)
    return refs


def _predict_planar(refs: RefSamples) -> np.ndarray:
    top = refs.top.astype(np.int32)
    left = refs.left.astype(np.int32)
    x = np.arange(BLOCK, dtype=np.int32)[None, :]
    y = np.arange(BLOCK, dtype=np.int32)[:, None]
    horiz = (BLOCK - 1 - x) * left[:BLOCK][:, None] + (x + 1) * top[BLOCK]
    vert = (BLOCK - 1 - y) * top[:BLOCK][None, :] + (y + 1) * left[BLOCK]
    return (horiz + vert + BLOCK) >> 4


def _predict_dc(refs: RefSamples) -> np.ndarray:
    top = refs.top[:BLOCK].astype(np.int32)
    left = refs.left[:BLOCK].astype(np.int32)
    dc = (int(top.sum()) + int(left.sum()) + BLOCK) >> 4
    pred = np.full((BLOCK, BLOCK), dc, dtype=np.int32)
    # Luma edge filtering for block sizes below 32.
    pred[0, 1:] = (top[1:] + 3 * dc + 2) >> 2
    pred[1:, 0] = (left[1:] + 3 * dc + 2) >> 2
    pred[0, 0] = (left[0] + 2 * dc + top[0] + 2) >> 2
    return pred


def _predict_angular(refs: RefSamples, mode: int) -> np.ndarray:
    angle = INTRA_PRED_ANGLE[mode - 2]
    vertical = mode >= 18
    main = refs.top if vertical else refs.left
    side = refs.left if vertical else refs.top

    # Reference array over logical indices -8..16, offset by 8, plus one
    # trailing pad slot that is only ever read with interpolation weight 0.
    ref = np.zeros(3 * BLOCK + 2, dtype=np.int32)
    off = BLOCK
    ref[off] = refs.corner
    if angle < 0:
        ref[off + 1 : off + BLOCK + 1] = main[:BLOCK]
        if (BLOCK * angle) >> 5 < -1:
            inv = INV_ANGLE[angle]
            for x in range(-1, ((BLOCK * angle) >> 5) - 1, -1):
                k = ((x * inv + 128) >> 8) - 1
                ref[off + x] = refs.corner if k < 0 else side[k]
    else:
        ref[off + 1 : off + 1 + 2 * BLOCK] = main

    d = np.arange(1, BLOCK + 1, dtype=np.int32)
    idx = (d * angle) >> 5
    fact = (d * angle) & 31
    base = off + idx + 1
    cols = np.arange(BLOCK, dtype=np.int32)
    pos = base[:, None] + cols[None, :]
    # With fact == 0 the blend reduces exactly to ref[pos].
    pred = ((32 - fact)[:, None] * ref[pos] + fact[:, None] * ref[pos + 1] + 16) >> 5

    if not vertical:
        pred = pred.T.copy()
    if mode == MODE_VERTICAL:
        adj = refs.top[0] + ((refs.left[:BLOCK] - refs.corner) >> 1)
        pred[:, 0] = np.clip(adj, 0, 255)
    elif mode == MODE_HORIZONTAL:
        adj = refs.left[0] + ((refs.top[:BLOCK] - refs.corner) >> 1)
        pred[0, :] = np.clip(adj, 0, 255)
    return pred


def predict_intra(refs: RefSamples, mode: int) -> np.ndarray:
    """Predict one 8x8 block from already-filtered reference samples."""
    if mode == MODE_PLANAR:
        return _predict_planar(refs)
    if mode == MODE_DC:
        return _predict_dc(refs)
    if 2 <= mode < N_MODES:
        return _predict_angular(refs, mode)
    raise ValueError(f"invalid intra mode {mode}")


def select_best_mode(original: np.ndarray, refs: RefSamples) -> tuple[int, np.ndarray, int]:
    """Minimum-SSE mode over all 35 candidates; ties go to the lowest index.

    refs must be unfiltered; per-mode smoothing is applied internally.
    """
    smoothed = _smoothed(refs)
    orig = original.astype(np.int64)
    best_mode, best_pred, best_sse = -1, None, None
    for mode in range(N_MODES):
        pred = predict_intra(smoothed if mode in SMOOTHED_MODES else refs, mode)
        sse = int(((orig - pred) ** 2).sum())
        if best_sse is None or sse < best_sse:
            best_mode, best_pred, best_sse = mode, pred, sse
    return best_mode, best_pred, best_sse


def transform_quantize(residual: np.ndarray, qp: Qp) -> np.ndarray:
    """Orthonormal 8x8 DCT-II of the residual, divided by qstep and rounded."""
    coeffs = DCT8 @ residual.astype(np.float64) @ DCT8.T
    return round_half_away(coeffs / qp.qstep).astype(np.int64)


def dequantize_inverse_transform(coeffs: np.ndarray, qp: Qp) -> np.ndarray:
    """Scale coefficients back by qstep and invert the DCT, rounding to ints."""
    rec = DCT8.T @ (coeffs.astype(np.float64) * qp.qstep) @ DCT8
    return round_half_away(rec).astype(np.int32)


def reconstruct_plane(original: Plane, qp: Qp) -> tuple[Plane, list[PuRecord]]:
    """Code every 8x8 block in raster order and return the reconstruction."""
    orig = original.samples.astype(np.int32)
    recon = np.zeros_like(orig)
    records: list[PuRecord] = []
    for origin in tile_origins(original):
        x0, y0 = origin
        block = orig[y0 : y0 + BLOCK, x0 : x0 + BLOCK]
        refs = gather_reference_samples(recon, origin)
        mode, pred, sse = select_best_mode(block, refs)
        coeffs = transform_quantize(block - pred, qp)
        rec_residual = dequantize_inverse_transform(coeffs, qp)
        rec = np.clip(pred + rec_residual, 0, 255)
        recon[y0 : y0 + BLOCK, x0 : x0 + BLOCK] = rec
        records.append(PuRecord(origin, mode, pred, rec, sse))
    return Plane(recon.astype(np.uint8)), records


def write_records_csv(records: list[PuRecord], path: str) -> None:
    lines = ["origin_x,origin_y,mode,sse"]
    for r in records:
        lines.append(f"{r.origin.x},{r.origin.y},{r.mode},{r.sse}")
    write_bytes_atomic(path, ("\n".join(lines) + "\n").encode("ascii"))
