"""The intra-prediction process with learned refinement in the coding loop.

For every 8x8 block with a fully coded 16x16 context, the network's residual
estimate is subtracted from the context and the block's quadrant of that
target replaces the native prediction before residual coding. Blocks on the
top row and left column have no context and fall back to the plain codec
path. The refined reconstruction quadrants are measured but never written
back into the reconstruction, which keeps the codec's decode path intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import CONTEXT, assemble_context
from .intra_codec import (
    Qp,
    dequantize_inverse_transform,
    gather_reference_samples,
    round_half_away,
    select_best_mode,
    transform_quantize,
)
from .media_io import BLOCK, BlockOrigin, Plane, tile_origins, write_bytes_atomic
from .neuralnet import IpcnnModel, ipcnn_forward


class UnregisteredQpError(KeyError):
    """No model was registered for the requested QP."""


class ModelRegistry:
    """QP -> model mapping; lookups never fall back to a different QP."""

    def __init__(self, models: list[IpcnnModel] | None = None) -> None:
        self._models: dict[int, IpcnnModel] = {}
        for model in models or []:
            self.register(model)

    def register(self, model: IpcnnModel) -> None:
        self._models[model.qp.value] = model

    def get(self, qp: Qp) -> IpcnnModel:
        try:
            return self._models[qp.value]
        except KeyError:
            raise UnregisteredQpError(
                f"no model registered for qp {qp.value}; "
                f"have {sorted(self._models)}"
            ) from None

    def qps(self) -> list[int]:
        return sorted(self._models)


@dataclass
class PredictionOutcome:
    pu_origin: BlockOrigin
    hevc_sse: int
    ipcnn_sse: int
    used_fallback: bool
    refined_context: np.ndarray | None  # 16x16 target Y - R(Y); None on fallback


def normalize(samples: np.ndarray) -> np.ndarray:
    return samples.astype(np.float64) / 255.0


def denormalize(values: np.ndarray) -> np.ndarray:
    """[0,1] reals back to integer samples; exact inverse on 8-bit values."""
    return np.clip(round_half_away(values * 255.0), 0, 255).astype(np.int32)


def ipcnn_predict(model: IpcnnModel, context: np.ndarray) -> np.ndarray:
    """Recover the target block: clamp(context - R(context), 0, 1)."""
    residual = ipcnn_forward(model, context[None, None], mode="infer")[0, 0]
    return np.clip(context - residual, 0.0, 1.0)


def encode_with_ipcnn(original: Plane, qp: Qp,
                      registry: ModelRegistry) -> tuple[Plane, list[PredictionOutcome]]:
    """Code a plane with learned prediction replacement.

    Identical to the plain codec except that each block with full context has
    its prediction replaced by the denormalized PU quadrant of the network's
    target; the residual coded afterwards is against that replacement. The
    best mode is still chosen by minimum SSE first, so the replaced
    prediction inherits the native mode's shape.
    """
    model = registry.get(qp)
    orig = original.samples.astype(np.int32)
    recon = np.zeros_like(orig)
    outcomes: list[PredictionOutcome] = []
    for origin in tile_origins(original):
        x0, y0 = origin
        block = orig[y0 : y0 + BLOCK, x0 : x0 + BLOCK]
        refs = gather_reference_samples(recon, origin)
        _, hevc_pred, hevc_sse = select_best_mode(block, refs)

        fallback = x0 < BLOCK or y0 < BLOCK
        if fallback:
            pred = hevc_pred
            ipcnn_sse = hevc_sse
            refined = None
        else:
            context = assemble_context(recon, origin, hevc_pred)
            refined = ipcnn_predict(model, context)
            pred = denormalize(refined[BLOCK:, BLOCK:])
            ipcnn_sse = int(((block.astype(np.int64) - pred) ** 2).sum())

        coeffs = transform_quantize(block - pred, qp)
        rec = np.clip(pred + dequantize_inverse_transform(coeffs, qp), 0, 255)
        recon[y0 : y0 + BLOCK, x0 : x0 + BLOCK] = rec
        outcomes.append(
            PredictionOutcome(origin, hevc_sse, ipcnn_sse, fallback, refined)
        )
    return Plane(recon.astype(np.uint8)), outcomes


_RECON_QUADRANTS = np.ones((CONTEXT, CONTEXT), dtype=bool)
_RECON_QUADRANTS[BLOCK:, BLOCK:] = False  # exclude the PU quadrant


def refine_reconstructions(model: IpcnnModel, context: np.ndarray,
                           original_window: np.ndarray) -> tuple[float, float]:
    """MSE of the three reconstruction quadrants, before and after refinement.

    Both inputs are normalized 16x16 grids; both MSEs are returned in
    8-bit-squared units (x 255^2).
    """
    target = ipcnn_predict(model, context)
    diff_before = (context - original_window)[_RECON_QUADRANTS]
    diff_after = (target - original_window)[_RECON_QUADRANTS]
    scale = 255.0 ** 2
    return (
        float(np.mean(diff_before**2)) * scale,
        float(np.mean(diff_after**2)) * scale,
    )


def write_outcomes_csv(outcomes: list[PredictionOutcome], path: str) -> None:
    lines = ["origin_x,origin_y,used_fallback,hevc_sse,ipcnn_sse"]
    for o in outcomes:
        lines.append(
            f"{o.pu_origin.x},{o.pu_origin.y},{int(o.used_fallback)},"
            f"{o.hevc_sse},{o.ipcnn_sse}"
        )
    write_bytes_atomic(path, ("\n".join(lines) + "\n").encode("ascii"))
