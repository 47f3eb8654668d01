"""Learned refinement of block intra prediction, end to end.

A simplified HEVC-style 8x8 intra codec supplies predictions and
reconstructions; a 10-layer residual CNN (trained per QP, from scratch on
numpy) estimates the noise in a 16x16 context block; subtracting that
estimate refines both the prediction and its three neighboring
reconstruction blocks.
"""

from .media_io import (
    BLOCK,
    BlockOrigin,
    Plane,
    load_luma,
    tile_origins,
    write_luma,
)
from .intra_codec import (
    N_MODES,
    PuRecord,
    Qp,
    RefSamples,
    filter_reference_samples,
    gather_reference_samples,
    predict_intra,
    reconstruct_plane,
    select_best_mode,
)
from .dataset import (
    Dataset,
    TrainingSample,
    build_dataset,
    extract_context,
    make_training_sample,
    read_dataset,
    write_dataset,
)
from .neuralnet import (
    AdamState,
    BatchNorm2d,
    Conv2d,
    EpochLog,
    IpcnnModel,
    Network,
    ReLU,
    TrainConfig,
    adam_step,
    backward,
    build_ipcnn_model,
    ipcnn_forward,
    load_model,
    mse_loss,
    save_model,
    train,
)
from .pipeline import (
    ModelRegistry,
    PredictionOutcome,
    encode_with_ipcnn,
    ipcnn_predict,
    refine_reconstructions,
)

__version__ = "0.1.0"
