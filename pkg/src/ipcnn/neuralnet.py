"""From-scratch convolutional network engine with analytic gradients.

Implements exactly what the 10-layer residual network needs: 3x3 same-padded
convolution, spatial batch normalization, ReLU, mean-squared-error loss,
backpropagation, and an Adam optimizer. Forward passes are im2col + GEMM;
backward passes are closed-form (no autodiff). Training runs in float64 so
gradient checks are meaningful; stored models are float32.

The network estimates the noise R(Y) in a context block Y = X + V, so the
clean block is recovered downstream as X = Y - R(Y).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .intra_codec import Qp
from .media_io import write_bytes_atomic

CONTEXT = 16
KERNEL = 3  # all convolutions are 3x3
N_WEIGHT_LAYERS = 10
WIDTH = 64

MAGIC = b"IPCN"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_TAG_CONV, _TAG_BN, _TAG_RELU = 1, 2, 3


class ShapeMismatchError(ValueError):
    pass


class BatchTooSmallError(ValueError):
    """Batch statistics need at least 2 samples."""


class EmptyDatasetError(ValueError):
    pass


class ModelFormatError(ValueError):
    """Model file has a bad magic, version, tag, shape, or byte count."""


def _im2col(x: np.ndarray) -> np.ndarray:
    """(n, c, h, w) -> (n*h*w, c*9) patch matrix under zero same-padding."""
    pad = KERNEL // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
    n, c, h, w = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)


def _corr2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Zero same-padded cross-correlation (no kernel flip)."""
    n, _, h, w = x.shape
    out_c = weight.shape[0]
    out = _im2col(x) @ weight.reshape(out_c, -1).T
    if bias is not None:
        out += bias
    return out.reshape(n, h, w, out_c).transpose(0, 3, 1, 2)


class Conv2d:
    """3x3 convolution, stride 1, zero same-padding.

    rng=None leaves the weights zero; pass a Generator for fan-in-scaled
    normal init (variance 2/fan_in), the right scale ahead of ReLU.
    """

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None) -> None:
        self.in_channels = in_channels
        self.out_channels = out_channels
        shape = (out_channels, in_channels, KERNEL, KERNEL)
        if rng is None:
            self.weight = np.zeros(shape)
        else:
            fan_in = in_channels * KERNEL * KERNEL
            self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        self.bias = np.zeros(out_channels)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cols: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"expected (n, {self.in_channels}, h, w) input, got {x.shape}"
            )
        if not train:
            return _corr2d(x, self.weight, self.bias)
        # cache the patch matrix; backward reuses it for the weight gradient
        self._cols = _im2col(x)
        n, _, h, w = x.shape
        out = self._cols @ self.weight.reshape(self.out_channels, -1).T
        out += self.bias
        return out.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, _, h, w = dy.shape
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(n * h * w, self.out_channels)
        self.grad_bias = dy_flat.sum(axis=0)
        self.grad_weight = (dy_flat.T @ self._cols).reshape(self.weight.shape)
        # dL/dx is dy correlated with the transposed, spatially flipped kernel
        w_t = self.weight.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        return _corr2d(dy, w_t)

    def parameters(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_weight, self.grad_bias]


class BatchNorm2d:
    """Spatial batch norm: per-channel statistics over (batch, height, width)."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9) -> None:
        self.channels = channels
        self.eps = eps
        self.momentum = momentum  # fraction of the old running stat retained
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)
        self._xhat: np.ndarray | None = None
        self._inv_std: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatchError(
                f"expected (n, {self.channels}, h, w) input, got {x.shape}"
            )
        if train:
            if x.shape[0] < 2:
                raise BatchTooSmallError(
                    f"batch of {x.shape[0]} cannot supply batch statistics"
                )
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))  # biased, as normalization uses it
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
        if train:
            self._xhat = xhat
            self._inv_std = inv_std
        return self.gamma[:, None, None] * xhat + self.beta[:, None, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._xhat, self._inv_std
        self.grad_gamma = (dy * xhat).sum(axis=(0, 2, 3))
        self.grad_beta = dy.sum(axis=(0, 2, 3))
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        dxhat = dy * self.gamma[:, None, None]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[:, None, None] / m) * (
            m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
        )

    def parameters(self) -> list[np.ndarray]:
        return [self.gamma, self.beta]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_gamma, self.grad_beta]


class ReLU:
    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._mask

    def parameters(self) -> list[np.ndarray]:
        return []

    def gradients(self) -> list[np.ndarray]:
        return []


Layer = Conv2d | BatchNorm2d | ReLU


class Network:
    """An ordered layer stack with a shared forward/backward protocol."""

    def __init__(self, layers: list[Layer]) -> None:
        self.layers = list(layers)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.gradients()]


def _check_architecture(layers: list[Layer]) -> None:
    expected: list[type] = [Conv2d, ReLU]
    for _ in range(8):
        expected += [Conv2d, BatchNorm2d, ReLU]
    expected.append(Conv2d)
    kinds = [type(l) for l in layers]
    if kinds != expected:
        raise ValueError(f"layer stack is not the {N_WEIGHT_LAYERS}-weight-layer form")
    convs = [l for l in layers if isinstance(l, Conv2d)]
    widths = [c.out_channels for c in convs[:-1]] + [c.in_channels for c in convs[1:]]
    if convs[0].in_channels != 1 or convs[-1].out_channels != 1:
        raise ValueError("network must map 1 channel to 1 channel")
    if any(w != WIDTH for w in widths):
        raise ValueError(f"hidden width must be {WIDTH} throughout")


@dataclass
class IpcnnModel:
    """One QP-specific residual network: Conv+ReLU, 8x(Conv+BN+ReLU), Conv."""

    qp: Qp
    net: Network

    def __post_init__(self) -> None:
        _check_architecture(self.net.layers)

    @property
    def layers(self) -> list[Layer]:
        return self.net.layers


def build_ipcnn_model(qp: Qp, rng: np.random.Generator) -> IpcnnModel:
    layers: list[Layer] = [Conv2d(1, WIDTH, rng), ReLU()]
    for _ in range(8):
        layers += [Conv2d(WIDTH, WIDTH, rng), BatchNorm2d(WIDTH), ReLU()]
    layers.append(Conv2d(WIDTH, 1, rng))
    return IpcnnModel(qp=qp, net=Network(layers))


def conv2d_forward(x: np.ndarray, layer: Conv2d) -> np.ndarray:
    return layer.forward(x, train=False)


def batchnorm_forward(x: np.ndarray, layer: BatchNorm2d, mode: str) -> np.ndarray:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return layer.forward(x, train=mode == "train")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def ipcnn_forward(model: IpcnnModel, y: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Estimate the residual R(y) for a batch of 16x16 context blocks."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if y.ndim != 4 or y.shape[1] != 1 or y.shape[2:] != (CONTEXT, CONTEXT):
        raise ShapeMismatchError(
            f"expected (n, 1, {CONTEXT}, {CONTEXT}) input, got {y.shape}"
        )
    return model.net.forward(y, train=mode == "train")


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements, plus its gradient w.r.t. prediction."""
    if prediction.shape != target.shape:
        raise ShapeMismatchError(
            f"prediction {prediction.shape} vs target {target.shape}"
        )
    diff = prediction - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def backward(model: IpcnnModel | Network, inputs: np.ndarray,
             targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Forward in train mode, then backpropagate the MSE loss.

    Returns the loss and the parameter gradients in Network.parameters() order.
    """
    net = model.net if isinstance(model, IpcnnModel) else model
    prediction = net.forward(inputs, train=True)
    loss, dy = mse_loss(prediction, targets)
    net.backward(dy)
    return loss, net.gradients()


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 30
    # per-epoch batch sizes; None selects the halving default below
    batch_schedule: list[int] | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_schedule is not None:
            if len(self.batch_schedule) != self.epochs:
                raise ValueError("batch_schedule must cover every epoch")
            if any(b < 1 for b in self.batch_schedule):
                raise ValueError("batch sizes must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")


def default_batch_schedule(epochs: int) -> list[int]:
    """Halve the batch size every 10 epochs, 128 down to a floor of 32."""
    return [max(32, 128 >> ((e - 1) // 10)) for e in range(1, epochs + 1)]


@dataclass
class EpochLog:
    epoch: int
    batch_size: int
    train_loss: float
    holdout_loss: float


def _eval_loss(model: IpcnnModel, inputs: np.ndarray, targets: np.ndarray,
               chunk: int = 256) -> float:
    total = 0.0
    for lo in range(0, inputs.shape[0], chunk):
        x = inputs[lo : lo + chunk]
        t = targets[lo : lo + chunk]
        r = ipcnn_forward(model, x, mode="infer")
        total += float(np.sum((r - t) ** 2))
    return total / targets.size


def train(dataset, config: TrainConfig) -> tuple[IpcnnModel, list[EpochLog]]:
    """Train a fresh per-QP model on a Dataset; fully seeded and reproducible.

    The holdout split, weight init, and per-epoch shuffles all draw from one
    Generator seeded by config.seed, so identical inputs give bit-identical
    models. Returns the final-epoch model and the per-epoch loss log.
    """
    count = dataset.count
    if count == 0:
        raise EmptyDatasetError("dataset has no samples")
    schedule = config.batch_schedule or default_batch_schedule(config.epochs)

    rng = np.random.default_rng(config.seed)
    model = build_ipcnn_model(Qp(dataset.qp), rng)

    inputs = dataset.inputs.astype(np.float64)[:, None]   # (n, 1, 16, 16)
    targets = dataset.targets.astype(np.float64)[:, None]
    n_holdout = int(round(count * config.holdout_fraction))
    n_holdout = min(n_holdout, count - 1)  # keep at least one training sample
    perm = rng.permutation(count)
    holdout_idx, train_idx = perm[:n_holdout], perm[n_holdout:]

    params = model.net.parameters()
    state = AdamState.for_params(params)
    logs: list[EpochLog] = []
    for epoch, batch_size in enumerate(schedule, start=1):
        order = train_idx[rng.permutation(train_idx.size)]
        loss_sum = 0.0
        for lo in range(0, order.size, batch_size):
            idx = order[lo : lo + batch_size]
            x, t = inputs[idx], targets[idx]
            if idx.size == 1:
                # batch statistics need n >= 2; exact duplication leaves the
                # mean loss and its gradients unchanged
                x = np.concatenate([x, x])
                t = np.concatenate([t, t])
            loss, grads = backward(model, x, t)
            adam_step(params, grads, state, config.learning_rate,
                      config.beta1, config.beta2, config.eps)
            loss_sum += loss * idx.size
        holdout_loss = (
            _eval_loss(model, inputs[holdout_idx], targets[holdout_idx])
            if n_holdout else float("nan")
        )
        logs.append(EpochLog(epoch, batch_size, loss_sum / order.size, holdout_loss))
    return model, logs


def write_loss_log(logs: list[EpochLog], path: str) -> None:
    lines = ["epoch,batch_size,train_loss,holdout_loss"]
    for log in logs:
        lines.append(
            f"{log.epoch},{log.batch_size},{log.train_loss!r},{log.holdout_loss!r}"
        )
    write_bytes_atomic(path, ("\n".join(lines) + "\n").encode("ascii"))


def _pack_f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_model(model: IpcnnModel, path: str) -> None:
    """Serialize to the model file format; parameters stored as float32."""
    parts = [_HEADER.pack(MAGIC, VERSION, model.qp.value, len(model.layers))]
    for layer in model.layers:
        if isinstance(layer, Conv2d):
            parts.append(struct.pack("<II4I", _TAG_CONV, 4, *layer.weight.shape))
            parts.append(_pack_f32(layer.weight))
            parts.append(_pack_f32(layer.bias))
        elif isinstance(layer, BatchNorm2d):
            parts.append(struct.pack("<III", _TAG_BN, 1, layer.channels))
            for arr in (layer.gamma, layer.beta, layer.running_mean, layer.running_var):
                parts.append(_pack_f32(arr))
            parts.append(struct.pack("<ff", layer.eps, layer.momentum))
        else:
            parts.append(struct.pack("<II", _TAG_RELU, 0))
    write_bytes_atomic(path, b"".join(parts))


class _Cursor:
    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"{self.path}: truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)


def load_model(path: str) -> IpcnnModel:
    with open(path, "rb") as f:
        cur = _Cursor(f.read(), path)
    magic = cur.take(4)
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    (version,) = cur.u32()
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    (qp_value,) = cur.u32()
    (n_layers,) = cur.u32()
    layers: list[Layer] = []
    for _ in range(n_layers):
        tag, ndims = cur.u32(2)
        dims = cur.u32(ndims) if ndims else ()
        if tag == _TAG_CONV:
            if ndims != 4 or dims[2] != KERNEL or dims[3] != KERNEL:
                raise ModelFormatError(f"{path}: bad conv dims {dims}")
            out_c, in_c = dims[0], dims[1]
            conv = Conv2d(in_c, out_c)
            conv.weight = cur.f32_array(out_c * in_c * KERNEL * KERNEL).reshape(dims)
            conv.bias = cur.f32_array(out_c)
            layers.append(conv)
        elif tag == _TAG_BN:
            if ndims != 1:
                raise ModelFormatError(f"{path}: bad batchnorm dims {dims}")
            bn = BatchNorm2d(dims[0])
            bn.gamma = cur.f32_array(dims[0])
            bn.beta = cur.f32_array(dims[0])
            bn.running_mean = cur.f32_array(dims[0])
            bn.running_var = cur.f32_array(dims[0])
            bn.eps, bn.momentum = struct.unpack("<ff", cur.take(8))
            layers.append(bn)
        elif tag == _TAG_RELU:
            if ndims != 0:
                raise ModelFormatError(f"{path}: relu layer carries dims")
            layers.append(ReLU())
        else:
            raise ModelFormatError(f"{path}: unknown layer tag {tag}")
    if cur.pos != len(cur.data):
        raise ModelFormatError(f"{path}: {len(cur.data) - cur.pos} trailing bytes")
    try:
        return IpcnnModel(qp=Qp(qp_value), net=Network(layers))
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
