"""Encoder-decoder amplitude estimators: plain CNN and CNN with a ConvLSTM bottleneck.

The network maps a ``(batch, freq, pair, 2)`` tensor of Re/Im beamforming
entries to a ``(batch, freq, pair, 1)`` tensor of CSI amplitudes.  Weights
live in a flat ``{layer_path: array}`` store so the optimizer and checkpoint
code stay independent of the architecture.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import container
from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_forward,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2d_backward,
    conv_transpose2d_forward,
    convlstm_backward,
    convlstm_forward,
    dropout_backward,
    dropout_forward,
    masked_mse,
    maxpool_freq_backward,
    maxpool_freq_forward,
    relu_backward,
    relu_forward,
)

VARIANTS = ("cnn", "cnn_convlstm")
CHECKPOINT_MAGIC = b"BFMW"


class NonFiniteError(FloatingPointError):
    """An activation or gradient stopped being finite; ``path`` names the layer."""

    def __init__(self, path: str, what: str = "activation"):
        super().__init__(f"non-finite {what} at {path}")
        self.path = path


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "cnn"
    n_blocks: int = 4
    base_channels: int = 32
    conv_kernel: tuple[int, int] = (6, 2)
    pool: tuple[int, int] = (2, 1)
    dropout_rate: float = 0.5
    convlstm_hidden: int = 8
    convlstm_layers: int = 2
    freq_bins: int = 256
    n_pairs: int = 4
    in_channels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "conv_kernel", tuple(self.conv_kernel))
        object.__setattr__(self, "pool", tuple(self.pool))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_blocks < 0 or self.base_channels < 1:
            raise ValueError("n_blocks must be >= 0 and base_channels >= 1")
        if self.pool != (2, 1):
            raise ValueError("only frequency pooling by 2 is supported")
        if self.freq_bins % (2 ** self.n_blocks):
            raise ValueError(
                f"freq_bins={self.freq_bins} not divisible by 2**n_blocks={2 ** self.n_blocks}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @classmethod
    def for_group(cls, variant: str, group_size: int, freq_bins: int, **kw) -> "ModelSpec":
        """Spec for a dataset grouped ``group_size`` subcarriers per sample.

        A single subcarrier leaves nothing to pool or convolve along
        frequency, so it gets zero blocks and a frequency kernel extent of 1.
        """
        if group_size == 1:
            kw.setdefault("n_blocks", 0)
            kf, ka = kw.pop("conv_kernel", (6, 2))
            kw["conv_kernel"] = (1, ka)
        return cls(variant=variant, freq_bins=freq_bins, **kw)

    def channels(self, block: int) -> int:
        return self.base_channels * 2 ** (block - 1)

    @property
    def mid_channels(self) -> int:
        return self.channels(self.n_blocks) if self.n_blocks else self.base_channels

    def regularized(self, block: int) -> bool:
        """Dropout and batch norm follow the last two encoder blocks."""
        return block >= self.n_blocks - 1

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class ModelWeights:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights({k: v.astype(dtype) for k, v in self.params.items()},
                            {k: v.astype(dtype) for k, v in self.buffers.items()})


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Ordered parameter shapes for ``spec``; buffers are not included."""
    kf, ka = spec.conv_kernel
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, c_in, c_out, kernel=(kf, ka)):
        shapes[f"{name}.w"] = (*kernel, c_in, c_out)
        shapes[f"{name}.b"] = (c_out,)

    c = spec.in_channels
    for b in range(1, spec.n_blocks + 1):
        conv(f"enc{b}.conv1", c, spec.channels(b))
        conv(f"enc{b}.conv2", spec.channels(b), spec.channels(b))
        c = spec.channels(b)
        if spec.regularized(b):
            shapes[f"enc{b}.bn.gamma"] = (c,)
            shapes[f"enc{b}.bn.beta"] = (c,)
    cm = spec.mid_channels
    if spec.variant == "cnn":
        conv("mid.conv1", c, cm)
        conv("mid.conv2", cm, cm)
    else:
        H = spec.convlstm_hidden
        for layer in range(spec.convlstm_layers):
            conv(f"mid.lstm{layer}", (c if layer == 0 else H) + H, 4 * H, kernel=(1, ka))
        conv("mid.proj", H, cm, kernel=(1, 1))
    c = cm
    for d in range(1, spec.n_blocks + 1):
        b = spec.n_blocks + 1 - d
        conv(f"dec{d}.conv1", c + spec.channels(b), spec.channels(b))
        conv(f"dec{d}.conv2", spec.channels(b), spec.channels(b))
        c = spec.channels(max(b - 1, 1))
        conv(f"dec{d}.up", spec.channels(b), c)
    conv("out", c, 1, kernel=(1, 1))
    return shapes


def build_model(spec: ModelSpec, rng: np.random.Generator, dtype=np.float64) -> ModelWeights:
    """Fan-in scaled uniform weights, zero biases, forget-gate bias +1."""
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for key, shape in param_shapes(spec).items():
        if key.endswith(".w"):
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            params[key] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif key.endswith(".gamma"):
            params[key] = np.ones(shape, dtype=dtype)
        else:
            params[key] = np.zeros(shape, dtype=dtype)
            if key.startswith("mid.lstm"):
                H = shape[0] // 4
                params[key][H:2 * H] = 1.0
        if key.endswith(".bn.gamma"):
            stem = key[: -len(".gamma")]
            buffers[f"{stem}.mean"] = np.zeros(shape, dtype=dtype)
            buffers[f"{stem}.var"] = np.ones(shape, dtype=dtype)
    return ModelWeights(params, buffers)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Caches recorded by :func:`forward` for the backward pass."""

    spec: ModelSpec
    train: bool
    caches: dict = field(default_factory=dict)


def _finite(name: str, y: np.ndarray) -> np.ndarray:
    if not np.isfinite(y).all():
        raise NonFiniteError(name)
    return y


def forward(weights: ModelWeights, spec: ModelSpec, x: np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, Tape]:
    """Run the network on ``x`` of shape ``(B, freq_bins, n_pairs, in_channels)``.

    ``mode="train"`` uses batch statistics (and updates the running ones);
    dropout is applied only when a generator ``rng`` is supplied as well.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', not {mode!r}")
    expected = (spec.freq_bins, spec.n_pairs, spec.in_channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"input shape {x.shape} does not match (B, *{expected})")
    train = mode == "train"
    p, buf = weights.params, weights.buffers
    tape = Tape(spec, train)
    caches = tape.caches
    x = x.astype(weights.dtype, copy=False)

    def conv(name, h, relu=True):
        y, caches[name] = conv2d_forward(h, p[f"{name}.w"], p[f"{name}.b"])
        if relu:
            y, caches[f"{name}.relu"] = relu_forward(y)
        return _finite(name, y)

    h = x
    skips = []
    for b in range(1, spec.n_blocks + 1):
        h = conv(f"enc{b}.conv1", h)
        h = conv(f"enc{b}.conv2", h)
        h, caches[f"enc{b}.pool"] = maxpool_freq_forward(h)
        if spec.regularized(b):
            h, caches[f"enc{b}.dropout"] = dropout_forward(
                h, spec.dropout_rate, rng if train else None)
            h, caches[f"enc{b}.bn"] = batchnorm_forward(
                h, p[f"enc{b}.bn.gamma"], p[f"enc{b}.bn.beta"],
                buf[f"enc{b}.bn.mean"], buf[f"enc{b}.bn.var"], train)
            _finite(f"enc{b}.bn", h)
        skips.append(h)

    if spec.variant == "cnn":
        h = conv("mid.conv1", h)
        h = conv("mid.conv2", h)
    else:
        h = convlstm_intermediate(weights, spec, h, caches)

    for d in range(1, spec.n_blocks + 1):
        b = spec.n_blocks + 1 - d
        h, caches[f"dec{d}.concat"] = concat_forward(skips[b - 1], h)
        h = conv(f"dec{d}.conv1", h)
        h = conv(f"dec{d}.conv2", h)
        h, caches[f"dec{d}.up"] = conv_transpose2d_forward(h, p[f"dec{d}.up.w"], p[f"dec{d}.up.b"])
        h, caches[f"dec{d}.up.relu"] = relu_forward(h)
        _finite(f"dec{d}.up", h)
    out = conv("out", h, relu=False)
    return out, tape


def convlstm_intermediate(weights: ModelWeights, spec: ModelSpec, h: np.ndarray,
                          caches: dict | None = None) -> np.ndarray:
    """Stacked ConvLSTM over frequency bins, then a 1x1 conv back to the bottleneck width."""
    if caches is None:
        caches = {}
    p = weights.params
    if h.ndim != 4 or h.shape[-1] != p["mid.lstm0.w"].shape[2] - spec.convlstm_hidden:
        raise ValueError(f"bottleneck shape {h.shape} does not match the ConvLSTM weights")
    for layer in range(spec.convlstm_layers):
        name = f"mid.lstm{layer}"
        h, caches[name] = convlstm_forward(h, p[f"{name}.w"], p[f"{name}.b"])
        _finite(name, h)
    h, caches["mid.proj"] = conv2d_forward(h, p["mid.proj.w"], p["mid.proj.b"])
    h, caches["mid.proj.relu"] = relu_forward(h)
    return _finite("mid.proj", h)


def backward(weights: ModelWeights, tape: Tape, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dloss/dout``."""
    spec, caches = tape.spec, tape.caches
    grads: dict[str, np.ndarray] = {}

    def conv(name, dy, relu=True, need_dx=True):
        if relu:
            dy = relu_backward(dy, caches[f"{name}.relu"])
        dx, grads[f"{name}.w"], grads[f"{name}.b"] = conv2d_backward(dy, caches[name], need_dx)
        return dx

    dh = conv("out", dout, relu=False)
    dskips = [None] * spec.n_blocks
    for d in reversed(range(1, spec.n_blocks + 1)):
        b = spec.n_blocks + 1 - d
        dh = relu_backward(dh, caches[f"dec{d}.up.relu"])
        dh, grads[f"dec{d}.up.w"], grads[f"dec{d}.up.b"] = conv_transpose2d_backward(
            dh, caches[f"dec{d}.up"])
        dh = conv(f"dec{d}.conv2", dh)
        dh = conv(f"dec{d}.conv1", dh)
        dskips[b - 1], dh = concat_backward(dh, caches[f"dec{d}.concat"])

    if spec.variant == "cnn":
        dh = conv("mid.conv2", dh)
        dh = conv("mid.conv1", dh)
    else:
        dh = conv("mid.proj", dh)
        for layer in reversed(range(spec.convlstm_layers)):
            name = f"mid.lstm{layer}"
            dh, grads[f"{name}.w"], grads[f"{name}.b"] = convlstm_backward(dh, caches[name])

    for b in reversed(range(1, spec.n_blocks + 1)):
        dh = dh + dskips[b - 1]
        if spec.regularized(b):
            dh, grads[f"enc{b}.bn.gamma"], grads[f"enc{b}.bn.beta"] = batchnorm_backward(
                dh, caches[f"enc{b}.bn"])
            dh = dropout_backward(dh, caches[f"enc{b}.dropout"])
        dh = maxpool_freq_backward(dh, caches[f"enc{b}.pool"])
        dh = conv(f"enc{b}.conv2", dh)
        dh = conv(f"enc{b}.conv1", dh, need_dx=b > 1)

    for key, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(key, "gradient")
    return {k: grads[k] for k in weights.params}


def loss(pred: np.ndarray, label: np.ndarray, mask: np.ndarray) -> float:
    """Masked mean squared error."""
    return masked_mse(pred, label, mask)[0]


def value_and_grad(weights: ModelWeights, spec: ModelSpec, x, label, mask,
                   rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Train-mode loss on one batch together with its parameter gradients."""
    pred, tape = forward(weights, spec, x, "train", rng)
    value, dpred = masked_mse(pred, label.astype(pred.dtype, copy=False), mask)
    return value, backward(weights, tape, dpred)


def predict(weights: ModelWeights, spec: ModelSpec, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outs = [forward(weights, spec, x[i:i + batch_size], "infer")[0]
            for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.empty((0, spec.freq_bins, spec.n_pairs, 1))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, weights: ModelWeights, spec: ModelSpec, extra: dict | None = None) -> None:
    tensors = {f"param/{k}": v for k, v in weights.params.items()}
    tensors.update({f"buffer/{k}": v for k, v in weights.buffers.items()})
    manifest = {"kind": "checkpoint", "spec": spec.to_json(), "extra": extra or {}}
    container.write(path, CHECKPOINT_MAGIC, manifest, tensors)


def load_checkpoint(path) -> tuple[ModelWeights, ModelSpec, dict]:
    manifest, tensors = container.read(path, CHECKPOINT_MAGIC)
    try:
        spec = ModelSpec.from_json(manifest["spec"])
    except (KeyError, TypeError, ValueError) as exc:
        raise container.ContainerError(f"checkpoint has no usable spec: {exc}") from None
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    buffers = {k[7:]: v for k, v in tensors.items() if k.startswith("buffer/")}
    if set(params) != set(param_shapes(spec)):
        raise container.ContainerError("checkpoint parameters do not match its spec")
    return ModelWeights(params, buffers), spec, manifest.get("extra", {})


def spec_digest(spec: ModelSpec) -> str:
    return json.dumps(spec.to_json(), sort_keys=True)
