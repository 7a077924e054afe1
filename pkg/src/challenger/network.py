"""Feed-forward classifier with exact reverse-mode gradients and Adam.

Activations are laid out as ``(batch, features)`` for dense layers and
``(batch, channels, height, width)`` for convolution and pooling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, as_tensor, make_rng


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2D:
    """Valid-padding, stride-1 convolution."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2x2:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Union[Dense, Conv2D, ReLU, MaxPool2x2, Flatten]


class NetworkError(ValueError):
    """Raised for invalid architectures or mismatched traces."""


def layer_output_shape(spec: LayerSpec, shape: tuple) -> tuple:
    """Per-sample output shape of ``spec`` given per-sample input ``shape``."""
    if isinstance(spec, Dense):
        if shape != (spec.in_features,):
            raise NetworkError(f"{spec} expects input ({spec.in_features},), got {shape}")
        return (spec.out_features,)
    if isinstance(spec, Conv2D):
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise NetworkError(f"{spec} expects ({spec.in_channels}, H, W) input, got {shape}")
        h, w = shape[1] - spec.kernel_h + 1, shape[2] - spec.kernel_w + 1
        if h < 1 or w < 1:
            raise NetworkError(f"{spec} kernel larger than input {shape}")
        return (spec.out_channels, h, w)
    if isinstance(spec, MaxPool2x2):
        if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
            raise NetworkError(f"MaxPool2x2 needs (C, H>=2, W>=2) input, got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    if isinstance(spec, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(spec, ReLU):
        return shape
    raise NetworkError(f"unknown layer {spec!r}")


@dataclass
class Network:
    layers: tuple
    input_shape: tuple
    params: list  # per layer: {"W": ..., "b": ...} or None

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_features

    def copy(self) -> "Network":
        params = [None if p is None else {k: v.copy() for k, v in p.items()} for p in self.params]
        return Network(self.layers, self.input_shape, params)

    def parameter_count(self) -> int:
        return sum(v.size for p in self.params if p is not None for v in p.values())


def validate_layers(layers, input_shape) -> list:
    """Check shape compatibility; return the per-sample shape entering each layer."""
    if not layers:
        raise NetworkError("network needs at least one layer")
    if not isinstance(layers[-1], Dense):
        raise NetworkError("final layer must be Dense producing the class logits")
    shapes = [tuple(input_shape)]
    for i, spec in enumerate(layers):
        try:
            shapes.append(layer_output_shape(spec, shapes[-1]))
        except NetworkError as exc:
            prev = layers[i - 1] if i else "input"
            raise NetworkError(f"incompatible layers {prev} -> {spec}: {exc}") from None
    return shapes


def build_network(layers, seed: int, input_shape: Optional[tuple] = None) -> Network:
    """He-initialised network (weights ~ N(0, 2/fan_in), zero biases)."""
    layers = tuple(layers)
    if input_shape is None:
        if not layers or not isinstance(layers[0], Dense):
            raise NetworkError("input_shape is required unless the first layer is Dense")
        input_shape = (layers[0].in_features,)
    input_shape = tuple(int(d) for d in input_shape)
    validate_layers(layers, input_shape)
    rng = make_rng(seed)
    params = []
    for spec in layers:
        if isinstance(spec, Dense):
            w = rng.standard_normal((spec.in_features, spec.out_features))
            params.append({"W": w * np.sqrt(2.0 / spec.in_features), "b": np.zeros(spec.out_features)})
        elif isinstance(spec, Conv2D):
            fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
            w = rng.standard_normal((spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w))
            params.append({"W": w * np.sqrt(2.0 / fan_in), "b": np.zeros(spec.out_channels)})
        else:
            params.append(None)
    return Network(layers, input_shape, params)


# -- layer primitives ---------------------------------------------------------

def conv2d(x, w, b=None):
    kh, kw = w.shape[2:]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (B, C, Ho, Wo, kh, kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_input_grad(dout, w):
    """Gradient of a valid convolution w.r.t. its input (full correlation with flipped kernels)."""
    kh, kw = w.shape[2:]
    padded = np.pad(dout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # (B, O, H, W, kh, kw)
    flipped = w[:, :, ::-1, ::-1]
    dx = np.tensordot(win, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dx)


def conv2d_weight_grad(x, dout, kh, kw):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))


def _pool_blocks(x):
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x[:, :, : 2 * h2, : 2 * w2].reshape(b, c, h2, 2, w2, 2)
    return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)


def maxpool_forward(x):
    return _pool_blocks(x).max(axis=-1)


def maxpool_route(x, upstream):
    """Send each pooled value back to its window's argmax (first max on ties)."""
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    winner = _pool_blocks(x).argmax(axis=-1)
    routed = np.zeros((b, c, h2, w2, 4))
    np.put_along_axis(routed, winner[..., None], upstream[..., None], axis=-1)
    routed = routed.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)
    out = np.zeros_like(x)
    out[:, :, : 2 * h2, : 2 * w2] = routed
    return out


# -- forward / backward -------------------------------------------------------

@dataclass
class ForwardTrace:
    """Input and output activation of every layer for one batch."""

    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1]

    def __len__(self):
        return len(self.inputs)


def _check_input(net: Network, x) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[1:] != net.input_shape:
        raise DimensionError(f"input batch shape {x.shape} does not match network input {net.input_shape}")
    return x


def _layer_forward(spec, p, a):
    if isinstance(spec, Dense):
        return a @ p["W"] + p["b"]
    if isinstance(spec, Conv2D):
        return conv2d(a, p["W"], p["b"])
    if isinstance(spec, ReLU):
        return np.maximum(a, 0.0)
    if isinstance(spec, MaxPool2x2):
        return maxpool_forward(a)
    return a.reshape(a.shape[0], -1)


def forward_traced(net: Network, x) -> tuple:
    a = _check_input(net, x)
    trace = ForwardTrace()
    for spec, p in zip(net.layers, net.params):
        trace.inputs.append(a)
        a = _layer_forward(spec, p, a)
        trace.outputs.append(a)
    return a, trace


def forward(net: Network, x) -> np.ndarray:
    return forward_traced(net, x)[0]


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def check_labels(labels, n_classes, n_samples=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or (n_samples is not None and labels.size != n_samples):
        raise DimensionError(f"expected {n_samples} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label index outside [0, {n_classes})")
    return labels


def cross_entropy(logits, labels) -> float:
    """Mean softmax cross-entropy."""
    labels = check_labels(labels, logits.shape[1], logits.shape[0])
    return float(-log_softmax(logits)[np.arange(labels.size), labels].mean())


def backward(net: Network, trace: ForwardTrace, labels) -> tuple:
    """Gradients of mean cross-entropy w.r.t. parameters and the network input."""
    if len(trace) != len(net.layers):
        raise NetworkError("trace does not belong to this network")
    logits = trace.logits
    labels = check_labels(labels, net.class_count, logits.shape[0])
    g = softmax(logits)
    g[np.arange(labels.size), labels] -= 1.0
    g /= labels.size
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        spec, p, a = net.layers[i], net.params[i], trace.inputs[i]
        if isinstance(spec, Dense):
            grads[i] = {"W": a.T @ g, "b": g.sum(axis=0)}
            g = g @ p["W"].T
        elif isinstance(spec, Conv2D):
            grads[i] = {"W": conv2d_weight_grad(a, g, spec.kernel_h, spec.kernel_w), "b": g.sum(axis=(0, 2, 3))}
            g = conv2d_input_grad(g, p["W"])
        elif isinstance(spec, ReLU):
            g = g * (a > 0)
        elif isinstance(spec, MaxPool2x2):
            g = maxpool_route(a, g)
        else:
            g = g.reshape(a.shape)
    return grads, g


def loss_and_input_grad(net: Network, x, labels) -> tuple:
    logits, trace = forward_traced(net, x)
    _, dx = backward(net, trace, labels)
    return cross_entropy(logits, labels), dx


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_network(cls, net: Network, lr: float = 1e-3) -> "AdamState":
        zeros = [None if p is None else {k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
        return cls(m=zeros, v=[None if z is None else {k: a.copy() for k, a in z.items()} for z in zeros], lr=lr)


def adam_step(net: Network, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``net`` and ``state``."""
    if len(grads) != len(net.params):
        raise DimensionError("gradient list does not match network layers")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        if p is None:
            continue
        for key in p:
            if g[key].shape != p[key].shape:
                raise DimensionError(f"gradient shape {g[key].shape} != parameter shape {p[key].shape}")
            m[key] = state.beta1 * m[key] + (1.0 - state.beta1) * g[key]
            v[key] = state.beta2 * v[key] + (1.0 - state.beta2) * g[key] ** 2
            p[key] -= state.lr * (m[key] / c1) / (np.sqrt(v[key] / c2) + state.eps)


# -- checkpoints --------------------------------------------------------------
#
# Layout (all integers little-endian):
#   b"CHLG" | u16 version | u16 layer count | u8 input ndim | u32 per input dim
#   per layer: u8 tag, then u32 fields (Dense: in, out; Conv2D: in_ch, out_ch, kh, kw)
#   payload: for each parameterized layer in order, W then b as float64 row-major

MAGIC = b"CHLG"
FORMAT_VERSION = 1
_TAGS = {Dense: 1, Conv2D: 2, ReLU: 3, MaxPool2x2: 4, Flatten: 5}
_FIELDS = {Dense: 2, Conv2D: 4, ReLU: 0, MaxPool2x2: 0, Flatten: 0}


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def save_checkpoint(net: Network) -> bytes:
    out = [MAGIC, struct.pack("<HHB", FORMAT_VERSION, len(net.layers), len(net.input_shape))]
    out.append(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    for spec in net.layers:
        values = [getattr(spec, f) for f in spec.__dataclass_fields__]
        out.append(struct.pack(f"<B{len(values)}I", _TAGS[type(spec)], *values))
    for p in net.params:
        if p is not None:
            out.append(p["W"].astype("<f8").tobytes())
            out.append(p["b"].astype("<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(data: bytes) -> Network:
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise BadMagicError("not a checkpoint: bad magic bytes")
    version, n_layers, ndim = r.unpack("<HHB")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    input_shape = r.unpack(f"<{ndim}I")
    by_tag = {t: cls for cls, t in _TAGS.items()}
    layers = []
    for _ in range(n_layers):
        (tag,) = r.unpack("<B")
        if tag not in by_tag:
            raise CheckpointError(f"unknown layer tag {tag}")
        cls = by_tag[tag]
        layers.append(cls(*r.unpack(f"<{_FIELDS[cls]}I")))
    validate_layers(layers, input_shape)
    params = []
    for spec in layers:
        if isinstance(spec, Dense):
            shape = (spec.in_features, spec.out_features)
        elif isinstance(spec, Conv2D):
            shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        else:
            params.append(None)
            continue
        w = np.frombuffer(r.take(8 * int(np.prod(shape))), dtype="<f8").astype(np.float64).reshape(shape)
        b = np.frombuffer(r.take(8 * shape[-1 if isinstance(spec, Dense) else 0]), dtype="<f8").astype(np.float64)
        params.append({"W": w, "b": b})
    if r.pos != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.pos} trailing bytes after payload")
    return Network(tuple(layers), tuple(input_shape), params)
