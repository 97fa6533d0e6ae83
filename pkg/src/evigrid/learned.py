"""Learned inverse sensor model: fixed-topology conv net inference.

The network maps a binary polar detection image to per-cell class
probabilities; the softmax output is used directly as evidential masses
(free, occupied, unknown), without tempering.  Inference is a pure
function of the image alone, never of the sensor pose, which is what
makes the learned model independent of the radar mounting.

Weights travel in the ENET container (little-endian):

    magic    4 bytes "ENET"
    version  u32     1
    n_layers u32
    per layer:
        kind  u8   (see LAYER_KINDS)
        c_in  u32
        c_out u32
        kernel f32[c_out * c_in * k * k]   -- conv layers only
        bias   f32[c_out]                  -- conv layers only

Supported layers: 3x3 conv (zero-padded, stride 1), 1x1 conv, 2x max
pooling, 2x nearest-neighbor upsampling, ReLU, and a terminal 3-channel
softmax.  Pooling/upsampling/activation layers carry no parameters and
must declare c_in == c_out.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EnetLayerKindError,
    EnetMagicError,
    EnetSizeError,
    EnetTopologyError,
)
from .grids import PolarGrid, PolarGridSpec
from .labels import LabelImage

_MAGIC = b"ENET"
_VERSION = 1

CONV3 = 0
CONV1 = 1
DOWN2 = 2
UP2 = 3
RELU = 4
SOFTMAX3 = 5

LAYER_KINDS = {
    CONV3: "conv3x3",
    CONV1: "conv1x1",
    DOWN2: "downsample2x",
    UP2: "upsample2x",
    RELU: "relu",
    SOFTMAX3: "softmax3",
}
_KERNEL_SIZE = {CONV3: 3, CONV1: 1}


@dataclass(frozen=True)
class Layer:
    kind: int
    c_in: int
    c_out: int
    kernel: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))


@dataclass(frozen=True)
class NetWeights:
    layers: tuple[Layer, ...]

    @property
    def downsample_count(self) -> int:
        return sum(1 for l in self.layers if l.kind == DOWN2)


def validate_topology(layers) -> NetWeights:
    """Check the layer chain and return the validated net.

    Raises :class:`EnetTopologyError` on broken channel chains, shapes
    that do not match the declared layer, a non-softmax3 terminal layer,
    or a net that does not return to the input resolution.
    """
    layers = tuple(layers)
    if not layers:
        raise EnetTopologyError("net has no layers")
    channels = 1
    scale = 1
    for i, layer in enumerate(layers):
        if layer.kind not in LAYER_KINDS:
            raise EnetLayerKindError(f"layer {i}: unsupported kind {layer.kind}")
        if layer.c_in != channels:
            raise EnetTopologyError(
                f"layer {i}: expects {layer.c_in} channels, got {channels}"
            )
        if layer.kind in _KERNEL_SIZE:
            k = _KERNEL_SIZE[layer.kind]
            expect = (layer.c_out, layer.c_in, k, k)
            if layer.kernel.shape != expect:
                raise EnetTopologyError(f"layer {i}: kernel shape {layer.kernel.shape}")
            if layer.bias.shape != (layer.c_out,):
                raise EnetTopologyError(f"layer {i}: bias shape {layer.bias.shape}")
        else:
            if layer.c_out != layer.c_in:
                raise EnetTopologyError(f"layer {i}: parameterless layers keep channels")
            if layer.kernel.size or layer.bias.size:
                raise EnetTopologyError(f"layer {i}: unexpected parameters")
        if layer.kind == DOWN2:
            scale *= 2
        elif layer.kind == UP2:
            scale = max(scale // 2, 0)
        channels = layer.c_out
    last = layers[-1]
    if last.kind != SOFTMAX3 or channels != 3:
        raise EnetTopologyError("net must end in a 3-channel softmax")
    if scale != 1:
        raise EnetTopologyError("net must return to the input resolution")
    return NetWeights(layers)


def save_weights(path, net: NetWeights) -> None:
    parts = [struct.pack("<4sII", _MAGIC, _VERSION, len(net.layers))]
    for layer in net.layers:
        parts.append(struct.pack("<BII", layer.kind, layer.c_in, layer.c_out))
        parts.append(layer.kernel.astype("<f4").tobytes())
        parts.append(layer.bias.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> NetWeights:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise EnetSizeError("size mismatch: truncated header")
    magic, version, n_layers = struct.unpack_from("<4sII", raw)
    if magic != _MAGIC:
        raise EnetMagicError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise EnetSizeError(f"unsupported version {version}")
    offset = 12
    layers = []
    for i in range(n_layers):
        if offset + 9 > len(raw):
            raise EnetSizeError(f"size mismatch: truncated at layer {i}")
        kind, c_in, c_out = struct.unpack_from("<BII", raw, offset)
        offset += 9
        if kind not in LAYER_KINDS:
            raise EnetLayerKindError(f"layer {i}: unsupported kind {kind}")
        if kind in _KERNEL_SIZE:
            k = _KERNEL_SIZE[kind]
            n_kernel, n_bias = c_out * c_in * k * k, c_out
            end = offset + 4 * (n_kernel + n_bias)
            if end > len(raw):
                raise EnetSizeError(f"size mismatch: truncated at layer {i}")
            kernel = np.frombuffer(raw, "<f4", n_kernel, offset).reshape(
                c_out, c_in, k, k
            )
            bias = np.frombuffer(raw, "<f4", n_bias, offset + 4 * n_kernel)
            offset = end
            layers.append(Layer(kind, c_in, c_out, kernel.copy(), bias.copy()))
        else:
            layers.append(Layer(kind, c_in, c_out))
    if offset != len(raw):
        raise EnetSizeError(f"size mismatch: {len(raw) - offset} trailing bytes")
    return validate_topology(layers)


def _conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return np.einsum("chw,oc->ohw", x, kernel[:, :, 0, 0]) + bias[:, None, None]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.einsum("chwkl,ockl->ohw", win, kernel) + bias[:, None, None]


def forward(image: np.ndarray, net: NetWeights) -> np.ndarray:
    """Run the net on an (A, R) image; returns (A, R, 3) probabilities."""
    x = np.asarray(image, dtype=np.float32)[None]
    for layer in net.layers:
        if layer.kind in _KERNEL_SIZE:
            x = _conv(x, layer.kernel, layer.bias, _KERNEL_SIZE[layer.kind])
        elif layer.kind == DOWN2:
            c, h, w = x.shape
            if h % 2 or w % 2:
                raise ValueError(
                    f"image dimensions {h}x{w} not divisible for downsampling"
                )
            x = x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))
        elif layer.kind == UP2:
            x = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
        elif layer.kind == RELU:
            x = np.maximum(x, 0.0)
        else:  # SOFTMAX3
            x = x - x.max(axis=0, keepdims=True)
            e = np.exp(x)
            x = e / e.sum(axis=0, keepdims=True)
    return np.moveaxis(x, 0, -1).astype(np.float64)


def infer(image: np.ndarray, net: NetWeights, spec: PolarGridSpec) -> PolarGrid:
    """Measurement grid from a binary polar image.

    The softmax probabilities become the cell masses directly:
    channel 0 free, 1 occupied, 2 unknown.  Velocity planes start
    invalid; Doppler injection fills them later.
    """
    image = np.asarray(image)
    if image.shape != (spec.a_bins, spec.r_bins):
        raise ValueError(
            f"image shape {image.shape} does not match spec "
            f"({spec.a_bins}, {spec.r_bins})"
        )
    probs = forward(image, net)
    grid = PolarGrid.vacuous(spec)
    grid.masses = probs / probs.sum(axis=-1, keepdims=True)
    return grid


def dice_loss(pred: np.ndarray, label, epsilon: float = 1.0) -> float:
    """Class-averaged soft dice loss.

    ``pred`` is (A, R, 3) probabilities, ``label`` a LabelImage or a
    class-index array.  Per class the soft intersection is
    sum(p * y) and the union sum(p) + sum(y); the loss averages
    ``1 - (2 I + eps) / (U + eps)`` over the three classes.  Zero iff
    the prediction is the one-hot encoding of the label (up to epsilon).
    """
    classes = label.classes if isinstance(label, LabelImage) else np.asarray(label)
    if pred.shape[:-1] != classes.shape or pred.shape[-1] != 3:
        raise ValueError("prediction and label shapes do not match")
    total = 0.0
    for c in range(3):
        y = (classes == c).astype(np.float64)
        p = pred[..., c].astype(np.float64)
        intersection = float((p * y).sum())
        union = float(p.sum() + y.sum())
        if union + epsilon <= 0.0:
            continue  # class absent and never predicted: perfect overlap
        total += 1.0 - (2.0 * intersection + epsilon) / (union + epsilon)
    return total / 3.0
