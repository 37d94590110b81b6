"""External learned prior: a small convolutional network and its weight format.

The network is a plain stack of periodic 2-D convolution layers with optional
rectifier activations and an optional global residual skip from input to
output.  Weights travel in a compact little-endian binary format (float32
taps), so a file round-trips bit-exactly through load and save.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import ops
from .grid import as_grid

WEIGHTS_MAGIC = b"SASCPRN1"

ACT_LINEAR = "linear"
ACT_RECTIFIER = "rectifier"
_ACT_CODES = {0: ACT_LINEAR, 1: ACT_RECTIFIER}
_ACT_BYTES = {ACT_LINEAR: 0, ACT_RECTIFIER: 1}


class WeightFormatError(ValueError):
    """Base error for malformed weight data."""


class BadMagicError(WeightFormatError):
    pass


class TruncatedPayloadError(WeightFormatError):
    pass


class ChannelMismatchError(WeightFormatError):
    pass


@dataclass(frozen=True)
class ConvLayer:
    out_channels: int
    in_channels: int
    taps: np.ndarray  # (out, in, kh, kw)
    biases: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        biases = np.asarray(self.biases, dtype=np.float64)
        if self.out_channels < 1 or self.in_channels < 1:
            raise WeightFormatError("channel counts must be >= 1")
        if taps.ndim != 4 or taps.shape[:2] != (self.out_channels, self.in_channels):
            raise WeightFormatError(
                f"taps shape {taps.shape} does not match channels "
                f"({self.out_channels}, {self.in_channels})"
            )
        if taps.shape[2] < 1 or taps.shape[3] < 1:
            raise WeightFormatError("kernel dimensions must be >= 1")
        if biases.shape != (self.out_channels,):
            raise WeightFormatError(
                f"biases shape {biases.shape} does not match out channels"
            )
        if not (np.all(np.isfinite(taps)) and np.all(np.isfinite(biases))):
            raise WeightFormatError("weights contain non-finite values")
        if self.activation not in _ACT_BYTES:
            raise WeightFormatError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "biases", biases)


@dataclass(frozen=True)
class PriorNetWeights:
    layers: tuple[ConvLayer, ...]
    residual_skip: bool

    def __post_init__(self):
        if len(self.layers) < 1:
            raise WeightFormatError("network needs at least one layer")
        if self.layers[0].in_channels != 1:
            raise ChannelMismatchError(
                f"first layer must take 1 channel, takes {self.layers[0].in_channels}"
            )
        if self.layers[-1].out_channels != 1:
            raise ChannelMismatchError(
                f"last layer must emit 1 channel, emits {self.layers[-1].out_channels}"
            )
        for i in range(1, len(self.layers)):
            prev, cur = self.layers[i - 1], self.layers[i]
            if cur.in_channels != prev.out_channels:
                raise ChannelMismatchError(
                    f"layer {i} takes {cur.in_channels} channels but layer "
                    f"{i - 1} emits {prev.out_channels}"
                )

    @property
    def weight_count(self) -> int:
        return sum(layer.taps.size for layer in self.layers)

    @property
    def bias_count(self) -> int:
        return sum(layer.biases.size for layer in self.layers)

    @property
    def max_kernel(self) -> int:
        return max(max(l.taps.shape[2], l.taps.shape[3]) for l in self.layers)


def save_weights(net: PriorNetWeights) -> bytes:
    parts = [WEIGHTS_MAGIC,
             struct.pack("<B", 1 if net.residual_skip else 0),
             struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        kh, kw = layer.taps.shape[2], layer.taps.shape[3]
        parts.append(struct.pack("<IIII", layer.out_channels, layer.in_channels,
                                 kh, kw))
        parts.append(struct.pack("<B", _ACT_BYTES[layer.activation]))
        parts.append(layer.taps.astype("<f4").tobytes())
        parts.append(layer.biases.astype("<f4").tobytes())
    return b"".join(parts)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_weights(data: bytes) -> PriorNetWeights:
    """Parse weight bytes; raises distinct errors for magic/truncation/wiring."""
    cur = _Cursor(data)
    magic = cur.take(len(WEIGHTS_MAGIC))
    if magic != WEIGHTS_MAGIC:
        raise BadMagicError("bad magic for prior network weights")
    residual = struct.unpack("<B", cur.take(1))[0]
    if residual not in (0, 1):
        raise WeightFormatError(f"residual flag must be 0 or 1, got {residual}")
    (n_layers,) = struct.unpack("<I", cur.take(4))
    if n_layers < 1:
        raise WeightFormatError("layer count must be >= 1")
    layers = []
    for _ in range(n_layers):
        out_ch, in_ch, kh, kw = struct.unpack("<IIII", cur.take(16))
        if min(out_ch, in_ch, kh, kw) < 1:
            raise WeightFormatError(
                f"bad layer geometry out={out_ch} in={in_ch} k={kh}x{kw}"
            )
        act = struct.unpack("<B", cur.take(1))[0]
        if act not in _ACT_CODES:
            raise WeightFormatError(f"unknown activation code {act}")
        n_taps = out_ch * in_ch * kh * kw
        taps = np.frombuffer(cur.take(4 * n_taps), dtype="<f4", count=n_taps)
        biases = np.frombuffer(cur.take(4 * out_ch), dtype="<f4", count=out_ch)
        layers.append(ConvLayer(
            out_channels=out_ch,
            in_channels=in_ch,
            taps=taps.astype(np.float64).reshape(out_ch, in_ch, kh, kw),
            biases=biases.astype(np.float64),
            activation=_ACT_CODES[act],
        ))
    return PriorNetWeights(layers=tuple(layers), residual_skip=bool(residual))


def read_weights(path: str) -> PriorNetWeights:
    with open(path, "rb") as fh:
        return load_weights(fh.read())


def write_weights(path: str, net: PriorNetWeights) -> None:
    with open(path, "wb") as fh:
        fh.write(save_weights(net))


def _layer_forward(layer: ConvLayer, feat: np.ndarray) -> np.ndarray:
    kh, kw = layer.taps.shape[2], layer.taps.shape[3]
    ch, cw = kh // 2, kw // 2
    h, w = feat.shape[1], feat.shape[2]
    rolled = np.empty((layer.in_channels * kh * kw, h * w))
    q = 0
    for ci in range(layer.in_channels):
        for a in range(kh):
            for b in range(kw):
                rolled[q] = np.roll(feat[ci], (a - ch, b - cw), axis=(0, 1)).ravel()
                q += 1
    out = layer.taps.reshape(layer.out_channels, -1) @ rolled
    out += layer.biases[:, None]
    out = out.reshape(layer.out_channels, h, w)
    if layer.activation == ACT_RECTIFIER:
        np.maximum(out, 0.0, out=out)
    return out


def infer(net: PriorNetWeights, img: np.ndarray) -> np.ndarray:
    """Run the network on one image; adds the input back when the skip is set."""
    img = as_grid(img)
    if min(img.shape) < net.max_kernel:
        raise ValueError(
            f"image {img.shape} smaller than the largest kernel {net.max_kernel}"
        )
    feat = img[None, :, :]
    for layer in net.layers:
        feat = _layer_forward(layer, feat)
    out = feat[0]
    if net.residual_skip:
        out = out + img
    return out


def external_features(
    net: PriorNetWeights, img: np.ndarray, bank: "ops.FilterBank"
) -> tuple[np.ndarray, np.ndarray]:
    """Network estimate and its analysis features (estimate, features)."""
    estimate = infer(net, img)
    return estimate, ops.conv(bank, estimate)
