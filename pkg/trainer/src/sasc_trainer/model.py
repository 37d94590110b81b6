"""Residual convolutional denoiser and its export to the SASCPRN1 weight file.

The torch convolution computes cross-correlation while the restoration
package applies true convolution with the kernel center at k // 2. For odd
kernels those agree exactly after flipping the taps along both spatial axes,
which is what the exporter does. Only odd kernel sizes are accepted so the
conversion is always exact.
"""

from __future__ import annotations

import os
import struct

import numpy as np
import torch
from torch import nn

from .spec import TrainSpec

WEIGHTS_MAGIC = b"SASCPRN1"

_ACT_LINEAR = 0
_ACT_RECTIFIER = 1


class PriorNet(nn.Module):
    """Plain conv trunk with rectifiers and an optional input-to-output skip."""

    def __init__(self, hidden_layers: int, channels: int, kernel_size: int,
                 residual: bool):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        self.residual = bool(residual)
        convs = []
        in_ch = 1
        for _ in range(hidden_layers):
            convs.append(nn.Conv2d(in_ch, channels, kernel_size,
                                   padding=kernel_size // 2,
                                   padding_mode="circular"))
            in_ch = channels
        convs.append(nn.Conv2d(in_ch, 1, kernel_size,
                               padding=kernel_size // 2,
                               padding_mode="circular"))
        self.convs = nn.ModuleList(convs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = x
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            out = conv(out)
            if i != last:
                out = torch.clamp_min(out, 0.0)
        if self.residual:
            out = out + x
        return out


def build_model(spec: TrainSpec) -> PriorNet:
    spec.validate()
    return PriorNet(spec.hidden_layers, spec.channels, spec.kernel_size,
                    spec.residual)


def _layer_blob(weight: np.ndarray, bias: np.ndarray, act: int) -> bytes:
    out_ch, in_ch, kh, kw = weight.shape
    # Both spatial axes flipped: correlation weights become convolution taps.
    taps = np.flip(weight, axis=(2, 3))
    parts = [struct.pack("<IIII", out_ch, in_ch, kh, kw),
             struct.pack("<B", act),
             np.ascontiguousarray(taps).astype("<f4").tobytes(),
             bias.astype("<f4").tobytes()]
    return b"".join(parts)


def weights_to_bytes(model: PriorNet) -> bytes:
    """Serialize the model to the weight format the restoration package loads."""
    layers = []
    for conv in model.convs:
        weight = conv.weight.detach().cpu().numpy()
        bias = conv.bias.detach().cpu().numpy()
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise ValueError("model weights contain non-finite values")
        layers.append((weight, bias))
    if layers[0][0].shape[1] != 1 or layers[-1][0].shape[0] != 1:
        raise ValueError("network must map one channel in to one channel out")
    for prev, nxt in zip(layers, layers[1:]):
        if nxt[0].shape[1] != prev[0].shape[0]:
            raise ValueError(
                f"layer chain broken: {prev[0].shape[0]} outputs feed "
                f"{nxt[0].shape[1]} inputs"
            )
    parts = [WEIGHTS_MAGIC,
             struct.pack("<B", 1 if model.residual else 0),
             struct.pack("<I", len(layers))]
    last = len(layers) - 1
    for i, (weight, bias) in enumerate(layers):
        act = _ACT_LINEAR if i == last else _ACT_RECTIFIER
        parts.append(_layer_blob(weight, bias, act))
    return b"".join(parts)


def export_weights(model: PriorNet, path: str) -> None:
    """Write the weight file atomically (no partial file on failure)."""
    blob = weights_to_bytes(model)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def parameter_counts(model: PriorNet) -> tuple[int, int]:
    """(tap count, bias count) over all layers."""
    taps = sum(conv.weight.numel() for conv in model.convs)
    biases = sum(conv.bias.numel() for conv in model.convs)
    return taps, biases
