"""Training data: image files, patch sampling, and on-the-fly degradation.

The two image formats here (binary PGM and the "SASCF32" raw float format)
are the interchange formats of the restoration toolchain. The trainer ships
its own readers so it stays a standalone package; the byte layouts are part
of the documented interface and must not drift.
"""

from __future__ import annotations

import math
import os
import struct

import numpy as np
import torch
import torch.nn.functional as F

from .spec import TrainSpec

FLOAT_MAGIC = b"SASCF32\n"

_EXTENSIONS = (".pgm", ".f32")


def read_float_image(path: str) -> np.ndarray:
    """Read the raw float32 format: magic, u32 height, u32 width, row-major data."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(FLOAT_MAGIC)] != FLOAT_MAGIC:
        raise ValueError(f"{path}: bad magic for float image file")
    header_end = len(FLOAT_MAGIC) + 8
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated float image header")
    h, w = struct.unpack("<II", raw[len(FLOAT_MAGIC) : header_end])
    if h < 1 or w < 1:
        raise ValueError(f"{path}: bad dimensions {h}x{w}")
    body = raw[header_end:]
    if len(body) < h * w * 4:
        raise ValueError(f"{path}: truncated float image payload")
    data = np.frombuffer(body, dtype="<f4", count=h * w).reshape(h, w)
    return data.astype(np.float64)


def write_float_image(path: str, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(FLOAT_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(img.astype("<f4").tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read an 8-bit binary PGM (P5, maxval 255) into a float image on [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens: list[bytes] = []
    i = 0
    n = len(raw)
    # Header: four whitespace-separated tokens, '#' comments run to end of line.
    while i < n and len(tokens) < 4:
        ch = raw[i : i + 1]
        if ch in b" \t\r\n":
            i += 1
            continue
        if ch == b"#":
            while i < n and raw[i : i + 1] not in b"\r\n":
                i += 1
            continue
        start = i
        while i < n and raw[i : i + 1] not in b" \t\r\n":
            i += 1
        tokens.append(raw[start:i])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    if h < 1 or w < 1:
        raise ValueError(f"{path}: bad PGM dimensions {w}x{h}")
    body = raw[i + 1 : i + 1 + h * w]
    if len(body) < h * w:
        raise ValueError(f"{path}: truncated PGM pixel data")
    data = np.frombuffer(body, dtype=np.uint8, count=h * w).reshape(h, w)
    return data.astype(np.float64) / 255.0


def load_image(path: str) -> np.ndarray:
    lower = path.lower()
    if lower.endswith(".pgm"):
        return read_pgm(path)
    if lower.endswith(".f32"):
        return read_float_image(path)
    raise ValueError(f"{path}: unsupported image extension (use .pgm or .f32)")


def list_images(directory: str) -> list[str]:
    """All .pgm/.f32 files directly inside ``directory``, sorted by name."""
    if not os.path.isdir(directory):
        raise ValueError(f"{directory}: not a directory")
    names = sorted(
        name
        for name in os.listdir(directory)
        if name.lower().endswith(_EXTENSIONS)
        and os.path.isfile(os.path.join(directory, name))
    )
    if not names:
        raise ValueError(f"{directory}: no .pgm or .f32 images found")
    return [os.path.join(directory, name) for name in names]


def sample_patches(
    images: list[np.ndarray], patch: int, per_image: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``per_image`` random patch x patch crops from each image.

    Anchors are uniform over positions where the crop fits entirely inside
    the image, so no wrapping is involved. Returns (N, patch, patch) float32.
    """
    if not images:
        raise ValueError("no training images supplied")
    if patch < 1:
        raise ValueError("patch size must be positive")
    out = np.empty((len(images) * per_image, patch, patch), dtype=np.float32)
    k = 0
    for img in images:
        h, w = img.shape
        if h < patch or w < patch:
            raise ValueError(
                f"image {h}x{w} smaller than the {patch}x{patch} training patch"
            )
        rows = rng.integers(0, h - patch + 1, size=per_image)
        cols = rng.integers(0, w - patch + 1, size=per_image)
        for r, c in zip(rows, cols):
            out[k] = img[r : r + patch, c : c + patch]
            k += 1
    return out


def _gaussian_kernel(sigma: float) -> torch.Tensor:
    radius = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k2 = np.outer(g, g)
    k2 /= k2.sum()
    return torch.from_numpy(k2.astype(np.float32)).reshape(1, 1, *k2.shape)


def _circular_conv(batch: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    r = kernel.shape[-1] // 2
    padded = F.pad(batch, (r, r, r, r), mode="circular")
    return F.conv2d(padded, kernel)


def degrade_batch(
    clean: torch.Tensor, spec: TrainSpec, gen: torch.Generator
) -> torch.Tensor:
    """Produce network inputs from clean patches per the spec's degradation.

    noise: additive white Gaussian noise at spec.sigma (0-255 scale).
    blur:  circular Gaussian blur, then the same noise.
    sr:    bicubic downscale by spec.scale and bicubic upscale back, then
           noise; the network sees interpolation blur at the target size.
    identity: the clean patches themselves (useful for smoke tests).
    """
    if clean.ndim != 4 or clean.shape[1] != 1:
        raise ValueError(f"expected (B, 1, H, W) batch, got {tuple(clean.shape)}")
    x = clean
    if spec.degradation == "blur":
        x = _circular_conv(x, _gaussian_kernel(spec.blur_sigma))
    elif spec.degradation == "sr":
        h, w = x.shape[-2:]
        if h % spec.scale or w % spec.scale:
            raise ValueError(
                f"patch {h}x{w} not divisible by scale {spec.scale}"
            )
        small = F.interpolate(
            x, scale_factor=1.0 / spec.scale, mode="bicubic",
            align_corners=False, antialias=True,
        )
        x = F.interpolate(
            small, size=(h, w), mode="bicubic", align_corners=False,
        )
    if spec.degradation != "identity" and spec.sigma > 0.0:
        noise = torch.randn(x.shape, generator=gen, dtype=x.dtype)
        x = x + spec.sigma01 * noise
    return x
