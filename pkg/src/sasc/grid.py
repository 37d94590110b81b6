"""Image raster basics: patches, quality metrics, and the two on-disk image formats.

Images are plain 2-D float64 numpy arrays in row-major order, nominally on the
[0, 1] intensity scale.  All patch addressing is periodic (circular), so any
anchor inside the image is legal and patches wrap around the borders.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

# Returned by psnr() when the two images are identical (MSE == 0).
PSNR_CAP_DB = 99.0

FLOAT_MAGIC = b"SASCF32\n"

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def as_grid(data) -> np.ndarray:
    """Validate an image: 2-D, at least 1x1, all values finite.

    Returns a float64 array (a copy only when conversion is needed).
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


@dataclass(frozen=True)
class Patch:
    """A square block of pixel values tied to its anchor (top-left) position."""

    side: int
    anchor: tuple[int, int]
    values: np.ndarray


def _wrapped_indices(anchor: tuple[int, int], side: int, shape: tuple[int, int]):
    rows = (anchor[0] + np.arange(side)) % shape[0]
    cols = (anchor[1] + np.arange(side)) % shape[1]
    return rows, cols


def extract_patch(img: np.ndarray, anchor: tuple[int, int], side: int) -> Patch:
    """Extract the side x side patch anchored at ``anchor``, wrapping at borders."""
    img = as_grid(img)
    h, w = img.shape
    if side < 1:
        raise ValueError(f"patch side must be >= 1, got {side}")
    if side > min(h, w):
        raise ValueError(f"patch side {side} exceeds min image dimension {min(h, w)}")
    r, c = int(anchor[0]), int(anchor[1])
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"anchor {anchor} outside image {img.shape}")
    rows, cols = _wrapped_indices((r, c), side, img.shape)
    return Patch(side=side, anchor=(r, c), values=img[np.ix_(rows, cols)])


def aggregate_patches(
    patches: Iterable[tuple[Patch, float]], out_shape: tuple[int, int]
) -> np.ndarray:
    """Weighted per-pixel average of overlapping patches on a fresh canvas.

    Every pixel of the output must be covered by at least one patch with a
    positive total weight; otherwise the average is undefined and an error is
    raised.  Accumulation runs in the order patches are supplied, so the
    result is reproducible for a fixed input sequence.
    """
    h, w = int(out_shape[0]), int(out_shape[1])
    if h < 1 or w < 1:
        raise ValueError(f"output shape must be positive, got {out_shape}")
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for patch, weight in patches:
        weight = float(weight)
        if weight < 0:
            raise ValueError("patch weights must be nonnegative")
        if patch.values.shape != (patch.side, patch.side):
            raise ValueError("patch values do not match declared side")
        rows, cols = _wrapped_indices(patch.anchor, patch.side, (h, w))
        grid = np.ix_(rows, cols)
        num[grid] += weight * patch.values
        den[grid] += weight
    if np.any(den == 0):
        n_bad = int(np.count_nonzero(den == 0))
        raise ValueError(f"{n_bad} pixel(s) not covered by any positive-weight patch")
    return num / den


# ---------------------------------------------------------------------------
# quality metrics


def _check_pair(ref: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = as_grid(ref)
    test = as_grid(test)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB (returned for MSE = 0)."""
    ref, test = _check_pair(ref, test)
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


def _gaussian_window_1d(side: int, sigma: float) -> np.ndarray:
    half = (side - 1) / 2.0
    x = np.arange(side) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_separable(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # Periodic separable filtering; kernel center at len//2.
    side = win.size
    c = side // 2
    out = np.zeros_like(img)
    for i in range(side):
        out += win[i] * np.roll(img, i - c, axis=0)
    out2 = np.zeros_like(img)
    for j in range(side):
        out2 += win[j] * np.roll(out, j - c, axis=1)
    return out2


def ssim(ref: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity with the standard 11x11 Gaussian window.

    Window sigma 1.5, stability constants K1 = 0.01 and K2 = 0.03.  Local
    statistics use periodic filtering, and the score is the plain mean of the
    local similarity map.
    """
    ref, test = _check_pair(ref, test)
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    if min(ref.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} analysis window"
        )
    win = _gaussian_window_1d(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    mu1 = _filter_separable(ref, win)
    mu2 = _filter_separable(test, win)
    s11 = _filter_separable(ref * ref, win) - mu1 * mu1
    s22 = _filter_separable(test * test, win) - mu2 * mu2
    s12 = _filter_separable(ref * test, win) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# on-disk formats


def write_pgm(path: str, img: np.ndarray) -> None:
    """Write an 8-bit binary PGM (maxval 255); intensities clipped from [0, 1]."""
    img = as_grid(img)
    h, w = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(raw: bytes) -> Iterable[tuple[bytes, int]]:
    # Header tokens separated by whitespace; '#' starts a comment to EOL.
    i = 0
    n = len(raw)
    while i < n:
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
        yield raw[start:i], i
        # caller stops once it has enough tokens


def read_pgm(path: str) -> np.ndarray:
    """Read an 8-bit binary PGM into a float image on [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    end = 0
    for tok, pos in _pgm_tokens(raw):
        tokens.append(tok)
        end = pos
        if len(tokens) == 4:
            break
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
    body = raw[end + 1 : end + 1 + h * w]
    if len(body) < h * w:
        raise ValueError(f"{path}: truncated PGM pixel data")
    data = np.frombuffer(body, dtype=np.uint8, count=h * w).reshape(h, w)
    return data.astype(np.float64) / 255.0


def write_float_image(path: str, img: np.ndarray) -> None:
    """Write the raw float32 image format (magic, height, width, row-major data)."""
    img = as_grid(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(FLOAT_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(img.astype("<f4").tobytes())


def read_float_image(path: str) -> np.ndarray:
    """Read the raw float32 image format back into a float64 array."""
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
    expect = h * w * 4
    body = raw[header_end:]
    if len(body) < expect:
        raise ValueError(f"{path}: truncated float image payload")
    data = np.frombuffer(body, dtype="<f4", count=h * w).reshape(h, w)
    return data.astype(np.float64)


def load_image(path: str) -> np.ndarray:
    """Load a .pgm or .f32 image by file extension."""
    lower = path.lower()
    if lower.endswith(".pgm"):
        return read_pgm(path)
    if lower.endswith(".f32"):
        return read_float_image(path)
    raise ValueError(f"{path}: unsupported image extension (use .pgm or .f32)")


def save_image(path: str, img: np.ndarray) -> None:
    """Save to .pgm (8-bit) or .f32 (lossless float32) by file extension."""
    lower = path.lower()
    if lower.endswith(".pgm"):
        write_pgm(path, img)
    elif lower.endswith(".f32"):
        write_float_image(path, img)
    else:
        raise ValueError(f"{path}: unsupported image extension (use .pgm or .f32)")
