"""Linear operators on images: analysis filter banks and degradations.

Convolution here is true convolution with periodic (circular) boundary and the
kernel center at index side // 2, so conv and conv_adjoint form an exact
adjoint pair in the Euclidean inner product.  Degradation operators follow the
same convention, which keeps gradient steps and conjugate-gradient solves
consistent with each other.  Everything is direct (shift-and-add); no FFTs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .grid import as_grid

BANK_MAGIC = b"SASCFBK1"

KIND_IDENTITY = "identity"
KIND_BLUR = "blur"
KIND_GAUSS_DOWN = "gauss_down"
KIND_BICUBIC_DOWN = "bicubic_down"

_DOWN_KINDS = (KIND_GAUSS_DOWN, KIND_BICUBIC_DOWN)


def _check_kernel(kernel) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] < 1:
        raise ValueError(f"kernel must be a nonempty 2-D array, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel contains non-finite values")
    if not np.any(k):
        raise ValueError("kernel is identically zero")
    return k


@dataclass(frozen=True)
class FilterBank:
    """A stack of K square analysis filters sharing one side length.

    Odd sides give exactly centered kernels; even sides are accepted and use
    center index side // 2.
    """

    count: int
    side: int
    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if self.count < 1:
            raise ValueError(f"filter count must be >= 1, got {self.count}")
        if self.side < 1:
            raise ValueError(f"filter side must be >= 1, got {self.side}")
        if taps.shape != (self.count, self.side, self.side):
            raise ValueError(
                f"taps shape {taps.shape} does not match "
                f"(count, side, side) = ({self.count}, {self.side}, {self.side})"
            )
        if not np.all(np.isfinite(taps)):
            raise ValueError("filter taps contain non-finite values")
        object.__setattr__(self, "taps", taps)

    @property
    def center(self) -> int:
        return self.side // 2


def make_filter_bank(taps) -> FilterBank:
    """Build a FilterBank from a (K, f, f) tap array."""
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 3:
        raise ValueError(f"expected (count, side, side) taps, got shape {taps.shape}")
    return FilterBank(count=taps.shape[0], side=taps.shape[1], taps=taps)


def make_dct_bank(side: int) -> FilterBank:
    """Orthonormal 2-D DCT basis of the given side with the constant atom removed.

    Yields side**2 - 1 zero-mean, unit-norm filters; the default analysis bank.
    Basis atoms are enumerated in raster order of their (row, col) frequencies.
    """
    f = int(side)
    if f < 2:
        raise ValueError(f"DCT bank side must be >= 2, got {side}")
    base = np.zeros((f, f))
    for u in range(f):
        alpha = math.sqrt(1.0 / f) if u == 0 else math.sqrt(2.0 / f)
        base[u] = alpha * np.cos(np.pi * (2 * np.arange(f) + 1) * u / (2.0 * f))
    taps = []
    for u in range(f):
        for v in range(f):
            if u == 0 and v == 0:
                continue
            atom = np.outer(base[u], base[v])
            taps.append(atom / np.linalg.norm(atom))
    return FilterBank(count=f * f - 1, side=f, taps=np.stack(taps))


def _rolled_stack(img: np.ndarray, side: int) -> np.ndarray:
    """All periodic shifts of img used by a centered side x side convolution."""
    c = side // 2
    out = np.empty((side * side,) + img.shape)
    q = 0
    for i in range(side):
        for j in range(side):
            out[q] = np.roll(img, (i - c, j - c), axis=(0, 1))
            q += 1
    return out


def periodic_convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2-D convolution with circular wrap, kernel center at side // 2."""
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            w = kernel[i, j]
            if w != 0.0:
                out += w * np.roll(img, (i - ch, j - cw), axis=(0, 1))
    return out


def periodic_correlate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of periodic_convolve for the same kernel."""
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            w = kernel[i, j]
            if w != 0.0:
                out += w * np.roll(img, (ch - i, cw - j), axis=(0, 1))
    return out


def conv(bank: FilterBank, img: np.ndarray) -> np.ndarray:
    """Apply every bank filter to img; returns feature maps shaped (K, H, W)."""
    img = as_grid(img)
    if min(img.shape) < bank.side:
        raise ValueError(
            f"image {img.shape} smaller than filter side {bank.side}"
        )
    rolled = _rolled_stack(img, bank.side)
    flat = bank.taps.reshape(bank.count, -1)
    return np.einsum("kq,qhw->khw", flat, rolled)


def conv_adjoint(bank: FilterBank, maps: np.ndarray) -> np.ndarray:
    """Sum of per-filter correlations; exact adjoint of conv.

    The K-way sum is accumulated in fixed filter(offset) order, so results are
    bitwise reproducible.
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3 or maps.shape[0] != bank.count:
        raise ValueError(
            f"expected maps shaped ({bank.count}, H, W), got {maps.shape}"
        )
    if not np.all(np.isfinite(maps)):
        raise ValueError("feature maps contain non-finite values")
    flat = bank.taps.reshape(bank.count, -1)
    # combined[q] = sum_k taps[k, q] * maps[k]; then shift each offset back.
    combined = np.einsum("kq,khw->qhw", flat, maps)
    c = bank.side // 2
    out = np.zeros(maps.shape[1:])
    q = 0
    for i in range(bank.side):
        for j in range(bank.side):
            out += np.roll(combined[q], (c - i, c - j), axis=(0, 1))
            q += 1
    return out


# ---------------------------------------------------------------------------
# bicubic resampling (Catmull-Rom kernel, a = -0.5), periodic sampling


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    a = -0.5
    ax = np.abs(x)
    out = np.zeros_like(ax)
    m1 = ax <= 1.0
    m2 = (ax > 1.0) & (ax < 2.0)
    out[m1] = (a + 2.0) * ax[m1] ** 3 - (a + 3.0) * ax[m1] ** 2 + 1.0
    out[m2] = a * ax[m2] ** 3 - 5.0 * a * ax[m2] ** 2 + 8.0 * a * ax[m2] - 4.0 * a
    return out


def _resample_axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices (wrapped) and normalized weights for one resampled axis.

    Downscaling widens the kernel by the scale factor (anti-aliasing), the
    usual convention for high-quality resizers.
    """
    scale = n_in / n_out
    width = max(scale, 1.0)
    support = 2.0 * width
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    left = np.ceil(centers - support).astype(np.int64)
    ntaps = int(2 * support + 2)
    offsets = np.arange(ntaps)
    idx = left[:, None] + offsets[None, :]
    dist = (idx - centers[:, None]) / width
    weights = _cubic_kernel(dist) / width
    norm = weights.sum(axis=1, keepdims=True)
    weights = weights / norm
    return idx % n_in, weights


def resize_bicubic(img: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Separable bicubic resize to out_shape with periodic boundary handling."""
    img = as_grid(img)
    oh, ow = int(out_shape[0]), int(out_shape[1])
    if oh < 1 or ow < 1:
        raise ValueError(f"output shape must be positive, got {out_shape}")
    idx_r, w_r = _resample_axis_weights(img.shape[0], oh)
    tmp = np.einsum("ot,otw->ow", w_r, img[idx_r, :])
    idx_c, w_c = _resample_axis_weights(img.shape[1], ow)
    out = np.einsum("ot,hot->ho", w_c, tmp[:, idx_c])
    return out


# ---------------------------------------------------------------------------
# degradation operators


@dataclass(frozen=True)
class DegradationOp:
    """A forward observation model y = H x (noise level carried as metadata).

    kind is one of identity, blur, gauss_down, bicubic_down.  input_shape is
    the latent (restored) image shape, output_shape the observed one.
    noise_sigma is quoted on the [0, 1] intensity scale.
    """

    kind: str
    input_shape: tuple[int, int]
    output_shape: tuple[int, int]
    kernel: np.ndarray | None = None
    scale: int = 1
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")


def identity_op(shape: tuple[int, int], noise_sigma: float = 0.0) -> DegradationOp:
    shape = (int(shape[0]), int(shape[1]))
    return DegradationOp(KIND_IDENTITY, shape, shape, noise_sigma=noise_sigma)


def blur_op(shape: tuple[int, int], kernel, noise_sigma: float = 0.0) -> DegradationOp:
    shape = (int(shape[0]), int(shape[1]))
    k = _check_kernel(kernel)
    if max(k.shape) > min(shape):
        raise ValueError(f"kernel {k.shape} larger than image {shape}")
    return DegradationOp(KIND_BLUR, shape, shape, kernel=k, noise_sigma=noise_sigma)


def gaussian_downsample_op(
    hr_shape: tuple[int, int], kernel, scale: int, noise_sigma: float = 0.0
) -> DegradationOp:
    """Blur with the kernel, then keep every scale-th row and column."""
    h, w = int(hr_shape[0]), int(hr_shape[1])
    s = int(scale)
    if s < 2:
        raise ValueError(f"downsampling factor must be >= 2, got {scale}")
    if h % s or w % s:
        raise ValueError(f"shape {hr_shape} not divisible by factor {s}")
    k = _check_kernel(kernel)
    if max(k.shape) > min(h, w):
        raise ValueError(f"kernel {k.shape} larger than image {hr_shape}")
    return DegradationOp(
        KIND_GAUSS_DOWN, (h, w), (h // s, w // s), kernel=k, scale=s,
        noise_sigma=noise_sigma,
    )


def bicubic_downsample_op(
    hr_shape: tuple[int, int], scale: int, noise_sigma: float = 0.0
) -> DegradationOp:
    h, w = int(hr_shape[0]), int(hr_shape[1])
    s = int(scale)
    if s < 2:
        raise ValueError(f"downsampling factor must be >= 2, got {scale}")
    if h % s or w % s:
        raise ValueError(f"shape {hr_shape} not divisible by factor {s}")
    return DegradationOp(
        KIND_BICUBIC_DOWN, (h, w), (h // s, w // s), scale=s, noise_sigma=noise_sigma
    )


def is_downsampling(op: DegradationOp) -> bool:
    return op.kind in _DOWN_KINDS


def apply_h(op: DegradationOp, img: np.ndarray) -> np.ndarray:
    """Forward observation H x."""
    img = as_grid(img)
    if img.shape != op.input_shape:
        raise ValueError(f"expected input shape {op.input_shape}, got {img.shape}")
    if op.kind == KIND_IDENTITY:
        return img.copy()
    if op.kind == KIND_BLUR:
        return periodic_convolve(img, op.kernel)
    if op.kind == KIND_GAUSS_DOWN:
        blurred = periodic_convolve(img, op.kernel)
        return blurred[:: op.scale, :: op.scale].copy()
    if op.kind == KIND_BICUBIC_DOWN:
        return resize_bicubic(img, op.output_shape)
    raise ValueError(f"unknown degradation kind {op.kind!r}")


def apply_h_adjoint(op: DegradationOp, img: np.ndarray) -> np.ndarray:
    """Adjoint H^T y (exact except for the bicubic kind, see below).

    For bicubic downsampling the transpose is approximated by a bicubic
    upscale scaled by 1/scale**2, which matches the exact adjoint on constant
    images.
    """
    img = as_grid(img)
    if img.shape != op.output_shape:
        raise ValueError(f"expected output shape {op.output_shape}, got {img.shape}")
    if op.kind == KIND_IDENTITY:
        return img.copy()
    if op.kind == KIND_BLUR:
        return periodic_correlate(img, op.kernel)
    if op.kind == KIND_GAUSS_DOWN:
        lifted = np.zeros(op.input_shape)
        lifted[:: op.scale, :: op.scale] = img
        return periodic_correlate(lifted, op.kernel)
    if op.kind == KIND_BICUBIC_DOWN:
        return resize_bicubic(img, op.input_shape) / float(op.scale**2)
    raise ValueError(f"unknown degradation kind {op.kind!r}")


def apply_a(
    op: DegradationOp,
    bank: FilterBank,
    x: np.ndarray,
    step: float,
    weight: float,
) -> np.ndarray:
    """One application of A = I - step*H^T H - step*weight*sum_k W_k^T W_k.

    The matrix is never materialized; both quadratic terms are applied as
    operator compositions.
    """
    x = as_grid(x)
    if x.shape != op.input_shape:
        raise ValueError(f"expected input shape {op.input_shape}, got {x.shape}")
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if weight < 0:
        raise ValueError(f"weight must be >= 0, got {weight}")
    out = x - step * apply_h_adjoint(op, apply_h(op, x))
    out -= (step * weight) * conv_adjoint(bank, conv(bank, x))
    return out


def power_iteration_lmax(
    op: DegradationOp,
    bank: FilterBank,
    weight: float,
    iters: int = 50,
) -> float:
    """Largest eigenvalue estimate of H^T H + weight * sum_k W_k^T W_k.

    Deterministic: the start vector comes from a fixed-seed generator, and the
    Rayleigh quotient sequence is nondecreasing for this symmetric PSD
    operator.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if weight < 0:
        raise ValueError(f"weight must be >= 0, got {weight}")
    rng = np.random.default_rng(0)
    v = rng.standard_normal(op.input_shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        mv = apply_h_adjoint(op, apply_h(op, v))
        mv += weight * conv_adjoint(bank, conv(bank, v))
        est = float(np.sum(v * mv))
        norm = np.linalg.norm(mv)
        if norm == 0.0:
            return 0.0
        v = mv / norm
    return est


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian truncated at three standard deviations."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


# ---------------------------------------------------------------------------
# filter bank serialization


def bank_to_bytes(bank: FilterBank) -> bytes:
    head = BANK_MAGIC + struct.pack("<II", bank.count, bank.side)
    return head + bank.taps.astype("<f4").tobytes()


def bank_from_bytes(data: bytes) -> FilterBank:
    if data[: len(BANK_MAGIC)] != BANK_MAGIC:
        raise ValueError("bad magic for filter bank data")
    off = len(BANK_MAGIC)
    if len(data) < off + 8:
        raise ValueError("truncated filter bank header")
    count, side = struct.unpack("<II", data[off : off + 8])
    if count < 1 or side < 1:
        raise ValueError(f"bad filter bank dimensions: count={count} side={side}")
    need = count * side * side * 4
    body = data[off + 8 :]
    if len(body) < need:
        raise ValueError("truncated filter bank payload")
    taps = np.frombuffer(body, dtype="<f4", count=count * side * side)
    return FilterBank(count=count, side=side,
                      taps=taps.astype(np.float64).reshape(count, side, side))


def save_filter_bank(path: str, bank: FilterBank) -> None:
    with open(path, "wb") as fh:
        fh.write(bank_to_bytes(bank))


def load_filter_bank(path: str) -> FilterBank:
    with open(path, "rb") as fh:
        return bank_from_bytes(fh.read())


def load_kernel(path: str) -> np.ndarray:
    """Load a single blur kernel stored as a one-filter bank file."""
    bank = load_filter_bank(path)
    if bank.count != 1:
        raise ValueError(f"{path}: expected a single-filter file, got {bank.count}")
    return _check_kernel(bank.taps[0])
