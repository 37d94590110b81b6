"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way (explicit loops, dense
matrices) on purpose: these functions define expected values without sharing
any code with the package under test.
"""

from __future__ import annotations

import numpy as np


def naive_conv(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Direct periodic convolution, kernel center at side // 2."""
    h, w = img.shape
    f0, f1 = kernel.shape
    c0, c1 = f0 // 2, f1 // 2
    out = np.zeros((h, w))
    for p0 in range(h):
        for p1 in range(w):
            acc = 0.0
            for i in range(f0):
                for j in range(f1):
                    acc += kernel[i, j] * img[(p0 - i + c0) % h, (p1 - j + c1) % w]
            out[p0, p1] = acc
    return out


def naive_correlate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Direct periodic correlation (the adjoint of naive_conv)."""
    h, w = img.shape
    f0, f1 = kernel.shape
    c0, c1 = f0 // 2, f1 // 2
    out = np.zeros((h, w))
    for p0 in range(h):
        for p1 in range(w):
            acc = 0.0
            for i in range(f0):
                for j in range(f1):
                    acc += kernel[i, j] * img[(p0 + i - c0) % h, (p1 + j - c1) % w]
            out[p0, p1] = acc
    return out


def dense_conv_matrix(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Dense matrix of periodic convolution on row-major flattened images."""
    h, w = shape
    f0, f1 = kernel.shape
    c0, c1 = f0 // 2, f1 // 2
    m = np.zeros((h * w, h * w))
    for p0 in range(h):
        for p1 in range(w):
            for i in range(f0):
                for j in range(f1):
                    q0 = (p0 - i + c0) % h
                    q1 = (p1 - j + c1) % w
                    m[p0 * w + p1, q0 * w + q1] += kernel[i, j]
    return m


def dense_subsample_matrix(shape: tuple[int, int], scale: int) -> np.ndarray:
    """Dense matrix keeping every scale-th row/column of a flattened image."""
    h, w = shape
    hl, wl = h // scale, w // scale
    m = np.zeros((hl * wl, h * w))
    for r in range(hl):
        for c in range(wl):
            m[r * wl + c, (r * scale) * w + (c * scale)] = 1.0
    return m


def dense_h_matrix(op, shape: tuple[int, int]) -> np.ndarray:
    """Dense matrix for identity / blur / blur-plus-subsample operators."""
    h, w = shape
    if op.kind == "identity":
        return np.eye(h * w)
    if op.kind == "blur":
        return dense_conv_matrix(op.kernel, shape)
    if op.kind == "gauss_down":
        return dense_subsample_matrix(shape, op.scale) @ dense_conv_matrix(
            op.kernel, shape
        )
    raise ValueError(f"no dense form for kind {op.kind!r}")


def dense_gram(bank_taps: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Dense sum_k W_k^T W_k for a stack of (K, f, f) filters."""
    n = shape[0] * shape[1]
    g = np.zeros((n, n))
    for k in range(bank_taps.shape[0]):
        wk = dense_conv_matrix(bank_taps[k], shape)
        g += wk.T @ wk
    return g


def scalar_prox_grid(c: float, mu: float, lam: float, span: float = 3.0,
                     step: float = 1e-4) -> float:
    """Grid-search minimizer of (c - z)^2 + lam * |z - mu|."""
    lo = min(c, mu) - span
    hi = max(c, mu) + span
    zs = np.arange(lo, hi + step, step)
    vals = (c - zs) ** 2 + lam * np.abs(zs - mu)
    return float(zs[np.argmin(vals)])


def brute_force_groups(guide: np.ndarray, side: int, stride: int, group: int,
                       window: int, bandwidth: float):
    """Straightforward reimplementation of patch grouping semantics.

    Returns (anchors, members, weights) with the same conventions: exemplar
    first, candidates are wrapped anchors in the centered window, ordering by
    (distance, raster position of the wrapped anchor).
    """
    h, w = guide.shape
    half = window // 2

    def patch(r, c):
        rows = [(r + i) % h for i in range(side)]
        cols = [(c + j) % w for j in range(side)]
        return guide[np.ix_(rows, cols)]

    def lattice(extent):
        xs = list(range(0, extent - side + 1, stride))
        if xs[-1] != extent - side:
            xs.append(extent - side)
        return xs

    anchors = [(r, c) for r in lattice(h) for c in lattice(w)]
    members = []
    weights = []
    for (r, c) in anchors:
        ref = patch(r, c)
        seen = {}
        for dr in range(-half, half + 1):
            for dc in range(-half, half + 1):
                rr, cc = (r + dr) % h, (c + dc) % w
                if (rr, cc) == (r, c) or (rr, cc) in seen:
                    continue
                d = float(np.linalg.norm(patch(rr, cc) - ref))
                seen[(rr, cc)] = d
        ranked = sorted(seen.items(), key=lambda kv: (kv[1], kv[0][0], kv[0][1]))
        chosen = [((r, c), 0.0)] + ranked[: group - 1]
        members.append([pos for pos, _ in chosen])
        dists = np.array([d for _, d in chosen])
        ww = np.exp(-dists / bandwidth)
        weights.append(ww / ww.sum())
    return anchors, members, weights


def naive_net_forward(layers, residual: bool, img: np.ndarray) -> np.ndarray:
    """Loop-based forward pass over (taps, biases, activation) triples."""
    feats = [img]
    for taps, biases, act in layers:
        out_ch = taps.shape[0]
        nxt = []
        for o in range(out_ch):
            acc = np.full(img.shape, biases[o])
            for i, feat in enumerate(feats):
                acc += naive_conv(feat, taps[o, i])
            if act == "rectifier":
                acc = np.maximum(acc, 0.0)
            nxt.append(acc)
        feats = nxt
    out = feats[0]
    if residual:
        out = out + img
    return out
