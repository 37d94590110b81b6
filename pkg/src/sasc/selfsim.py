"""Nonlocal self-similarity: patch grouping and the internal feature prior.

For each exemplar patch on a stride lattice, the group holds the L most
similar patches inside a centered search window (the exemplar itself first,
at distance zero).  Member weights are exp(-d / h) normalized to sum one,
where d is the plain patch l2 distance.  Group memberships are built once
from an initial estimate and frozen; only weights and patch values are
recomputed from later iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .grid import Patch, aggregate_patches, as_grid


@dataclass(frozen=True)
class PatchGroupIndex:
    """Frozen group memberships plus their similarity weights."""

    image_shape: tuple[int, int]
    patch_side: int
    stride: int
    group_size: int
    window: int
    bandwidth: float
    anchors: np.ndarray  # (E, 2) exemplar anchor positions
    members: np.ndarray  # (E, L, 2) member anchor positions, exemplar first
    weights: np.ndarray  # (E, L) nonnegative, rows sum to one


def _anchor_lattice(extent: int, side: int, stride: int) -> np.ndarray:
    anchors = list(range(0, extent - side + 1, stride))
    if anchors[-1] != extent - side:
        anchors.append(extent - side)
    return np.asarray(anchors, dtype=np.int64)


def _check_params(
    shape: tuple[int, int], patch_side: int, stride: int,
    group_size: int, window: int, bandwidth: float,
) -> None:
    h, w = shape
    if patch_side < 1 or patch_side > min(h, w):
        raise ValueError(f"patch side {patch_side} invalid for image {shape}")
    if stride < 1 or stride > patch_side:
        raise ValueError(
            f"stride {stride} must lie in [1, patch side {patch_side}] for full coverage"
        )
    if window < patch_side or window % 2 == 0:
        raise ValueError(f"search window must be odd and >= patch side, got {window}")
    if group_size < 1:
        raise ValueError(f"group size must be >= 1, got {group_size}")
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")


def _normalized_weights(dists: np.ndarray, bandwidth: float) -> np.ndarray:
    w = np.exp(-dists / bandwidth)
    return w / w.sum(axis=-1, keepdims=True)


def build_group_index(
    guide: np.ndarray,
    patch_side: int = 6,
    stride: int = 4,
    group_size: int = 10,
    window: int = 31,
    bandwidth: float = 1.0,
) -> PatchGroupIndex:
    """Group similar patches around every exemplar on the stride lattice.

    Exemplars live on the stride lattice with the final anchor clamped so the
    image is fully covered.  Candidates are all (wrapped) anchors inside the
    window centered at the exemplar; ties in distance break by raster-scan
    order of the candidate anchor.
    """
    guide = as_grid(guide)
    h, w = guide.shape
    _check_params(guide.shape, patch_side, stride, group_size, window, bandwidth)
    half = window // 2
    span = 2 * half + 1
    n_cand = min(span, h) * min(span, w)
    if n_cand < group_size:
        raise ValueError(
            f"window {window} offers {n_cand} candidates < group size {group_size}"
        )

    rows = _anchor_lattice(h, patch_side, stride)
    cols = _anchor_lattice(w, patch_side, stride)
    anchors = np.stack(
        [np.repeat(rows, cols.size), np.tile(cols, rows.size)], axis=1
    )

    padded = np.pad(guide, ((half, half + patch_side), (half, half + patch_side)),
                    mode="wrap")
    view = sliding_window_view(padded, (patch_side, patch_side))

    d_r = np.arange(-half, half + 1)
    d_c = np.arange(-half, half + 1)
    e = anchors.shape[0]
    members = np.empty((e, group_size, 2), dtype=np.int64)
    dists = np.empty((e, group_size))
    for i in range(e):
        r, c = anchors[i]
        block = view[r : r + span, c : c + span]  # candidates, offset-major
        ref = view[r + half, c + half]
        diff = block - ref
        dist = np.sqrt(np.einsum("abij,abij->ab", diff, diff))
        cand_r = (r + d_r) % h
        cand_c = (c + d_c) % w
        flat_pos = (cand_r[:, None] * w + cand_c[None, :]).ravel()
        flat_dist = dist.ravel()
        # Collapse duplicate wrapped anchors (possible when window >= extent).
        uniq_pos, first = np.unique(flat_pos, return_index=True)
        uniq_dist = flat_dist[first]
        self_pos = r * w + c
        keep = uniq_pos != self_pos
        uniq_pos = uniq_pos[keep]
        uniq_dist = uniq_dist[keep]
        order = np.lexsort((uniq_pos, uniq_dist))[: group_size - 1]
        chosen_pos = uniq_pos[order]
        members[i, 0] = (r, c)
        members[i, 1:, 0] = chosen_pos // w
        members[i, 1:, 1] = chosen_pos % w
        dists[i, 0] = 0.0
        dists[i, 1:] = uniq_dist[order]

    weights = _normalized_weights(dists, bandwidth)
    return PatchGroupIndex(
        image_shape=(h, w),
        patch_side=patch_side,
        stride=stride,
        group_size=group_size,
        window=window,
        bandwidth=bandwidth,
        anchors=anchors,
        members=members,
        weights=weights,
    )


def _gather_member_patches(guide: np.ndarray, index: PatchGroupIndex) -> np.ndarray:
    """Member patch values from guide, shaped (E, L, side, side)."""
    s = index.patch_side
    h, w = index.image_shape
    rr = (index.members[:, :, 0, None] + np.arange(s)[None, None, :]) % h
    cc = (index.members[:, :, 1, None] + np.arange(s)[None, None, :]) % w
    return guide[rr[:, :, :, None], cc[:, :, None, :]]


def refresh_weights(index: PatchGroupIndex, guide: np.ndarray) -> PatchGroupIndex:
    """Recompute similarity weights on a new guide; memberships stay frozen."""
    guide = as_grid(guide)
    if guide.shape != index.image_shape:
        raise ValueError(
            f"guide shape {guide.shape} does not match index {index.image_shape}"
        )
    vals = _gather_member_patches(guide, index)
    diff = vals - vals[:, :1]
    dists = np.sqrt(np.einsum("elij,elij->el", diff, diff))
    return replace(index, weights=_normalized_weights(dists, index.bandwidth))


def nonlocal_image(guide: np.ndarray, index: PatchGroupIndex) -> np.ndarray:
    """Collaborative estimate: weighted patch averages, re-aggregated.

    Each exemplar patch is replaced by the weighted average of its group
    members' values taken from guide, then all estimates are averaged back
    onto the canvas with unit aggregation weights.
    """
    guide = as_grid(guide)
    if guide.shape != index.image_shape:
        raise ValueError(
            f"guide shape {guide.shape} does not match index {index.image_shape}"
        )
    vals = _gather_member_patches(guide, index)
    est = np.einsum("el,elij->eij", index.weights, vals)
    s = index.patch_side
    patches = [
        (Patch(side=s, anchor=(int(r), int(c)), values=est[i]), 1.0)
        for i, (r, c) in enumerate(index.anchors)
    ]
    return aggregate_patches(patches, index.image_shape)


def nonlocal_features(
    guide: np.ndarray, index: PatchGroupIndex, bank: "ops.FilterBank"
) -> np.ndarray:
    """Analysis features of the collaborative estimate."""
    return ops.conv(bank, nonlocal_image(guide, index))
