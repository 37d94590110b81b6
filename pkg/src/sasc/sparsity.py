"""Feature-domain shrinkage and the restoration objective.

The per-coefficient subproblem min_z (c - z)^2 + lam*|z - mu| is solved in
closed form by re-centered soft-thresholding: z = mu + S(c - mu, lam/2) with
S(v, t) = sign(v) * max(|v| - t, 0).
"""

from __future__ import annotations

import numpy as np

from . import ops
from .grid import as_grid


def soft_threshold(values, tau):
    """Elementwise shrinkage sign(v) * max(|v| - tau, 0)."""
    v = np.asarray(values, dtype=np.float64)
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _check_maps(wx, mu) -> tuple[np.ndarray, np.ndarray]:
    wx = np.asarray(wx, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if wx.shape != mu.shape:
        raise ValueError(f"feature map shape mismatch: {wx.shape} vs {mu.shape}")
    if not (np.all(np.isfinite(wx)) and np.all(np.isfinite(mu))):
        raise ValueError("feature maps contain non-finite values")
    return wx, mu


def shrink_features(wx, mu, tau) -> np.ndarray:
    """Shrink wx toward the recentering maps mu with per-filter thresholds.

    tau is a scalar or a length-K vector applied along the leading (filter)
    axis of (K, H, W) maps.
    """
    wx, mu = _check_maps(wx, mu)
    t = np.asarray(tau, dtype=np.float64)
    if t.ndim == 1:
        if wx.ndim != 3 or t.shape[0] != wx.shape[0]:
            raise ValueError(
                f"threshold vector length {t.shape} does not match maps {wx.shape}"
            )
        t = t[:, None, None]
    elif t.ndim != 0:
        raise ValueError("tau must be a scalar or a 1-D per-filter vector")
    shrunk = mu + soft_threshold(wx - mu, t)
    # a zero threshold solves the subproblem with the response itself; return
    # it verbatim so the no-penalty path is exact, not just close
    return np.where(np.broadcast_to(t == 0.0, wx.shape), wx, shrunk)


def update_features(wx, mu, lam: float) -> np.ndarray:
    """Exact minimizer of (wx - z)^2 + lam*|z - mu| per coefficient."""
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    return shrink_features(wx, mu, lam / 2.0)


def mix_prior(z_ext, z_int, mix: float) -> np.ndarray:
    """Convex blend mix*z_ext + (1 - mix)*z_int of the two prior feature maps."""
    if not 0.0 <= mix <= 1.0:
        raise ValueError(f"mix must lie in [0, 1], got {mix}")
    z_ext, z_int = _check_maps(z_ext, z_int)
    return mix * z_ext + (1.0 - mix) * z_int


def objective(
    y: np.ndarray,
    x: np.ndarray,
    op: "ops.DegradationOp",
    bank: "ops.FilterBank",
    z: np.ndarray,
    mu: np.ndarray,
    eta: float,
    lam: float,
) -> float:
    """Full restoration energy.

    ||y - Hx||^2 + eta * sum_k ( ||w_k * x - z_k||^2 + lam * ||z_k - mu_k||_1 )
    """
    y = as_grid(y)
    x = as_grid(x)
    if eta < 0 or lam < 0:
        raise ValueError("eta and lam must be >= 0")
    r = y - ops.apply_h(op, x)
    wx = ops.conv(bank, x)
    z, mu = _check_maps(z, mu)
    if z.shape != wx.shape:
        raise ValueError(f"feature maps {z.shape} do not match bank output {wx.shape}")
    fidelity = float(np.sum(r * r))
    quad = float(np.sum((wx - z) ** 2))
    sparse = float(np.sum(np.abs(z - mu)))
    return fidelity + eta * (quad + lam * sparse)
