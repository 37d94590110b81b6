"""Restoration driver: alternating feature shrinkage and gradient steps.

One outer round updates the feature maps in closed form, takes one gradient
step on the image, and refreshes the recentering maps from the new iterate
(group memberships stay frozen).  The staged variant replays the same round
with per-stage parameters, including a separate reconstruction bank, which is
how a learned unrolled model is executed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ops, priornet, selfsim, sparsity
from .grid import as_grid

STAGE_MAGIC = b"SASCSTG1"

PRIOR_NONE = "none"
PRIOR_INTERNAL = "internal"
PRIOR_EXTERNAL = "external"
PRIOR_HYBRID = "hybrid"
PRIOR_MODES = (PRIOR_NONE, PRIOR_INTERNAL, PRIOR_EXTERNAL, PRIOR_HYBRID)

# lam defaults to 0.7 * sigma^2 with sigma quoted on the 8-bit scale, then
# brought to [0, 1] units: 0.7 * (255*sigma01)^2 / 255.
_LAM_COEFF = 0.7 * 255.0
# bandwidth defaults to 12 * sigma01, with a floor for noise-free problems.
_BANDWIDTH_COEFF = 12.0
_BANDWIDTH_FLOOR = 0.1


@dataclass
class SolverConfig:
    """Knobs for restore()/restore_staged(); None means derive from the problem."""

    eta: float = 0.05
    lam: float | None = None
    step: float | None = None
    mix: float = 0.5
    iterations: int = 30
    prior_mode: str = PRIOR_INTERNAL
    patch_side: int = 6
    stride: int = 4
    group_size: int = 10
    window: int = 31
    bandwidth: float | None = None
    refresh_prior: bool = True
    power_iters: int = 30

    def validate(self) -> None:
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.step is not None and self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError(f"mix must lie in [0, 1], got {self.mix}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior mode must be one of {PRIOR_MODES}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.power_iters < 1:
            raise ValueError(f"power_iters must be >= 1, got {self.power_iters}")

    def resolved_lam(self, op: "ops.DegradationOp") -> float:
        if self.lam is not None:
            return float(self.lam)
        return _LAM_COEFF * op.noise_sigma * op.noise_sigma

    def resolved_bandwidth(self, op: "ops.DegradationOp") -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return max(_BANDWIDTH_COEFF * op.noise_sigma, _BANDWIDTH_FLOOR)

    def resolved_step(self, op: "ops.DegradationOp", bank: "ops.FilterBank") -> float:
        if self.step is not None:
            return float(self.step)
        lmax = ops.power_iteration_lmax(op, bank, self.eta, iters=self.power_iters)
        if lmax <= 0:
            raise ValueError("spectral norm estimate is not positive")
        return 0.9 / lmax


def update_x(
    x: np.ndarray,
    y: np.ndarray,
    op: "ops.DegradationOp",
    bank: "ops.FilterBank",
    z: np.ndarray,
    step: float,
    eta: float,
    recon: "ops.FilterBank | None" = None,
) -> np.ndarray:
    """One gradient step x <- A x + step*H^T y + step*eta*R^T z.

    A = I - step*H^T H - step*eta*sum_k W_k^T W_k.  The reconstruction bank R
    defaults to the analysis bank, which makes the step an exact gradient
    descent update on the smooth part of the objective.
    """
    if recon is None:
        recon = bank
    out = ops.apply_a(op, bank, x, step, eta)
    out += step * ops.apply_h_adjoint(op, y)
    out += (step * eta) * ops.conv_adjoint(recon, z)
    return out


@dataclass(frozen=True)
class CgResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float


def solve_x_exact(
    y: np.ndarray,
    op: "ops.DegradationOp",
    bank: "ops.FilterBank",
    z: np.ndarray,
    eta: float,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> CgResult:
    """Conjugate-gradient solve of (H^T H + eta*sum W^T W) x = H^T y + eta*W^T z."""
    y = as_grid(y)
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")

    def operate(v: np.ndarray) -> np.ndarray:
        out = ops.apply_h_adjoint(op, ops.apply_h(op, v))
        out += eta * ops.conv_adjoint(bank, ops.conv(bank, v))
        return out

    b = ops.apply_h_adjoint(op, y) + eta * ops.conv_adjoint(bank, z)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CgResult(np.zeros(op.input_shape), True, 0, 0.0)
    x = np.zeros(op.input_shape)
    r = b.copy()
    p = r.copy()
    rs = float(np.sum(r * r))
    for it in range(1, max_iter + 1):
        ap = operate(p)
        denom = float(np.sum(p * ap))
        if not np.isfinite(denom) or denom <= 0:
            raise RuntimeError("conjugate gradient broke down (operator not PD)")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.sum(r * r))
        if not np.isfinite(rs_new):
            raise RuntimeError("conjugate gradient produced non-finite residual")
        rel = (rs_new**0.5) / bnorm
        if rel < tol:
            return CgResult(x, True, it, rel)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CgResult(x, False, max_iter, (rs**0.5) / bnorm)


# ---------------------------------------------------------------------------
# staged execution


@dataclass(frozen=True)
class Stage:
    """Parameters for one unrolled round (analysis/reconstruction pair)."""

    analysis: ops.FilterBank
    reconstruction: ops.FilterBank
    thresholds: np.ndarray  # (K,) nonnegative
    step: float
    eta: float

    def __post_init__(self):
        th = np.asarray(self.thresholds, dtype=np.float64)
        if th.ndim != 1 or th.shape[0] != self.analysis.count:
            raise ValueError(
                f"thresholds shape {th.shape} does not match bank count "
                f"{self.analysis.count}"
            )
        if np.any(th < 0) or not np.all(np.isfinite(th)):
            raise ValueError("thresholds must be finite and nonnegative")
        if self.reconstruction.count != self.analysis.count:
            raise ValueError(
                "analysis and reconstruction banks must hold the same filter count"
            )
        if self.step < 0 or self.eta < 0:
            raise ValueError("stage step and eta must be >= 0")
        object.__setattr__(self, "thresholds", th)


def _check_stages(stages: Sequence[Stage]) -> None:
    if len(stages) < 1:
        raise ValueError("at least one stage is required")


def stages_to_bytes(stages: Sequence[Stage]) -> bytes:
    _check_stages(stages)
    parts = [STAGE_MAGIC, struct.pack("<I", len(stages))]
    for st in stages:
        parts.append(struct.pack("<II", st.analysis.count, st.analysis.side))
        parts.append(st.analysis.taps.astype("<f4").tobytes())
        parts.append(st.reconstruction.taps.astype("<f4").tobytes())
        parts.append(st.thresholds.astype("<f4").tobytes())
        parts.append(struct.pack("<ff", st.step, st.eta))
    return b"".join(parts)


def stages_from_bytes(data: bytes) -> list[Stage]:
    if data[: len(STAGE_MAGIC)] != STAGE_MAGIC:
        raise ValueError("bad magic for stage parameter data")
    pos = len(STAGE_MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("truncated stage parameter data")
        out = data[pos : pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    if count < 1:
        raise ValueError("stage count must be >= 1")
    stages = []
    for _ in range(count):
        k, f = struct.unpack("<II", take(8))
        if k < 1 or f < 1:
            raise ValueError(f"bad stage geometry K={k} f={f}")
        n = k * f * f
        ana = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float64)
        rec = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float64)
        th = np.frombuffer(take(4 * k), dtype="<f4").astype(np.float64)
        step, eta = struct.unpack("<ff", take(8))
        stages.append(Stage(
            analysis=ops.FilterBank(k, f, ana.reshape(k, f, f)),
            reconstruction=ops.FilterBank(k, f, rec.reshape(k, f, f)),
            thresholds=th,
            step=float(step),
            eta=float(eta),
        ))
    return stages


def save_stages(path: str, stages: Sequence[Stage]) -> None:
    with open(path, "wb") as fh:
        fh.write(stages_to_bytes(stages))


def load_stages(path: str) -> list[Stage]:
    with open(path, "rb") as fh:
        return stages_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# full restoration


class _PriorState:
    """Recentering maps mu plus what is needed to refresh them per round."""

    def __init__(
        self,
        cfg: SolverConfig,
        op: "ops.DegradationOp",
        bank: "ops.FilterBank",
        x0: np.ndarray,
        net: "priornet.PriorNetWeights | None",
    ):
        self.cfg = cfg
        self.bank = bank
        self.mode = cfg.prior_mode
        self.index = None
        self.z_ext = None
        if self.mode in (PRIOR_EXTERNAL, PRIOR_HYBRID):
            if net is None:
                raise ValueError(
                    f"prior mode {self.mode!r} requires prior network weights"
                )
            # The network sees the same initial estimate the solver starts from.
            self.z_ext = ops.conv(bank, x0)
        if self.mode in (PRIOR_INTERNAL, PRIOR_HYBRID):
            self.index = selfsim.build_group_index(
                x0,
                patch_side=cfg.patch_side,
                stride=cfg.stride,
                group_size=cfg.group_size,
                window=cfg.window,
                bandwidth=cfg.resolved_bandwidth(op),
            )
        self.mu = self._blend(x0)

    def _blend(self, guide: np.ndarray) -> np.ndarray:
        if self.mode == PRIOR_NONE:
            shape = (self.bank.count,) + guide.shape
            return np.zeros(shape)
        if self.mode == PRIOR_EXTERNAL:
            return self.z_ext
        z_int = selfsim.nonlocal_features(guide, self.index, self.bank)
        if self.mode == PRIOR_INTERNAL:
            return z_int
        return sparsity.mix_prior(self.z_ext, z_int, self.cfg.mix)

    def refresh(self, x: np.ndarray) -> None:
        """Per-round recentering update; memberships stay frozen."""
        if not self.cfg.refresh_prior:
            return
        if self.mode in (PRIOR_INTERNAL, PRIOR_HYBRID):
            self.index = selfsim.refresh_weights(self.index, x)
            self.mu = self._blend(x)


def initial_estimate(
    y: np.ndarray,
    op: "ops.DegradationOp",
    net: "priornet.PriorNetWeights | None",
    prior_mode: str,
) -> np.ndarray:
    """Starting point: bicubic upscale for downsampling operators, then the
    prior network when the mode uses one."""
    y = as_grid(y)
    if y.shape != op.output_shape:
        raise ValueError(f"observation shape {y.shape} != operator {op.output_shape}")
    if ops.is_downsampling(op):
        x0 = ops.resize_bicubic(y, op.input_shape)
    else:
        x0 = y.copy()
    if prior_mode in (PRIOR_EXTERNAL, PRIOR_HYBRID):
        if net is None:
            raise ValueError(f"prior mode {prior_mode!r} requires prior network weights")
        x0 = priornet.infer(net, x0)
    return x0


def restore(
    y: np.ndarray,
    op: "ops.DegradationOp",
    bank: "ops.FilterBank",
    cfg: SolverConfig | None = None,
    net: "priornet.PriorNetWeights | None" = None,
) -> np.ndarray:
    """Full restoration loop with a single shared parameter set."""
    cfg = cfg if cfg is not None else SolverConfig()
    cfg.validate()
    y = as_grid(y)
    x = initial_estimate(y, op, net, cfg.prior_mode)
    prior = _PriorState(cfg, op, bank, x, net)
    lam = cfg.resolved_lam(op)
    step = cfg.resolved_step(op, bank)
    for t in range(cfg.iterations):
        wx = ops.conv(bank, x)
        z = sparsity.update_features(wx, prior.mu, lam)
        x = update_x(x, y, op, bank, z, step, cfg.eta)
        if t + 1 < cfg.iterations:
            prior.refresh(x)
    return x


def restore_staged(
    y: np.ndarray,
    op: "ops.DegradationOp",
    stages: Sequence[Stage],
    cfg: SolverConfig | None = None,
    net: "priornet.PriorNetWeights | None" = None,
) -> np.ndarray:
    """Run one round per stage with that stage's banks and thresholds.

    The prior is initialized exactly as in restore() (the first stage's
    analysis bank fixes the feature geometry) and refreshed between stages.
    cfg.iterations is ignored; the stage list sets the round count.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    cfg.validate()
    _check_stages(stages)
    first = stages[0].analysis
    for st in stages[1:]:
        if st.analysis.count != first.count:
            raise ValueError("all stages must share one filter count")
    y = as_grid(y)
    x = initial_estimate(y, op, net, cfg.prior_mode)
    prior = _PriorState(cfg, op, first, x, net)
    for t, st in enumerate(stages):
        wx = ops.conv(st.analysis, x)
        z = sparsity.shrink_features(wx, prior.mu, st.thresholds)
        x = update_x(x, y, op, st.analysis, z, st.step, st.eta,
                     recon=st.reconstruction)
        if t + 1 < len(stages):
            prior.refresh(x)
    return x
