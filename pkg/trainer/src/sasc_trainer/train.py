"""Training loop: Adam on mean-squared patch error, fully deterministic."""

from __future__ import annotations

import numpy as np
import torch

from .data import degrade_batch, sample_patches
from .model import PriorNet, build_model
from .spec import TrainSpec


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite."""


def _seed_everything(seed: int) -> tuple[np.random.Generator, torch.Generator]:
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return np.random.default_rng(seed), gen


def train_prior(
    spec: TrainSpec, images: list[np.ndarray]
) -> tuple[PriorNet, list[float]]:
    """Train a prior network on random crops of ``images``.

    Patches are resampled every epoch and degraded on the fly; the loss is
    the mean squared error against the clean crop. Returns the model and the
    per-epoch mean loss. With epochs = 0 the freshly initialized model is
    returned untouched (losses empty), which is still a valid export.
    """
    spec.validate()
    if not images:
        raise ValueError("no training images supplied")
    rng, gen = _seed_everything(spec.seed)
    model = build_model(spec)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=spec.learning_rate,
        betas=(0.9, 0.999), eps=1e-8,
    )
    losses: list[float] = []
    for _ in range(spec.epochs):
        patches = sample_patches(images, spec.patch_size, spec.patches_per_image, rng)
        order = rng.permutation(len(patches))
        total = 0.0
        seen = 0
        for start in range(0, len(order), spec.batch_size):
            idx = order[start : start + spec.batch_size]
            clean = torch.from_numpy(patches[idx]).unsqueeze(1)
            degraded = degrade_batch(clean, spec, gen)
            pred = model(degraded)
            loss = torch.mean((pred - clean) ** 2)
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became non-finite after {len(losses)} full epoch(s)"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += value * len(idx)
            seen += len(idx)
        losses.append(total / seen)
    return model, losses


def evaluate_mse(
    model: PriorNet, spec: TrainSpec, images: list[np.ndarray], seed: int
) -> tuple[float, float]:
    """(degraded-vs-clean MSE, restored-vs-clean MSE) on fresh random crops."""
    rng, gen = _seed_everything(seed)
    patches = sample_patches(images, spec.patch_size, spec.patches_per_image, rng)
    clean = torch.from_numpy(patches).unsqueeze(1)
    degraded = degrade_batch(clean, spec, gen)
    with torch.no_grad():
        pred = model(degraded)
    before = float(torch.mean((degraded - clean) ** 2))
    after = float(torch.mean((pred - clean) ** 2))
    return before, after
