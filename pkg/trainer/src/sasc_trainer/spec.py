"""Training specification: a small JSON file describing one training run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

_DEGRADATION_KINDS = ("identity", "noise", "blur", "sr")


@dataclass
class TrainSpec:
    """Everything needed to reproduce a training run.

    The degradation block mirrors what the restoration CLI can undo: additive
    Gaussian noise (sigma on the 0-255 scale), Gaussian blur plus noise, or
    bicubic downscaling. Network shape fields describe the hidden trunk; the
    output projection back to one channel is always appended.
    """

    degradation: str = "noise"
    sigma: float = 25.0
    blur_sigma: float = 1.6
    scale: int = 2
    hidden_layers: int = 5
    channels: int = 16
    kernel_size: int = 3
    residual: bool = True
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 16
    patch_size: int = 40
    patches_per_image: int = 8
    seed: int = 0
    data_dir: str | None = None
    spec_sha256: str | None = field(default=None, compare=False)

    def validate(self) -> None:
        if self.degradation not in _DEGRADATION_KINDS:
            raise ValueError(
                f"unknown degradation {self.degradation!r}; expected one of {_DEGRADATION_KINDS}"
            )
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        if self.blur_sigma <= 0.0:
            raise ValueError("blur_sigma must be positive")
        if self.scale < 1:
            raise ValueError("scale must be at least 1")
        if self.hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.patch_size < self.kernel_size:
            raise ValueError("patch_size must cover at least one kernel")
        if self.patches_per_image < 1:
            raise ValueError("patches_per_image must be positive")
        if self.degradation == "sr" and self.patch_size % self.scale != 0:
            raise ValueError("patch_size must be divisible by scale for sr training")

    @property
    def sigma01(self) -> float:
        return self.sigma / 255.0


_FIELD_TYPES = {
    "degradation": str,
    "sigma": float,
    "blur_sigma": float,
    "scale": int,
    "hidden_layers": int,
    "channels": int,
    "kernel_size": int,
    "residual": bool,
    "epochs": int,
    "learning_rate": float,
    "batch_size": int,
    "patch_size": int,
    "patches_per_image": int,
    "seed": int,
    "data_dir": str,
}


def load_spec(path: str) -> TrainSpec:
    """Read a JSON training spec, filling defaults for absent keys.

    Unknown keys are rejected so typos fail loudly. The sha256 of the raw
    file bytes is recorded for the training log.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: top level must be a JSON object")

    kwargs = {}
    for key, value in doc.items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}: unknown spec key {key!r}")
        want = _FIELD_TYPES[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is int and isinstance(value, bool):
            raise ValueError(f"{path}: key {key!r} must be an integer")
        if not isinstance(value, want):
            raise ValueError(
                f"{path}: key {key!r} must be {want.__name__}, got {type(value).__name__}"
            )
        kwargs[key] = value

    spec = TrainSpec(**kwargs)
    spec.spec_sha256 = hashlib.sha256(raw).hexdigest()
    spec.validate()
    return spec
