"""Predefined augmentation baselines: none, light (pad + random crop) and strong."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import stn
from .errors import ConfigError

PAD = 4
ROTATION_RANGE_DEG = (-10.0, 10.0)
SCALE_RANGE = (0.5, 2.0)
POLICIES = ("none", "light", "strong")


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "none"
    flip_enabled: bool = False
    rotation_range_deg: tuple = ROTATION_RANGE_DEG
    scale_range: tuple = SCALE_RANGE
    pad: int = PAD
    fill: float = 0.0  # value read outside the image, in normalized units

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ConfigError(f"unknown augmentation policy {self.kind!r}; choose from {POLICIES}")
        if self.flip_enabled and self.kind != "strong":
            raise ConfigError("horizontal flips belong to the strong policy only")

    @classmethod
    def for_dataset(cls, kind: str, dataset: str, fill: float = 0.0) -> "AugmentPolicy":
        return cls(kind=kind, flip_enabled=(kind == "strong" and dataset == "cifar10"), fill=fill)


def crop_offsets(batch: int, rng: np.random.Generator, pad: int = PAD) -> np.ndarray:
    return rng.integers(0, 2 * pad + 1, size=(batch, 2))


def light_da(images: torch.Tensor, rng: np.random.Generator | None = None, offsets=None,
             pad: int = PAD, fill: float = 0.0) -> torch.Tensor:
    """Pad ``pad`` pixels on every side and crop a random window of the original size.

    ``offsets`` (B, 2) gives the (row, col) corner of each crop in the padded
    image; ``(pad, pad)`` is the identity.
    """
    b, _, h, w = images.shape
    if offsets is None:
        offsets = crop_offsets(b, rng, pad)
    padded = torch.nn.functional.pad(images, (pad, pad, pad, pad), value=fill)
    out = torch.empty_like(images)
    for n, (oy, ox) in enumerate(np.asarray(offsets)):
        out[n] = padded[n, :, oy:oy + h, ox:ox + w]
    return out


def hflip(images: torch.Tensor, mask=None) -> torch.Tensor:
    """Mirror left-right; with ``mask`` only the selected samples."""
    if mask is None:
        return images.flip(-1)
    mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
    return torch.where(mask[:, None, None, None], images.flip(-1), images)


def strong_da(images: torch.Tensor, policy: AugmentPolicy, rng: np.random.Generator | None = None,
              offsets=None, angles=None, scales=None, flips=None) -> torch.Tensor:
    """Light crop, then a joint rotation/scale about the centre, then an optional flip.

    Any of ``offsets``, ``angles`` (degrees), ``scales`` and ``flips`` may be
    passed to replace the random draw.
    """
    b = images.shape[0]
    if offsets is None:
        offsets = crop_offsets(b, rng, policy.pad)
    if angles is None:
        angles = rng.uniform(*policy.rotation_range_deg, size=b)
    if scales is None:
        scales = rng.uniform(*policy.scale_range, size=b)
    if flips is None:
        flips = rng.random(b) < 0.5 if policy.flip_enabled else np.zeros(b, dtype=bool)
    out = light_da(images, offsets=offsets, pad=policy.pad, fill=policy.fill)
    theta = stn.rotation_scale_theta(np.asarray(angles, dtype=np.float64),
                                     np.asarray(scales, dtype=np.float64), dtype=images.dtype)
    with torch.no_grad():
        out = stn.warp(out - policy.fill, theta) + policy.fill
    return hflip(out, flips) if np.any(flips) else out


def apply_policy(images: torch.Tensor, policy: AugmentPolicy, rng: np.random.Generator) -> torch.Tensor:
    if policy.kind == "none":
        return images
    if policy.kind == "light":
        return light_da(images, rng, pad=policy.pad, fill=policy.fill)
    return strong_da(images, policy, rng)
