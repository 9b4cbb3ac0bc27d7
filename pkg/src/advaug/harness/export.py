"""Side-by-side sample grids: real images on the left, generator outputs on the right."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..datasets import NormStats, denormalize
from ..models import NOISE_DIM

GRID = 8
PAD = 2
GAP = 8


def to_uint8(images, stats: NormStats) -> np.ndarray:
    return np.clip(np.rint(denormalize(images, stats)), 0, 255).astype(np.uint8)


def grid_side(size: int = 32, n: int = GRID, pad: int = PAD) -> int:
    return n * size + (n - 1) * pad


def tile(images: np.ndarray, n: int = GRID, pad: int = PAD) -> np.ndarray:
    """Arrange up to n*n uint8 images (B, C, H, W) into one (C, side, side) canvas."""
    b, c, h, w = images.shape
    canvas = np.zeros((c, grid_side(h, n, pad), grid_side(w, n, pad)), dtype=np.uint8)
    for k in range(min(b, n * n)):
        r, q = divmod(k, n)
        canvas[:, r * (h + pad):r * (h + pad) + h, q * (w + pad):q * (w + pad) + w] = images[k]
    return canvas


def sample_sheet(real: np.ndarray, transformed: np.ndarray, stats: NormStats) -> np.ndarray:
    left, right = tile(to_uint8(real, stats)), tile(to_uint8(transformed, stats))
    gap = np.zeros(left.shape[:2] + (GAP,), dtype=np.uint8)
    return np.concatenate([left, gap, right], axis=2)


def save_png(sheet: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode_img = sheet[0] if sheet.shape[0] == 1 else np.moveaxis(sheet, 0, -1)
    Image.fromarray(mode_img).save(path, format="PNG")


@torch.no_grad()
def export_samples_from_generator(generator, images, stats: NormStats, path, seed: int = 0,
                                  labels=None) -> np.ndarray:
    x = torch.as_tensor(np.asarray(images[: GRID * GRID]), dtype=torch.float32)
    z = torch.randn(len(x), NOISE_DIM, generator=torch.Generator().manual_seed(seed))
    generator.eval()
    y = None if labels is None else torch.as_tensor(np.asarray(labels[: len(x)]))
    if generator.config.noise_only and y is None:
        y = torch.zeros(len(x), dtype=torch.long)
    out, _ = generator(x, z, y)
    sheet = sample_sheet(x.numpy(), out.numpy(), stats)
    save_png(sheet, path)
    return sheet


def export_samples(checkpoint, images, path, labels=None, seed: int = 0) -> np.ndarray:
    """Write the sample sheet for a ``gen_epoch{E}.ckpt`` snapshot; ``images`` are normalized."""
    from ..training import load_generator

    generator, meta = load_generator(checkpoint)
    return export_samples_from_generator(generator, images, NormStats.from_dict(meta["stats"]), path,
                                         seed=seed, labels=labels)
