"""Differentiable affine warping: parameters -> sampling grid -> bilinear sample.

Coordinates are normalized with corner alignment: pixel ``i`` of an axis of
length ``N`` sits at ``-1 + 2 i / (N - 1)``. A 6-vector
``(a11, a12, t1, a21, a22, t2)`` maps each *output* location ``(x, y)`` to the
*source* location ``(a11 x + a12 y + t1, a21 x + a22 y + t2)``. Source reads
outside the image are zero.
"""

from __future__ import annotations

import math

import torch

IDENTITY = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def identity_theta(batch: int, dtype=torch.float32) -> torch.Tensor:
    return torch.tensor(IDENTITY, dtype=dtype).repeat(batch, 1)


def _axis(n: int, dtype) -> torch.Tensor:
    if n == 1:
        return torch.zeros(1, dtype=dtype)
    return -1.0 + 2.0 * torch.arange(n, dtype=dtype) / (n - 1)


def base_grid(h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 3) array of homogeneous target coordinates (x, y, 1)."""
    ys, xs = torch.meshgrid(_axis(h, dtype), _axis(w, dtype), indexing="ij")
    return torch.stack([xs, ys, torch.ones_like(xs)], dim=-1)


def affine_grid(theta: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Source coordinates (B, H, W, 2) for each target pixel; differentiable in ``theta``."""
    if h < 1 or w < 1:
        raise ValueError("grid size must be positive")
    a = theta.reshape(-1, 2, 3)
    base = base_grid(h, w, theta.dtype)
    return torch.einsum("hwk,bjk->bhwj", base, a)


def affine_grid_backward(grad_grid: torch.Tensor) -> torch.Tensor:
    """Gradient w.r.t. the 6-vector given the gradient w.r.t. the grid."""
    _, h, w, _ = grad_grid.shape
    base = base_grid(h, w, grad_grid.dtype)
    return torch.einsum("bhwj,hwk->bjk", grad_grid, base).reshape(-1, 6)


def _corners(image: torch.Tensor, grid: torch.Tensor):
    """Source indices, validity masks and bilinear weights for the four neighbours."""
    _, _, h, w = image.shape
    ix = (grid[..., 0] + 1.0) * (0.5 * (w - 1))
    iy = (grid[..., 1] + 1.0) * (0.5 * (h - 1))
    x0 = torch.floor(ix)
    y0 = torch.floor(iy)
    fx = ix - x0
    fy = iy - y0
    x0 = x0.long()
    y0 = y0.long()
    out = []
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xc, yc = x0 + dx, y0 + dy
            valid = (xc >= 0) & (xc < w) & (yc >= 0) & (yc < h)
            flat = (yc.clamp(0, h - 1) * w + xc.clamp(0, w - 1)).flatten(1)
            out.append((dx, dy, flat, valid.flatten(1), wx.flatten(1), wy.flatten(1)))
    return out


def _gather(image_flat, flat, valid):
    b, c, _ = image_flat.shape
    idx = flat[:, None, :].expand(b, c, flat.shape[1])
    return torch.gather(image_flat, 2, idx) * valid[:, None, :].to(image_flat.dtype)


def bilinear_forward(image: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    b, c, h, w = image.shape
    ho, wo = grid.shape[1:3]
    image_flat = image.reshape(b, c, h * w)
    out = image.new_zeros(b, c, ho * wo)
    for _, _, flat, valid, wx, wy in _corners(image, grid):
        out += _gather(image_flat, flat, valid) * (wx * wy)[:, None, :]
    return out.reshape(b, c, ho, wo)


def bilinear_backward(grad_out: torch.Tensor, image: torch.Tensor, grid: torch.Tensor):
    """Analytic gradients of bilinear sampling w.r.t. the image and the grid."""
    b, c, h, w = image.shape
    ho, wo = grid.shape[1:3]
    g = grad_out.reshape(b, c, ho * wo)
    image_flat = image.reshape(b, c, h * w)
    grad_image = image.new_zeros(b, c, h * w)
    grad_ix = grid.new_zeros(b, ho * wo)
    grad_iy = grid.new_zeros(b, ho * wo)
    for dx, dy, flat, valid, wx, wy in _corners(image, grid):
        vmask = valid[:, None, :].to(g.dtype)
        idx = flat[:, None, :].expand(b, c, flat.shape[1])
        grad_image.scatter_add_(2, idx, g * (wx * wy)[:, None, :] * vmask)
        gv = (g * _gather(image_flat, flat, valid)).sum(dim=1)
        # d wx / d ix is -1 for the left neighbour and +1 for the right one
        grad_ix += gv * wy * (1.0 if dx else -1.0)
        grad_iy += gv * wx * (1.0 if dy else -1.0)
    grad_grid = torch.stack([grad_ix * (0.5 * (w - 1)), grad_iy * (0.5 * (h - 1))], dim=-1)
    return grad_image.reshape(b, c, h, w), grad_grid.reshape(b, ho, wo, 2)


class _BilinearSample(torch.autograd.Function):
    @staticmethod
    def forward(ctx, image, grid):
        ctx.save_for_backward(image, grid)
        return bilinear_forward(image, grid)

    @staticmethod
    def backward(ctx, grad_out):
        image, grid = ctx.saved_tensors
        grad_image, grad_grid = bilinear_backward(grad_out.contiguous(), image, grid)
        return grad_image, grad_grid


class _AffineWarp(torch.autograd.Function):
    @staticmethod
    def forward(ctx, image, theta):
        grid = affine_grid(theta, image.shape[2], image.shape[3])
        ctx.save_for_backward(image, grid)
        return bilinear_forward(image, grid)

    @staticmethod
    def backward(ctx, grad_out):
        image, grid = ctx.saved_tensors
        grad_image, grad_grid = bilinear_backward(grad_out.contiguous(), image, grid)
        return grad_image, affine_grid_backward(grad_grid)


def bilinear_sample(image: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    if image.shape[0] != grid.shape[0]:
        raise ValueError(f"grid batch {grid.shape[0]} does not match image batch {image.shape[0]}")
    return _BilinearSample.apply(image, grid)


def warp(image: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Resample ``image`` through the affine map ``theta`` (B, 6)."""
    if image.shape[0] != theta.shape[0]:
        raise ValueError(f"theta batch {theta.shape[0]} does not match image batch {image.shape[0]}")
    return _AffineWarp.apply(image, theta.reshape(-1, 6))


def sample_backward(grad_out: torch.Tensor, image: torch.Tensor, theta: torch.Tensor):
    """Return ``(grad_image, grad_theta)`` for ``warp(image, theta)``."""
    grid = affine_grid(theta, image.shape[2], image.shape[3])
    grad_image, grad_grid = bilinear_backward(grad_out, image, grid)
    return grad_image, affine_grid_backward(grad_grid)


def rotation_scale_theta(angle_deg, scale, dtype=torch.float32) -> torch.Tensor:
    """Output-to-source maps that rotate content by ``angle_deg`` and zoom by ``scale``.

    Both arguments are 1-D sequences of equal length. A scale above one
    enlarges the content, so the source window shrinks by ``1 / scale``.
    With rows growing downward, positive angles turn the content clockwise
    as displayed.
    """
    angle = torch.as_tensor(angle_deg, dtype=torch.float64) * (math.pi / 180.0)
    s = torch.as_tensor(scale, dtype=torch.float64)
    cos, sin = torch.cos(angle) / s, torch.sin(angle) / s
    zero = torch.zeros_like(cos)
    return torch.stack([cos, sin, zero, -sin, cos, zero], dim=-1).to(dtype)


def invert_theta(theta: torch.Tensor) -> torch.Tensor:
    a = theta.reshape(-1, 2, 3)
    full = torch.cat([a, a.new_tensor([0.0, 0.0, 1.0]).expand(a.shape[0], 1, 3)], dim=1)
    return torch.linalg.inv(full)[:, :2, :].reshape(-1, 6)
