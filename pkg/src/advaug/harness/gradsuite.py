"""Finite-difference gradient suite over every layer type, the sampler and the generator.

Random instances are drawn away from non-differentiable points (activation
kinks, pooling ties, integer sampling positions) so that central differences
with step ``1e-4`` measure the gradient rather than a kink.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .. import stn
from ..models import NOISE_DIM, Generator, GeneratorConfig
from ..nn import layers as L
from ..nn.gradcheck import GradCheckReport, check_module, grad_check

DEFAULT_INSTANCES = 20


def _away_from_zero(shape, gen, margin=0.05):
    x = torch.randn(shape, generator=gen, dtype=torch.float64)
    return torch.sign(x) * (margin + x.abs())


def _distinct(shape, gen, spacing=0.01):
    """Values with pairwise gaps of at least ``spacing`` (no pooling ties)."""
    n = int(torch.tensor(shape).prod())
    ranks = torch.randperm(n, generator=gen).to(torch.float64)
    return ((ranks - n / 2) * spacing).reshape(shape)


def _layer_case(kind: str, gen: torch.Generator):
    """A fresh (module, inputs) pair of the given layer type with random sizes."""
    r = lambda lo, hi: int(torch.randint(lo, hi + 1, (1,), generator=gen))  # noqa: E731
    b, c, s = r(2, 3), r(1, 3), r(2, 3) * 2
    image = lambda ch=c: torch.randn(b, ch, s, s, generator=gen, dtype=torch.float64)  # noqa: E731
    if kind in ("conv", "conv_wn", "conv_stride2"):
        # a weight-normalized kernel with a single element has an identically zero direction gradient
        k = 3 if kind == "conv_wn" else (1, 3)[r(0, 1)]
        mod = L.Conv2d(c, r(1, 4), kernel=k, stride=2 if kind == "conv_stride2" else 1,
                       weight_norm=kind == "conv_wn", generator=gen)
        return mod, [image()]
    if kind in ("dense", "dense_wn"):
        n = r(2, 6)
        return (L.Dense(n, r(1, 5), weight_norm=kind == "dense_wn", generator=gen),
                [torch.randn(b, n, generator=gen, dtype=torch.float64)])
    if kind == "projection":
        n = r(2, 5)
        return L.Projection(n, r(1, 2), size=s, generator=gen), [torch.randn(b, n, generator=gen, dtype=torch.float64)]
    if kind == "batchnorm":
        mod = L.BatchNorm2d(c)
        with torch.no_grad():
            mod.gamma.copy_(1 + 0.3 * torch.randn(c, generator=gen))
            mod.beta.copy_(0.3 * torch.randn(c, generator=gen))
        return mod, [image()]
    if kind == "leaky_relu":
        return L.LeakyReLU(), [_away_from_zero((b, c, s, s), gen)]
    if kind == "sigmoid":
        return L.Sigmoid(), [image()]
    if kind == "dropout":
        return L.Dropout(0.5, generator=torch.Generator().manual_seed(r(0, 10 ** 6))), [image()]
    if kind == "maxpool":
        return L.MaxPool2d(2), [_distinct((b, c, s, s), gen)]
    if kind == "upsample":
        return L.Upsample2x(), [image()]
    if kind == "global_avg_pool":
        return L.GlobalAvgPool(), [image()]
    raise KeyError(kind)


LAYER_KINDS = ("conv", "conv_wn", "conv_stride2", "dense", "dense_wn", "projection", "batchnorm",
               "leaky_relu", "sigmoid", "dropout", "maxpool", "upsample", "global_avg_pool")


def check_layers(instances=DEFAULT_INSTANCES, tolerance=1e-5, seed=0, kinds=LAYER_KINDS) -> GradCheckReport:
    """Worst relative error per layer type over ``instances`` random cases."""
    gen = torch.Generator().manual_seed(seed)
    report = GradCheckReport(tolerance=tolerance)
    for kind in kinds:
        worst = 0.0
        for i in range(instances):
            mod, inputs = _layer_case(kind, gen)
            mod.train()
            rep = check_module(mod, inputs, tolerance=tolerance, seed=seed * 1000 + i, param_prefix=kind)
            worst = max(worst, rep.max_error)
            skipped = sum(rep.skipped.values())
            if skipped:
                report.skipped[kind] = report.skipped.get(kind, 0) + skipped
        report.errors[kind] = worst
    return report


def _safe_grid(b, h, w, src, gen, margin=1e-3):
    """Random source grid whose pixel coordinates stay ``margin`` away from integers."""
    grid = (torch.rand(b, h, w, 2, generator=gen, dtype=torch.float64) * 2.4 - 1.2)
    scale = torch.tensor([(src - 1) / 2.0, (src - 1) / 2.0], dtype=torch.float64)
    pix = (grid + 1) * scale
    frac = pix - torch.floor(pix)
    frac = frac.clamp(margin, 1 - margin)
    return (torch.floor(pix) + frac) / scale - 1


def check_sampler(instances=DEFAULT_INSTANCES, tolerance=1e-5, seed=0) -> GradCheckReport:
    """Image, grid and affine-parameter gradients of the bilinear sampler."""
    gen = torch.Generator().manual_seed(seed)
    report = GradCheckReport(tolerance=tolerance)
    worst = {"sampler.image": 0.0, "sampler.grid": 0.0, "warp.theta": 0.0}
    for _ in range(instances):
        b, c = int(torch.randint(1, 3, (1,), generator=gen)), int(torch.randint(1, 3, (1,), generator=gen))
        src, out = int(torch.randint(3, 7, (1,), generator=gen)), int(torch.randint(2, 6, (1,), generator=gen))
        image = torch.randn(b, c, src, src, generator=gen, dtype=torch.float64, requires_grad=True)
        grid = _safe_grid(b, out, out, src, gen).requires_grad_(True)
        probe = torch.randn(b, c, out, out, generator=gen, dtype=torch.float64)
        rep = grad_check(lambda: (stn.bilinear_sample(image, grid) * probe).sum(),
                         {"sampler.image": image, "sampler.grid": grid}, tolerance)
        for k, v in rep.errors.items():
            worst[k] = max(worst[k], v)

        theta = (torch.tensor(stn.IDENTITY, dtype=torch.float64)
                 + 0.3 * torch.randn(6, generator=gen, dtype=torch.float64)).repeat(b, 1)
        theta.requires_grad_(True)
        probe = torch.randn(b, c, src, src, generator=gen, dtype=torch.float64)
        rep = grad_check(lambda: (stn.warp(image, theta) * probe).sum(), {"warp.theta": theta}, tolerance)
        worst["warp.theta"] = max(worst["warp.theta"], rep.errors["warp.theta"])
    report.errors.update(worst)
    return report


def check_generator(width=0.25, tolerance=1e-4, max_checks=4, seed=0, batch=2,
                    eps=1e-4, min_eps=1e-7) -> GradCheckReport:
    """Spot-check every parameter group of the full generator end to end.

    Zero-initialized output layers are re-drawn so that every path carries
    gradient, and the warp is moved off the identity, where every sampling
    point sits exactly on a pixel and the sampler is not differentiable.
    ``max_checks`` coordinates are probed per parameter tensor.
    The network has tens of thousands of activation kinks per layer, so a
    probe that straddles one is repeated with smaller steps down to
    ``min_eps``; probes that still cross a kink are skipped and counted.
    """
    gen = torch.Generator().manual_seed(seed)
    g = Generator(GeneratorConfig(channels=1, width=width), gen).double()
    with torch.no_grad():
        g.decoder.out.weight.normal_(0.0, 0.1, generator=gen)
        g.affine_head.out.weight.normal_(0.0, 0.01, generator=gen)
        angle = 5 + 15 * torch.rand(1, generator=gen)
        theta = stn.rotation_scale_theta(angle, 0.85 + 0.1 * torch.rand(1, generator=gen), torch.float64)[0]
        theta[[2, 5]] = 0.1 * torch.randn(2, generator=gen, dtype=torch.float64)
        g.affine_head.out.bias.copy_(theta - g.affine_head.identity)
    x = torch.randn(batch, 1, 32, 32, generator=gen, dtype=torch.float64)
    z = torch.randn(batch, NOISE_DIM, generator=gen, dtype=torch.float64)
    report = check_module(_GeneratorImage(g), [x, z], tolerance=tolerance, eps=eps, min_eps=min_eps,
                          max_checks=max_checks, seed=seed, param_prefix="generator")
    rename = lambda k: k.replace("generator.g.", "generator.")  # noqa: E731
    report.errors = {rename(k): v for k, v in report.errors.items()}
    report.skipped = {rename(k): v for k, v in report.skipped.items()}
    return report


class _GeneratorImage(torch.nn.Module):
    def __init__(self, g):
        super().__init__()
        self.g = g

    def forward(self, x, z):
        return self.g(x, z)[0]


@dataclass
class SuiteResult:
    layers: GradCheckReport
    sampler: GradCheckReport
    generator: GradCheckReport | None = None
    reports: list = field(init=False)

    def __post_init__(self):
        self.reports = [r for r in (self.layers, self.sampler, self.generator) if r is not None]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def __str__(self):
        return "\n\n".join(str(r) for r in self.reports)


def run_suite(instances=DEFAULT_INSTANCES, seed=0, include_generator=True) -> SuiteResult:
    return SuiteResult(check_layers(instances, seed=seed), check_sampler(instances, seed=seed),
                       check_generator(seed=seed) if include_generator else None)
