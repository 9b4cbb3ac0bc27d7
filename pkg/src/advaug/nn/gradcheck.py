"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .layers import Dropout, LeakyReLU, MaxPool2d


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-5
    skipped: dict = field(default_factory=dict)  # group -> coordinates whose step crossed a kink

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        values = list(self.errors.values())
        if any(v != v for v in values):
            return float("nan")
        return max(values, default=0.0)

    def __str__(self):
        lines = [f"{'group':<48} {'max rel err':>12}  status"]
        for name, err in self.errors.items():
            note = f"  ({self.skipped[name]} kink-crossing steps skipped)" if self.skipped.get(name) else ""
            lines.append(f"{name:<48} {err:12.3e}  {'ok' if err < self.tolerance else 'FAIL'}{note}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} at tolerance {self.tolerance:g}")
        return "\n".join(lines)


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-8) -> torch.Tensor:
    denom = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(floor)
    return (analytic - numeric).abs() / denom


def grad_check(loss_fn, tensors: dict, tolerance=1e-5, eps=1e-4, max_checks=None,
               generator=None, reset=None, floor=1e-8, signature=None, min_eps=None) -> GradCheckReport:
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    ``tensors`` maps group names to leaf tensors that ``loss_fn`` reads.
    With ``max_checks`` set, only that many randomly chosen coordinates per
    group are perturbed. ``reset`` is called before every evaluation so
    stochastic layers replay the same noise.

    ``signature()``, when given, returns the activation pattern of the last
    evaluation (see :class:`KinkTracker`). A coordinate whose two perturbed
    evaluations change the pattern straddles a non-differentiable point. It
    is retried with a ten times smaller step while the step stays at or above
    ``min_eps``, and skipped (counted in ``report.skipped``) otherwise.
    """
    reset = reset or (lambda: None)
    names = list(tensors)
    leaves = [tensors[n] for n in names]
    reset()
    analytic = torch.autograd.grad(loss_fn(), leaves, allow_unused=True)
    base = signature() if signature else None

    report = GradCheckReport(tolerance=tolerance)
    with torch.no_grad():
        for name, leaf, grad in zip(names, leaves, analytic):
            grad = torch.zeros_like(leaf) if grad is None else grad
            flat = leaf.view(-1)
            n = flat.numel()
            if max_checks is not None and n > max_checks:
                coords = torch.randperm(n, generator=generator)[:max_checks]
            else:
                coords = torch.arange(n)
            numeric = torch.empty(len(coords), dtype=leaf.dtype)
            smooth = torch.ones(len(coords), dtype=torch.bool)
            for c, idx in enumerate(coords.tolist()):
                step = eps
                while True:
                    numeric[c], smooth[c] = _central(loss_fn, flat, idx, step, reset, signature, base)
                    if smooth[c] or min_eps is None or step / 10 < min_eps:
                        break
                    step /= 10
            if not smooth.all():
                report.skipped[name] = int((~smooth).sum())
            err = relative_error(grad.reshape(-1)[coords][smooth], numeric[smooth], floor)
            if len(coords) and not smooth.any():
                report.errors[name] = float("nan")  # nothing was actually verified
            else:
                report.errors[name] = float(err.max()) if len(err) else 0.0
    return report


def _central(loss_fn, flat, idx, eps, reset, signature, base):
    orig = flat[idx].item()
    flat[idx] = orig + eps
    reset()
    plus = loss_fn().item()
    smooth = _same(signature(), base) if signature else True
    flat[idx] = orig - eps
    reset()
    minus = loss_fn().item()
    if signature:
        smooth = smooth and _same(signature(), base)
    flat[idx] = orig
    return (plus - minus) / (2 * eps), smooth


def _same(a, b) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


class KinkTracker:
    """Records which side of every LeakyReLU kink and which max-pool winner each forward used.

    Any other module may take part by defining ``kink_pattern(output)``.
    """

    def __init__(self, module: nn.Module):
        self.pattern = []
        self.handles = [m.register_forward_hook(self._hook) for m in module.modules()
                        if isinstance(m, (LeakyReLU, MaxPool2d)) or hasattr(m, "kink_pattern")]

    def _hook(self, mod, inputs, output):
        x = inputs[0].detach()
        if isinstance(mod, LeakyReLU):
            self.pattern.append(x > 0)
        elif isinstance(mod, MaxPool2d):
            self.pattern.append(torch.nn.functional.max_pool2d(x, mod.size, return_indices=True)[1])
        else:
            self.pattern.append(mod.kink_pattern(output.detach()))

    def __bool__(self):
        return bool(self.handles)

    def reset(self):
        self.pattern = []

    def signature(self):
        out, self.pattern = self.pattern, []
        return out

    def remove(self):
        for h in self.handles:
            h.remove()


def _dropout_reset(module: nn.Module):
    gens = {id(m.generator): m.generator for m in module.modules()
            if isinstance(m, Dropout) and m.generator is not None}
    states = {k: g.get_state() for k, g in gens.items()}

    def reset():
        for k, g in gens.items():
            g.set_state(states[k])

    return reset


def check_module(module: nn.Module, inputs, tolerance=1e-5, eps=1e-4, max_checks=None,
                 seed=0, check_inputs=True, param_prefix=None, min_eps=None) -> GradCheckReport:
    """Finite-difference check of a module at double precision.

    The scalar probed is ``sum(output * R)`` for a fixed random ``R``.
    Parameter groups are named ``<layer path>.<parameter>``.
    """
    gen = torch.Generator().manual_seed(seed)
    module = module.double()
    tracker = KinkTracker(module)
    inputs = [x.detach().double().requires_grad_(check_inputs) for x in inputs]
    reset = _dropout_reset(module)
    reset()
    with torch.no_grad():
        out = module(*inputs)
    outs = out if isinstance(out, (tuple, list)) else (out,)
    probes = [torch.randn(o.shape, generator=gen, dtype=torch.float64) for o in outs]

    def loss_fn():
        res = module(*inputs)
        res = res if isinstance(res, (tuple, list)) else (res,)
        return sum((r * p).sum() for r, p in zip(res, probes))

    tensors = {}
    if check_inputs:
        tensors.update({f"input{i}": x for i, x in enumerate(inputs)})
    prefix = param_prefix or getattr(module, "name", "")
    for pname, p in module.named_parameters():
        tensors[f"{prefix}.{pname}" if prefix else pname] = p

    def reset_all():
        reset()
        tracker.reset()

    try:
        return grad_check(loss_fn, tensors, tolerance=tolerance, eps=eps, max_checks=max_checks,
                          generator=gen, reset=reset_all, signature=tracker.signature if tracker else None,
                          min_eps=min_eps)
    finally:
        tracker.remove()
