"""Adam with bias-corrected moment estimates."""

from __future__ import annotations

import torch

from ..errors import DimensionError, DivergenceError


class Adam:
    """Adam over a fixed list of named parameters.

    ``step`` reads gradients from ``param.grad`` unless an explicit list is
    passed, and refuses to apply a non-finite gradient.
    """

    def __init__(self, named_params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.names, self.params = [], []
        for name, p in named_params:
            self.names.append(name)
            self.params.append(p)
        if lr < 0:
            raise ValueError("learning rate must be nonnegative")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self, grads=None):
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for name, p, g in zip(self.names, self.params, grads):
            if g is not None and g.shape != p.shape:
                raise DimensionError(f"gradient shape {tuple(g.shape)} does not match parameter {name!r}",
                                     layer=name.rsplit(".", 1)[0])
            if g is not None and not torch.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient for {name!r}", layer=name.rsplit(".", 1)[0])

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = torch.zeros_like(p)
            m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            denom = (v / bc2).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom, value=-self.lr / bc1)

    def state_dict(self):
        out = {"t": self.t, "lr": self.lr}
        for name, m, v in zip(self.names, self.m, self.v):
            out[f"m/{name}"] = m.clone()
            out[f"v/{name}"] = v.clone()
        return out

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        for name, m, v in zip(self.names, self.m, self.v):
            m.copy_(torch.as_tensor(state[f"m/{name}"]))
            v.copy_(torch.as_tensor(state[f"v/{name}"]))
