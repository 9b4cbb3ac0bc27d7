"""Layer kit used by the four networks.

Every layer is a ``torch.nn.Module`` so parameters, buffers and train/eval
mode are handled the usual way. On top of that a layer can be driven in
isolation with :func:`layer_forward` / :func:`layer_backward`, which record
the call and replay reverse mode from the recorded output.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import DimensionError, StateError

LRELU_SLOPE = 0.2


class Layer(nn.Module):
    """Base class: carries a ``name`` used in error messages and reports."""

    def __init__(self, name: str | None = None):
        super().__init__()
        self.name = name or type(self).__name__.lower()
        self._record = None

    def _check_channels(self, x, expected, dim=1):
        if x.dim() <= dim or x.shape[dim] != expected:
            raise DimensionError(
                f"layer {self.name!r} expects {expected} channels on dim {dim}, got shape {tuple(x.shape)}",
                layer=self.name)


def layer_forward(layer: Layer, x: torch.Tensor) -> torch.Tensor:
    """Run ``layer`` on a detached copy of ``x`` and record the call for :func:`layer_backward`."""
    x = x.detach().requires_grad_(True)
    out = layer(x)
    layer._record = (x, out)
    return out.detach()


def layer_backward(layer: Layer, grad_out: torch.Tensor) -> torch.Tensor:
    """Return the input gradient; parameter gradients accumulate in ``.grad``."""
    if layer._record is None:
        raise StateError(f"backward called on layer {layer.name!r} without a recorded forward")
    x, out = layer._record
    layer._record = None
    if grad_out.shape != out.shape:
        raise DimensionError(f"upstream gradient {tuple(grad_out.shape)} does not match output "
                             f"{tuple(out.shape)} of layer {layer.name!r}", layer=layer.name)
    if out.requires_grad:
        out.backward(grad_out)
    return x.grad if x.grad is not None else torch.zeros_like(x)


def _he_normal(shape, fan_in, generator, dtype=torch.float32):
    std = math.sqrt(2.0 / ((1.0 + LRELU_SLOPE ** 2) * fan_in))
    return torch.randn(shape, generator=generator, dtype=dtype) * std


class WeightNorm(nn.Module):
    """Kernel reparameterized as ``gain * direction / ||direction||`` per output unit."""

    def __init__(self, direction: torch.Tensor):
        super().__init__()
        self.direction = nn.Parameter(direction)
        self.gain = nn.Parameter(self.direction_norm().detach().clone())

    def direction_norm(self) -> torch.Tensor:
        return self.direction.flatten(1).norm(dim=1)

    def forward(self) -> torch.Tensor:
        shape = (-1,) + (1,) * (self.direction.dim() - 1)
        return self.direction * (self.gain / self.direction_norm()).reshape(shape)


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, weight_norm=False, bias=True,
                 zero_init=False, generator=None, name=None):
        super().__init__(name)
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.padding = kernel // 2
        shape = (out_ch, in_ch, kernel, kernel)
        w = torch.zeros(shape) if zero_init else _he_normal(shape, in_ch * kernel * kernel, generator)
        if weight_norm:
            if zero_init:
                raise ValueError("a weight-normalized kernel cannot start at zero")
            self.wn = WeightNorm(w)
        else:
            self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None

    @property
    def weight_norm(self):
        return hasattr(self, "wn")

    def kernel_weight(self):
        return self.wn() if self.weight_norm else self.weight

    def forward(self, x):
        self._check_channels(x, self.in_ch)
        return F.conv2d(x, self.kernel_weight(), self.bias, stride=self.stride, padding=self.padding)

    def extra_repr(self):
        wn = ", weight_norm" if self.weight_norm else ""
        return f"{self.in_ch}->{self.out_ch}, k={self.kernel}, s={self.stride}{wn}"


class Dense(Layer):
    def __init__(self, in_features, out_features, weight_norm=False, zero_init=False,
                 generator=None, name=None):
        super().__init__(name)
        self.in_features, self.out_features = in_features, out_features
        shape = (out_features, in_features)
        w = torch.zeros(shape) if zero_init else _he_normal(shape, in_features, generator)
        if weight_norm:
            self.wn = WeightNorm(w)
        else:
            self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x):
        self._check_channels(x, self.in_features, dim=x.dim() - 1)
        w = self.wn() if hasattr(self, "wn") else self.weight
        return F.linear(x, w, self.bias)


class Projection(Dense):
    """Learned linear map of a vector to ``channels`` feature maps of ``size`` x ``size``."""

    def __init__(self, in_features, channels, size=32, generator=None, name=None):
        super().__init__(in_features, channels * size * size, generator=generator, name=name)
        self.channels, self.size = channels, size

    def forward(self, x):
        return super().forward(x).reshape(-1, self.channels, self.size, self.size)


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, name=None):
        super().__init__(name)
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x):
        self._check_channels(x, self.channels)
        # running variance tracks the unbiased estimate; normalization uses the biased one
        return F.batch_norm(x, self.running_mean, self.running_var, self.gamma, self.beta,
                            training=self.training, momentum=self.momentum, eps=self.eps)


class LeakyReLU(Layer):
    def __init__(self, slope=LRELU_SLOPE, name=None):
        super().__init__(name)
        self.slope = slope

    def forward(self, x):
        return F.leaky_relu(x, self.slope)


class Sigmoid(Layer):
    def forward(self, x):
        return torch.sigmoid(x)


class Dropout(Layer):
    """Inverted dropout; masks come from ``generator`` so the stream can be seeded and saved."""

    def __init__(self, p=0.5, generator=None, name=None):
        super().__init__(name)
        self.p = p
        self.generator = generator

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.p
        return x * keep.to(x.dtype) / (1.0 - self.p)


class MaxPool2d(Layer):
    def __init__(self, size=2, name=None):
        super().__init__(name)
        self.size = size

    def forward(self, x):
        if x.shape[-1] % self.size or x.shape[-2] % self.size:
            raise DimensionError(f"layer {self.name!r}: spatial size {tuple(x.shape[-2:])} "
                                 f"not divisible by {self.size}", layer=self.name)
        return F.max_pool2d(x, self.size)


class Upsample2x(Layer):
    """Nearest-neighbour upsampling by two."""

    def forward(self, x):
        return x.repeat_interleave(2, dim=2).repeat_interleave(2, dim=3)


class GlobalAvgPool(Layer):
    def forward(self, x):
        return x.mean(dim=(2, 3))


class Sequential(Layer):
    def __init__(self, *layers, name=None):
        super().__init__(name)
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def conv_block(in_ch, out_ch, kernel=3, stride=1, batch_norm=False, weight_norm=False,
               generator=None, name=None):
    """conv -> [batchNorm] -> LReLU(0.2), the row type used throughout the architecture tables."""
    layers = [Conv2d(in_ch, out_ch, kernel, stride, weight_norm=weight_norm,
                     bias=not batch_norm, generator=generator)]
    if batch_norm:
        layers.append(BatchNorm2d(out_ch))
    layers.append(LeakyReLU())
    return Sequential(*layers, name=name)


def assign_names(module: nn.Module, prefix: str = "") -> None:
    """Give every :class:`Layer` inside ``module`` its qualified attribute path as name."""
    for path, sub in module.named_modules():
        if isinstance(sub, Layer):
            sub.name = ".".join(p for p in (prefix, path) if p) or type(sub).__name__.lower()
