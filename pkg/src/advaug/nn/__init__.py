"""Layer kit, optimizer, gradient checking and checkpoint container."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, check_module, grad_check
from .layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    Layer,
    LeakyReLU,
    MaxPool2d,
    Projection,
    Sequential,
    Sigmoid,
    Upsample2x,
    WeightNorm,
    assign_names,
    conv_block,
    layer_backward,
    layer_forward,
)
from .optim import Adam

__all__ = [
    "Adam", "BatchNorm2d", "Conv2d", "Dense", "Dropout", "GlobalAvgPool", "GradCheckReport",
    "Layer", "LeakyReLU", "MaxPool2d", "Projection", "Sequential", "Sigmoid", "Upsample2x",
    "WeightNorm", "assign_names", "check_module", "conv_block", "grad_check", "layer_backward",
    "layer_forward", "load_checkpoint", "save_checkpoint",
]
