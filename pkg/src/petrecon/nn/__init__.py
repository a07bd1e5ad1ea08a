"""Differentiable-operator core: layers, losses, optimizer, checkpoints."""

from .tensorops import (
    ShapeError,
    conv2d,
    conv2d_backward,
    deconv2d,
    deconv2d_backward,
    batchnorm2d,
    batchnorm2d_backward,
    leaky_relu,
    leaky_relu_backward,
    relu,
    relu_backward,
    fully_connected,
    fully_connected_backward,
)
from .losses import (
    mse_loss,
    mse_loss_grad,
    l1_loss,
    l1_loss_grad,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_grad,
    one_hot,
)
from .layers import (
    Param,
    Conv2d,
    Deconv2d,
    BatchNorm2d,
    Activation,
    Linear,
    ResidualBlock,
    WEIGHT_INIT_STD,
)
from .adam import Adam
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

__all__ = [
    "ShapeError",
    "conv2d", "conv2d_backward",
    "deconv2d", "deconv2d_backward",
    "batchnorm2d", "batchnorm2d_backward",
    "leaky_relu", "leaky_relu_backward",
    "relu", "relu_backward",
    "fully_connected", "fully_connected_backward",
    "mse_loss", "mse_loss_grad",
    "l1_loss", "l1_loss_grad",
    "softmax", "softmax_cross_entropy", "softmax_cross_entropy_grad",
    "one_hot",
    "Param", "Conv2d", "Deconv2d", "BatchNorm2d", "Activation", "Linear",
    "ResidualBlock", "WEIGHT_INIT_STD",
    "Adam",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
