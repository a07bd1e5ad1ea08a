"""Stateful layer wrappers around the functional operators.

Each layer owns its parameters, caches what its forward pass needs, and
accumulates parameter gradients on backward. Weights draw from a normal
distribution with std 0.02, biases start at zero, batch-norm affine starts
at identity.
"""
from __future__ import annotations

import numpy as np

from . import tensorops as ops

__all__ = ["Param", "Conv2d", "Deconv2d", "BatchNorm2d", "Activation",
           "Linear", "ResidualBlock", "WEIGHT_INIT_STD"]

WEIGHT_INIT_STD = 0.02


class Param:
    """A named tensor with an optional gradient buffer.

    ``trainable=False`` marks state that is checkpointed and transferred but
    never touched by the optimizer (batch-norm running statistics).
    """

    __slots__ = ("name", "data", "grad", "trainable")

    def __init__(self, name: str, data: np.ndarray, trainable: bool = True):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data) if trainable else None
        self.trainable = trainable

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Param({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


class Conv2d:
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, padding: int, name: str, rng: np.random.Generator,
                 dtype=np.float32):
        shape = (out_channels, in_channels, kernel, kernel)
        self.w = Param(f"{name}.w", rng.normal(0.0, WEIGHT_INIT_STD, shape).astype(dtype))
        self.b = Param(f"{name}.b", np.zeros(out_channels, dtype=dtype))
        self.stride = stride
        self.padding = padding
        self._x = None
        self._cols = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[1] != self.w.data.shape[1]:
            raise ops.ShapeError(
                f"{self.w.name}: expected {self.w.data.shape[1]} input "
                f"channels, got {x.shape[1]}")
        kh = self.w.data.shape[2]
        self._x = x
        self._cols = ops._im2col(x, kh, self.stride, self.padding)
        n = x.shape[0]
        c_out = self.w.data.shape[0]
        oh = ops._out_size(x.shape[2], kh, self.stride, self.padding)
        ow = ops._out_size(x.shape[3], kh, self.stride, self.padding)
        flat_w = self.w.data.reshape(c_out, -1)
        out = np.matmul(flat_w, self._cols) + self.b.data[:, None]
        return out.reshape(n, c_out, oh, ow)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw, db = ops.conv2d_backward(dy, self._x, self.w.data,
                                         self.stride, self.padding,
                                         cols=self._cols)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def tensors(self) -> list[Param]:
        return [self.w, self.b]


class Deconv2d:
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, padding: int, name: str, rng: np.random.Generator,
                 dtype=np.float32):
        shape = (in_channels, out_channels, kernel, kernel)
        self.w = Param(f"{name}.w", rng.normal(0.0, WEIGHT_INIT_STD, shape).astype(dtype))
        self.b = Param(f"{name}.b", np.zeros(out_channels, dtype=dtype))
        self.stride = stride
        self.padding = padding
        self._x = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        return ops.deconv2d(x, self.w.data, self.b.data, self.stride, self.padding)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw, db = ops.deconv2d_backward(dy, self._x, self.w.data,
                                           self.stride, self.padding)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def tensors(self) -> list[Param]:
        return [self.w, self.b]


class BatchNorm2d:
    def __init__(self, channels: int, name: str, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float32):
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = Param(f"{name}.running_mean",
                                  np.zeros(channels, dtype=dtype), trainable=False)
        self.running_var = Param(f"{name}.running_var",
                                 np.ones(channels, dtype=dtype), trainable=False)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        y, cache, new_rm, new_rv = ops.batchnorm2d(
            x, self.gamma.data, self.beta.data,
            self.running_mean.data, self.running_var.data,
            training=training, momentum=self.momentum, eps=self.eps)
        self._cache = cache
        if training:
            self.running_mean.data = new_rm.astype(x.dtype)
            self.running_var.data = new_rv.astype(x.dtype)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dgamma, dbeta = ops.batchnorm2d_backward(dy, self._cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx

    def tensors(self) -> list[Param]:
        return [self.gamma, self.beta, self.running_mean, self.running_var]


class Activation:
    """Leaky ReLU with configurable negative slope; slope 0 is plain ReLU."""

    def __init__(self, slope: float = 0.0):
        if not 0.0 <= slope < 1.0:
            raise ValueError(f"activation slope must be in [0, 1), got {slope}")
        self.slope = slope
        self._x = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        return ops.leaky_relu(x, self.slope)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.leaky_relu_backward(dy, self._x, self.slope)

    def tensors(self) -> list[Param]:
        return []


class Linear:
    def __init__(self, in_features: int, out_features: int, name: str,
                 rng: np.random.Generator, dtype=np.float32):
        self.w = Param(f"{name}.w",
                       rng.normal(0.0, WEIGHT_INIT_STD, (in_features, out_features)).astype(dtype))
        self.b = Param(f"{name}.b", np.zeros(out_features, dtype=dtype))
        self._x = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        return ops.fully_connected(x, self.w.data, self.b.data)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw, db = ops.fully_connected_backward(dy, self._x, self.w.data)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def tensors(self) -> list[Param]:
        return [self.w, self.b]


class ResidualBlock:
    """Two 3x3 convolutions with an identity skip.

    y = relu(x + conv2(relu(conv1(x)))); channel count is preserved.
    """

    def __init__(self, channels: int, name: str, rng: np.random.Generator,
                 dtype=np.float32):
        self.conv1 = Conv2d(channels, channels, 3, 1, 1, f"{name}.conv1", rng, dtype)
        self.act1 = Activation(0.0)
        self.conv2 = Conv2d(channels, channels, 3, 1, 1, f"{name}.conv2", rng, dtype)
        self.act_out = Activation(0.0)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        h = self.act1.forward(self.conv1.forward(x, training), training)
        s = x + self.conv2.forward(h, training)
        return self.act_out.forward(s, training)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        ds = self.act_out.backward(dy)
        dh = self.conv2.backward(ds)
        dx = self.conv1.backward(self.act1.backward(dh))
        return dx + ds

    def tensors(self) -> list[Param]:
        return self.conv1.tensors() + self.conv2.tensors()
