"""Low-level differentiable array operations.

Every forward function here is a plain ndarray -> ndarray map with a matching
``*_backward`` that returns gradients with respect to each input. Image
tensors are NCHW, row-major. The code is dtype-generic: training runs in
float32, and the finite-difference test suites run the identical code paths
in float64.

Convolutions are implemented as im2col + matmul; the transposed convolution
is the exact adjoint of the strided convolution (col2im of a matmul), so its
backward pass with respect to the input is an ordinary convolution.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "conv2d",
    "conv2d_backward",
    "deconv2d",
    "deconv2d_backward",
    "batchnorm2d",
    "batchnorm2d_backward",
    "leaky_relu",
    "leaky_relu_backward",
    "relu",
    "relu_backward",
    "fully_connected",
    "fully_connected_backward",
]


class ShapeError(ValueError):
    """An operand's dimensions violate an operator contract."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# im2col / col2im
# ---------------------------------------------------------------------------

def _out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    _check(span >= 0 and span % stride == 0,
           f"spatial size {size} incompatible with kernel={kernel}, "
           f"stride={stride}, padding={padding}")
    return span // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Unfold NCHW into (N, C*k*k, OH*OW) patch columns."""
    n, c, h, w = x.shape
    oh = _out_size(h, kernel, stride, padding)
    ow = _out_size(w, kernel, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kernel, kernel, oh, ow), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, i, j] = x[:, :, i:i + stride * (oh - 1) + 1:stride,
                                 j:j + stride * (ow - 1) + 1:stride]
    return cols.reshape(n, c * kernel * kernel, oh * ow)


def _col2im(cols: np.ndarray, out_shape: tuple[int, int, int, int],
            kernel: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patch columns back to NCHW."""
    n, c, h, w = out_shape
    oh = _out_size(h, kernel, stride, padding)
    ow = _out_size(w, kernel, stride, padding)
    cols = cols.reshape(n, c, kernel, kernel, oh, ow)
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            padded[:, :, i:i + stride * (oh - 1) + 1:stride,
                   j:j + stride * (ow - 1) + 1:stride] += cols[:, :, i, j]
    if padding:
        return np.ascontiguousarray(
            padded[:, :, padding:padding + h, padding:padding + w])
    return padded


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int = 1, padding: int = 1) -> np.ndarray:
    """Cross-correlation of NCHW ``x`` with weight (C_out, C_in, k, k).

    (k=4, stride=2, padding=1) halves even spatial sizes, (k=3, stride=1,
    padding=1) preserves them.
    """
    _check(x.ndim == 4, f"conv2d input must be NCHW, got shape {x.shape}")
    _check(weight.ndim == 4, f"conv2d weight must be 4D, got shape {weight.shape}")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    _check(kh == kw, f"square kernels only, got {kh}x{kw}")
    _check(c == c_in, f"conv2d expects {c_in} input channels, got {c}")
    _check(h >= kh and w >= kw,
           f"input {h}x{w} smaller than kernel {kh}x{kw}")
    _check(bias.shape == (c_out,),
           f"bias shape {bias.shape} does not match {c_out} output channels")
    oh = _out_size(h, kh, stride, padding)
    ow = _out_size(w, kw, stride, padding)
    cols = _im2col(x, kh, stride, padding)
    flat_w = weight.reshape(c_out, c_in * kh * kw)
    out = np.matmul(flat_w, cols) + bias[:, None]
    return out.reshape(n, c_out, oh, ow)


def conv2d_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray,
                    stride: int = 1, padding: int = 1,
                    cols: np.ndarray | None = None):
    """Gradients of :func:`conv2d` w.r.t. input, weight and bias.

    ``cols`` may pass the im2col buffer cached from the forward pass.
    """
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if cols is None:
        cols = _im2col(x, kh, stride, padding)
    dy_flat = dy.reshape(n, c_out, -1)
    dw = np.matmul(dy_flat, cols.transpose(0, 2, 1)).sum(axis=0)
    dw = dw.reshape(weight.shape)
    db = dy.sum(axis=(0, 2, 3))
    flat_w = weight.reshape(c_out, c_in * kh * kw)
    dcols = np.matmul(flat_w.T, dy_flat)
    dx = _col2im(dcols, x.shape, kh, stride, padding)
    return dx, dw, db


# ---------------------------------------------------------------------------
# Transposed convolution
# ---------------------------------------------------------------------------

def deconv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
             stride: int = 2, padding: int = 1) -> np.ndarray:
    """Transposed convolution with weight (C_in, C_out, k, k).

    Output spatial size is (H-1)*stride - 2*padding + k, i.e. 2H for the
    (k=4, stride=2, padding=1) up-sampling block. Implemented as the adjoint
    of :func:`conv2d`, so ``<conv(x), u> == <x, deconv(u)>`` for matching
    weights.
    """
    _check(x.ndim == 4, f"deconv2d input must be NCHW, got shape {x.shape}")
    _check(weight.ndim == 4, f"deconv2d weight must be 4D, got shape {weight.shape}")
    n, c, h, w = x.shape
    c_in, c_out, kh, kw = weight.shape
    _check(kh == kw, f"square kernels only, got {kh}x{kw}")
    _check(c == c_in, f"deconv2d expects {c_in} input channels, got {c}")
    _check(bias.shape == (c_out,),
           f"bias shape {bias.shape} does not match {c_out} output channels")
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    _check(oh > 0 and ow > 0, f"degenerate output {oh}x{ow} from input {h}x{w}")
    flat_w = weight.reshape(c_in, c_out * kh * kw)
    cols = np.matmul(flat_w.T, x.reshape(n, c_in, h * w))
    out = _col2im(cols, (n, c_out, oh, ow), kh, stride, padding)
    return out + bias[None, :, None, None]


def deconv2d_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray,
                      stride: int = 2, padding: int = 1):
    """Gradients of :func:`deconv2d` w.r.t. input, weight and bias.

    The input gradient is an ordinary strided convolution of ``dy`` with the
    same kernel (layout transposed), mirroring conv/deconv adjointness.
    """
    n, c_in, h, w = x.shape
    _, c_out, kh, kw = weight.shape
    dcols = _im2col(dy, kh, stride, padding)
    flat_w = weight.reshape(c_in, c_out * kh * kw)
    dx = np.matmul(flat_w, dcols).reshape(x.shape)
    x_flat = x.reshape(n, c_in, h * w)
    dw = np.matmul(x_flat, dcols.transpose(0, 2, 1)).sum(axis=0)
    dw = dw.reshape(weight.shape)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

def batchnorm2d(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel batch normalization over (N, H, W).

    Returns ``(y, cache, new_running_mean, new_running_var)``. In training
    mode the batch statistics normalize and the running statistics are
    refreshed (unbiased variance); in eval mode the running statistics
    normalize and are returned unchanged.
    """
    _check(x.ndim == 4, f"batchnorm2d input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    _check(gamma.shape == (c,) and beta.shape == (c,),
           f"affine params must have shape ({c},)")
    if training:
        m = n * h * w
        if m < 2:
            raise ShapeError(
                f"batch population {m} too small for batch statistics "
                "(need at least 2 elements per channel)")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        new_rm = (1.0 - momentum) * running_mean + momentum * mean
        new_rv = (1.0 - momentum) * running_var + momentum * var * m / (m - 1)
        cache = (True, xhat, inv_std, gamma)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        new_rm, new_rv = running_mean, running_var
        cache = (False, xhat, inv_std, gamma)
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, cache, new_rm, new_rv


def batchnorm2d_backward(dy: np.ndarray, cache):
    """Gradients of :func:`batchnorm2d` w.r.t. input, gamma and beta.

    Training mode propagates through the batch statistics themselves.
    """
    trained, xhat, inv_std, gamma = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    if not trained:
        dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta
    n, c, h, w = dy.shape
    m = n * h * w
    sum_dxhat = dxhat.sum(axis=(0, 2, 3))
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (inv_std[None, :, None, None] / m) * (
        m * dxhat
        - sum_dxhat[None, :, None, None]
        - xhat * sum_dxhat_xhat[None, :, None, None])
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    """Elementwise max(x, slope*x) with slope in [0, 1)."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in [0, 1), got {slope}")
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float) -> np.ndarray:
    # subgradient at 0 takes the negative branch
    return dy * np.where(x > 0, 1.0, slope).astype(dy.dtype)


def relu(x: np.ndarray) -> np.ndarray:
    return leaky_relu(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return leaky_relu_backward(dy, x, 0.0)


# ---------------------------------------------------------------------------
# Fully connected
# ---------------------------------------------------------------------------

def fully_connected(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map (N, D) @ (D, K) + (K,)."""
    _check(x.ndim == 2, f"fully_connected input must be 2D, got shape {x.shape}")
    _check(weight.ndim == 2 and x.shape[1] == weight.shape[0],
           f"fully_connected expects input dim {weight.shape[0]}, "
           f"got {x.shape[1]}")
    _check(bias.shape == (weight.shape[1],),
           f"bias shape {bias.shape} does not match output dim {weight.shape[1]}")
    return x @ weight + bias


def fully_connected_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray):
    dx = dy @ weight.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db
