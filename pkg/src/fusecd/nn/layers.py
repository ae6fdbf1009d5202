"""Convolution and activation primitives with exact reverse-mode gradients.

Feature maps are (channels, rows, cols) float64 arrays for a single
sample.  Convolutions use 3x3 kernels (configurable), zero padding of
ksize//2 and either stride 1 (flat conv) or stride s (down-convolution).
The up-convolution is defined as the exact adjoint of the down-convolution
with a shared kernel layout (in_ch, out_ch, kh, kw), which fixes the
transposed-convolution convention and makes the dot-product identity
between the two testable.
"""

from __future__ import annotations

import numpy as np


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


def conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """out[o, h, w] = sum_{c,di,dj} K[o,c,di,dj] * xpad[c, s*h+di, s*w+dj] + b[o]."""
    cout, cin, kh, kw = kernel.shape
    c, hh, ww = x.shape
    if c != cin:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    if hh % stride or ww % stride:
        raise ValueError(f"spatial dims ({hh},{ww}) not divisible by stride {stride}")
    ho, wo = hh // stride, ww // stride
    p = kh // 2
    xp = _pad(x, p)
    out = np.zeros((cout, ho * wo))
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
            out += kernel[:, :, di, dj] @ xs.reshape(cin, -1)
    out = out.reshape(cout, ho, wo)
    return out + bias[:, None, None]


def conv_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray, stride: int = 1):
    """Gradients of a scalar loss through conv_forward.

    Returns (grad_x, grad_kernel, grad_bias).
    """
    cout, cin, kh, kw = kernel.shape
    c, hh, ww = x.shape
    ho, wo = hh // stride, ww // stride
    p = kh // 2
    xp = _pad(x, p)
    g = grad_out.reshape(cout, -1)
    gk = np.empty_like(kernel)
    gp = np.zeros((cin, hh + 2 * p, ww + 2 * p))
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
            gk[:, :, di, dj] = g @ xs.reshape(cin, -1).T
            gp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += (
                kernel[:, :, di, dj].T @ g
            ).reshape(cin, ho, wo)
    gx = gp[:, p : p + hh, p : p + ww] if p else gp
    return gx, gk, grad_out.sum(axis=(1, 2))


def _conv_adjoint_apply(y: np.ndarray, kernel: np.ndarray, stride: int, out_hw: tuple[int, int]) -> np.ndarray:
    """Apply the adjoint of conv_forward(.; kernel, stride) to y."""
    cout, cin, kh, kw = kernel.shape
    ho, wo = y.shape[1], y.shape[2]
    hh, ww = out_hw
    p = kh // 2
    g = y.reshape(cout, -1)
    gp = np.zeros((cin, hh + 2 * p, ww + 2 * p))
    for di in range(kh):
        for dj in range(kw):
            gp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += (
                kernel[:, :, di, dj].T @ g
            ).reshape(cin, ho, wo)
    return gp[:, p : p + hh, p : p + ww] if p else gp


def up_conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 2) -> np.ndarray:
    """Transposed convolution: the adjoint of a stride-s down-convolution.

    Kernel layout is (in_ch, out_ch, kh, kw); a shared array therefore
    serves both the down map (in->out read as (cout,cin)) and its adjoint.
    """
    cin, cout, kh, kw = kernel.shape
    c, hh, ww = x.shape
    if c != cin:
        raise ValueError(f"up_conv expects {cin} input channels, got {c}")
    out = _conv_adjoint_apply(x, kernel, stride, (hh * stride, ww * stride))
    return out + bias[:, None, None]


def up_conv_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray, stride: int = 2):
    """Gradients through up_conv_forward; returns (grad_x, grad_kernel, grad_bias)."""
    cin, cout, kh, kw = kernel.shape
    hh, ww = x.shape[1], x.shape[2]
    # adjoint of the adjoint: a plain strided convolution of the upstream grad
    gx = conv_forward(grad_out, kernel, np.zeros(cin), stride=stride)
    # bilinear in the kernel: gk[i,o,di,dj] = x_flat @ slice(pad(grad_out)).T
    p = kh // 2
    gp = _pad(grad_out, p)
    xf = x.reshape(cin, -1)
    gk = np.empty_like(kernel)
    for di in range(kh):
        for dj in range(kw):
            gs = gp[:, di : di + stride * hh : stride, dj : dj + stride * ww : stride]
            gk[:, :, di, dj] = xf @ gs.reshape(cout, -1).T
    return gx, gk, grad_out.sum(axis=(1, 2))


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, grad_out: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, grad_out, slope * grad_out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, grad_out, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # y is the forward output
    return grad_out * y * (1.0 - y)
