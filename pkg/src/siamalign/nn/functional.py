"""Forward and backward kernels for the supported layer kinds.

Tensors are NHWC (batch, height, width, channels) for spatial layers and
(batch, features) for dense layers. Every ``*_forward`` returns
``(out, cache)`` and the matching ``*_backward`` consumes the cache.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Tensor shapes do not compose."""


def _same_pads(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k // 2


def conv2d_forward(x, kernels, bias=None, padding="same", stride=1):
    """2-D cross-correlation via im2col.

    ``kernels`` has shape (kh, kw, c_in, c_out). With ``padding="same"`` and
    stride 1 the spatial size is preserved; even kernel sizes pad one extra
    row/column at the bottom/right.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input, got shape {x.shape}")
    kh, kw, c_in, c_out = kernels.shape
    if x.shape[3] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, kernels expect {c_in}")
    if padding == "same":
        (pt, pb), (pl, pr) = _same_pads(kh), _same_pads(kw)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    n, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
    ho = (h + pt + pb - kh) // stride + 1
    wo = (w + pl + pr - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    cols = np.empty((n, ho, wo, kh, kw, c_in), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    cols2 = cols.reshape(n * ho * wo, kh * kw * c_in)
    out = cols2 @ kernels.reshape(kh * kw * c_in, c_out)
    if bias is not None:
        out += bias
    cache = (cols2, kernels, x.shape, (pt, pb, pl, pr), stride, (ho, wo))
    return out.reshape(n, ho, wo, c_out), cache


def conv2d_backward(dout, cache):
    """Return ``(dx, dkernels, dbias)``."""
    cols2, kernels, x_shape, (pt, pb, pl, pr), stride, (ho, wo) = cache
    kh, kw, c_in, c_out = kernels.shape
    n, h, w, _ = x_shape
    d2 = dout.reshape(-1, c_out)
    dk = (cols2.T @ d2).reshape(kernels.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ kernels.reshape(-1, c_out).T).reshape(n, ho, wo, kh, kw, c_in)
    dxp = np.zeros((n, h + pt + pb, w + pl + pr, c_in), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pt : pt + h, pl : pl + w, :]
    return dx, dk, db


def maxpool_forward(x, size=2, stride=2):
    """Non-overlapping max pooling; ragged edges are padded with -inf.

    The argmax within each window (first maximum on ties) is kept for the
    backward pass.
    """
    if size != stride:
        raise ValueError("only non-overlapping pooling (size == stride) is supported")
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects NHWC input, got shape {x.shape}")
    n, h, w, c = x.shape
    ho, wo = -(-h // size), -(-w // size)
    ph, pw = ho * size - h, wo * size - w
    xp = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)), constant_values=-np.inf) if (ph or pw) else x
    win = xp.reshape(n, ho, size, wo, size, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape, size)


def maxpool_backward(dout, cache):
    idx, x_shape, size = cache
    n, h, w, c = x_shape
    _, ho, wo, _ = dout.shape
    dwin = np.zeros((n, ho, wo, c, size * size), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dxp = dwin.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * size, wo * size, c)
    return dxp[:, :h, :w, :]


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(dout, mask):
    return np.where(mask, dout, 0).astype(dout.dtype, copy=False)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dout, out):
    return dout * out * (1.0 - out)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train", eps=1e-5, momentum=0.9):
    """Per-channel batch normalization over every axis but the last.

    In train mode the batch mean and (biased) variance are used and the
    running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    elif mode == "eval":
        mu, var = running_mean, running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    return out.astype(x.dtype, copy=False), (xhat, gamma, inv_std, mode, axes)


def batchnorm_backward(dout, cache):
    """Return ``(dx, dgamma, dbeta)``."""
    xhat, gamma, inv_std, mode, axes = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if mode == "eval":
        return dxhat * inv_std, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


def dense_forward(x, weight, bias=None):
    """Affine map ``W x + b`` applied row-wise; ``weight`` is (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input shape {x.shape} incompatible with weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        out += bias
    return out, (x, weight)


def dense_backward(dout, cache):
    """Return ``(dx, dweight, dbias)``; ``dweight`` is the summed outer product ``dout x input``."""
    x, weight = cache
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(dout, shape):
    return dout.reshape(shape)
