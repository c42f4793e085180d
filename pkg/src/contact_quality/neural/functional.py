"""Forward/backward kernels on dense numpy arrays.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Layout is channels-first:
``(N, C, D, H, W)`` for volumes, ``(N, F)`` for flat features.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# --------------------------------------------------------------------------
# convolution


def _im2col(xp, k, out_dims):
    """``(N*D'*H'*W', C*k^3)`` patch matrix of an already padded input."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))  # (N, C, D', H', W', k, k, k)
    return win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * int(np.prod(out_dims)), c * k ** 3)


def _correlate(xp, w, out_dims):
    n = xp.shape[0]
    o, k = w.shape[0], w.shape[2]
    cols = _im2col(xp, k, out_dims)
    out = cols @ w.reshape(o, -1).T  # (N*D'*H'*W', O)
    return out.reshape((n,) + tuple(out_dims) + (o,)).transpose(0, 4, 1, 2, 3), cols


def conv3d_forward(x, w, b, pad: int):
    """Stride-1 cross-correlation with zero padding and per-channel bias."""
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d expects 5-D input and kernels, got {x.shape}, {w.shape}")
    n, c, d, h, wd = x.shape
    o, c2, k, k2, k3 = w.shape
    if c != c2 or not k == k2 == k3:
        raise ShapeError(f"kernel {w.shape} incompatible with input {x.shape}")
    if b.shape != (o,):
        raise ShapeError(f"bias shape {b.shape} != ({o},)")
    if min(d, h, wd) + 2 * pad < k:
        raise ShapeError("input smaller than kernel after padding")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad))) if pad else x
    dims = (d + 2 * pad - k + 1, h + 2 * pad - k + 1, wd + 2 * pad - k + 1)
    out, cols = _correlate(xp, w, dims)
    out = np.ascontiguousarray(out) + b[None, :, None, None, None]
    return out, (cols, w, pad, x.shape)


def conv3d_backward(dout, cache, need_input_grad: bool = True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when not requested.

    The input gradient is the full correlation of ``dout`` with the
    spatially flipped, channel-transposed kernels.
    """
    cols, w, pad, xshape = cache
    o, k = w.shape[0], w.shape[2]
    db = dout.sum(axis=(0, 2, 3, 4))
    dflat = dout.transpose(0, 2, 3, 4, 1).reshape(-1, o)
    dw = (dflat.T @ cols).reshape(w.shape)
    if not need_input_grad:
        return None, dw, db
    full = k - 1 - pad
    if full < 0:
        raise ShapeError("padding larger than kernel - 1 is not supported in backward")
    dp = np.pad(dout, ((0, 0), (0, 0), (full, full), (full, full), (full, full)))
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    dx, _ = _correlate(dp, wt, xshape[2:])
    return np.ascontiguousarray(dx), dw, db


# --------------------------------------------------------------------------
# pooling


def maxpool3d_forward(x):
    """2x2x2 max pooling with stride 2; ties resolve to the lowest in-window index."""
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"maxpool3d needs even spatial dims, got {x.shape[2:]}")
    win = (x.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
           .transpose(0, 1, 2, 4, 6, 3, 5, 7)
           .reshape(n, c, d // 2, h // 2, w // 2, 8))
    arg = win.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool3d_backward(dout, cache):
    shape, arg = cache
    n, c, d, h, w = shape
    mask = np.zeros(arg.shape + (8,), dtype=dout.dtype)
    np.put_along_axis(mask, arg[..., None], dout[..., None], axis=-1)
    return (mask.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(shape))


# --------------------------------------------------------------------------
# batch norm


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training: bool,
                      momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Per-channel normalisation over every axis but 1.

    In training mode the running statistics are updated in place with
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        if x.shape[0] < 2:
            raise ShapeError("batch norm in training mode needs a batch of at least 2")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out.astype(x.dtype, copy=False), (xhat, gamma, inv_std, axes, bshape, training)


def batchnorm_backward(dout, cache):
    xhat, gamma, inv_std, axes, bshape, training = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(bshape)
    if not training:
        return dxhat * inv_std.reshape(bshape), dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = (inv_std.reshape(bshape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(bshape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
    )
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# dense, activations


def dense_forward(x, w, b):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"dense: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w.T + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def dropout_forward(x, rate: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``; identity in eval."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dout, keep):
    return dout if keep is None else dout * keep


# --------------------------------------------------------------------------
# output heads


def _label_index(labels, n_classes):
    idx = np.asarray(labels, dtype=np.int64) - 1
    if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
        raise ValueError(f"labels must be in 1..{n_classes}")
    return idx


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean categorical cross-entropy over the batch; labels are 1-based.

    Returns ``(loss, dlogits)`` with ``dlogits = (softmax - onehot) / N``.
    """
    n, k = logits.shape
    idx = _label_index(labels, k)
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), idx]))
    grad = softmax(logits)
    grad[np.arange(n), idx] -= 1.0
    return loss, grad / n


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_normalized(logits):
    s = _sigmoid(logits)
    return s / s.sum(axis=1, keepdims=True)


def sigmoid_cross_entropy(logits, labels):
    """Cross-entropy on per-class sigmoids renormalised to sum to one."""
    n, k = logits.shape
    idx = _label_index(labels, k)
    s = _sigmoid(logits)
    total = s.sum(axis=1, keepdims=True)
    p = s / total
    loss = float(-np.mean(np.log(p[np.arange(n), idx])))
    # d(-log p_y)/dz_j = s_j (1 - s_j) / S - [j == y] (1 - s_y)
    grad = s * (1.0 - s) / total
    grad[np.arange(n), idx] -= 1.0 - s[np.arange(n), idx]
    return loss, grad / n
