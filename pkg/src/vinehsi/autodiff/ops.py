"""Differentiable operations on :class:`Tensor` (NHWC layout for images)."""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def total(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.asarray(a.data.sum()), (a,),
                       lambda g: a.accumulate(np.broadcast_to(g, a.shape)))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return make_result(a.data @ b.data, (a, b), backward)


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.swapaxes(a.data, -1, -2), (a,),
                       lambda g: a.accumulate(np.swapaxes(g, -1, -2)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: a.accumulate(g.reshape(a.shape)))


def flatten(a) -> Tensor:
    a = as_tensor(a)
    return reshape(a, (a.shape[0], -1))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(g[tuple(index)])

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def leaky_relu(x, alpha: float = 0.1) -> Tensor:
    x = as_tensor(x)
    pos = x.data >= 0
    slope = np.where(pos, 1.0, alpha).astype(x.dtype)
    return make_result(x.data * slope, (x,), lambda g: x.accumulate(g * slope))


def relu(x) -> Tensor:
    return leaky_relu(x, 0.0)


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Scale to unit Euclidean norm along ``axis``; all-zero vectors stay zero."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    inv = np.zeros_like(norm)
    np.divide(1.0, norm, out=inv, where=norm > 0)
    y = x.data * inv

    def backward(g):
        x.accumulate((g - y * (g * y).sum(axis=axis, keepdims=True)) * inv)

    return make_result(y, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return make_result(y, (x,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of ``-ln softmax(logits)[label]`` (integer labels)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.size != n:
        raise ValueError(f"{labels.size} labels for {n} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        logits.accumulate(grad * (g / n))

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def dense(x, weight, bias) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ weight.data.T)
        weight.accumulate(x.data.T @ g)
        bias.accumulate(g.sum(axis=0))

    return make_result(x.data @ weight.data + bias.data, (x, weight, bias), backward)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: x.accumulate(g * keep))


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.99, eps: float = 1e-3) -> Tensor:
    """Per-channel (last axis) normalization; updates running stats in place when training."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch normalization in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.astype(x.dtype)) * inv_std
    count = x.data.size // x.shape[-1]

    def backward(g):
        gamma.accumulate((g * xhat).sum(axis=axes))
        beta.accumulate(g.sum(axis=axes))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data
        if training:
            gx = (inv_std / count) * (count * gxhat - gxhat.sum(axis=axes)
                                      - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv_std
        x.accumulate(gx)

    return make_result(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Padding so that out = ceil(size / stride); the extra pixel goes to the bottom/right."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    pad = sum(same_padding(size, kernel, stride)) if padding == "same" else 0
    return (size + pad - kernel) // stride + 1


def _pad_amounts(h, w, kh, kw, stride, padding):
    if padding == "same":
        return same_padding(h, kh, stride), same_padding(w, kw, stride)
    if padding == "valid":
        return (0, 0), (0, 0)
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather (N, Ho, Wo, kh, kw, C) patches from a padded NHWC array."""
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * (ho - 1) + 1:stride,
                                        j:j + stride * (wo - 1) + 1:stride, :]
    return cols


def conv2d(x, kernel, bias=None, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-D cross-correlation, NHWC input and (kh, kw, Cin, Cout) kernel, via im2col."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ValueError(f"kernel expects {kcin} input channels, input has {cin}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    (pt, pb), (pl, pr) = _pad_amounts(h, w, kh, kw, stride, padding)
    hp, wp = h + pt + pb, w + pl + pr
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x.data
    if kh == kw == 1:
        cols = np.ascontiguousarray(xp[:, :stride * (ho - 1) + 1:stride, :stride * (wo - 1) + 1:stride, :])
    else:
        cols = _windows(xp, kh, kw, stride, ho, wo)
    k = kh * kw * cin
    cols2 = cols.reshape(-1, k)
    w2 = kernel.data.reshape(k, cout)
    out = cols2 @ w2
    parents = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents = (x, kernel, bias)
    out = out.reshape(n, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        kernel.accumulate((cols2.T @ g2).reshape(kernel.shape))
        if bias is not None:
            bias.accumulate(g2.sum(axis=0))
        if not x.requires_grad:
            return
        gcols = (g2 @ w2.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros((n, hp, wp, cin), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * (ho - 1) + 1:stride,
                    j:j + stride * (wo - 1) + 1:stride, :] += gcols[:, :, :, i, j, :]
        x.accumulate(gxp[:, pt:pt + h, pl:pl + w, :])

    return make_result(out, parents, backward)


def max_pool2d(x, size: int = 3, stride: int = 2, padding: str = "same") -> Tensor:
    """Max pooling; the gradient goes to the first maximal element of each window."""
    x = as_tensor(x)
    n, h, w, c = x.shape
    (pt, pb), (pl, pr) = _pad_amounts(h, w, size, size, stride, padding)
    hp, wp = h + pt + pb, w + pl + pr
    ho, wo = (hp - size) // stride + 1, (wp - size) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    win = _windows(xp, size, size, stride, ho, wo).reshape(n, ho, wo, size * size, c)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(g):
        gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
        for idx in range(size * size):
            i, j = divmod(idx, size)
            gxp[:, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride, :] += np.where(arg == idx, g, 0)
        x.accumulate(gxp[:, pt:pt + h, pl:pl + w, :])

    return make_result(out, (x,), backward)
