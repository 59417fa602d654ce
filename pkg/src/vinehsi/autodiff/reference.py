"""Slow reference implementations and a finite-difference gradient checker."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .ops import _pad_amounts, mul, total
from .tensor import Tensor, no_grad


def conv2d_naive(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
                 stride: int = 1, padding: str = "valid") -> np.ndarray:
    """Direct-sum cross-correlation with explicit loops."""
    n, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    (pt, pb), (pl, pr) = _pad_amounts(h, w, kh, kw, stride, padding)
    xp = np.pad(x.astype(np.float64), ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    ho = (h + pt + pb - kh) // stride + 1
    wo = (w + pl + pr - kw) // stride + 1
    out = np.zeros((n, ho, wo, cout))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for co in range(cout):
                    acc = 0.0 if bias is None else float(bias[co])
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(cin):
                                acc += xp[b, i * stride + di, j * stride + dj, ci] * kernel[di, dj, ci, co]
                    out[b, i, j, co] = acc
    return out


def max_pool_naive(x: np.ndarray, size: int = 3, stride: int = 2, padding: str = "same") -> np.ndarray:
    n, h, w, c = x.shape
    (pt, pb), (pl, pr) = _pad_amounts(h, w, size, size, stride, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    ho = (h + pt + pb - size) // stride + 1
    wo = (w + pl + pr - size) // stride + 1
    out = np.empty((n, ho, wo, c), dtype=x.dtype)
    for i in range(ho):
        for j in range(wo):
            out[:, i, j, :] = xp[:, i * stride:i * stride + size, j * stride:j * stride + size, :].max(axis=(1, 2))
    return out


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||) over the whole tensor; 0 when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def tensor_gradient_errors(fn: Callable[[], Tensor], tensors: dict[str, Tensor], seed: int = 0,
                           eps: float = 1e-6) -> dict[str, float]:
    """Relative error of reverse-mode vs central differences for existing tensors.

    ``fn()`` may return any shape; it is reduced to a scalar by a fixed random
    projection so that every output entry is exercised.  ``fn`` must be
    deterministic (reseed any dropout generator inside it).
    """
    for t in tensors.values():
        t.requires_grad = True
        t.grad = None
    out = fn()
    direction = np.random.default_rng(seed).normal(size=out.shape).astype(out.dtype)
    total(mul(out, direction)).backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}

    def value() -> float:
        with no_grad():
            return float(np.sum(fn().data.astype(np.float64) * direction))

    return {k: relative_error(analytic[k], numeric_grad(value, t.data, eps)) for k, t in tensors.items()}


def gradient_errors(fn: Callable[..., Tensor], inputs: dict[str, np.ndarray], seed: int = 0,
                    eps: float = 1e-6) -> dict[str, float]:
    """:func:`tensor_gradient_errors` for a function of fresh tensors built from ``inputs``."""
    tensors = {k: Tensor(np.array(v), requires_grad=True, name=k) for k, v in inputs.items()}
    return tensor_gradient_errors(lambda: fn(**tensors), tensors, seed, eps)
