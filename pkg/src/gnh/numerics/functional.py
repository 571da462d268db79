"""Differentiable neural-network primitives on top of :mod:`tensor`.

Heavy ops (convolution, normalisation, softmax, resampling) are fused: the
forward pass and an analytic backward are written directly in numpy rather
than composed from elementwise nodes.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, _result, as_tensor, log, matmul, swapaxes


class DimensionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# -- activations ---------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    xd = x.data
    pos = xd > 0
    return _result(np.where(pos, xd, slope * xd), (x,),
                   lambda g: (np.where(pos, g, slope * g),))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _result(out, (x,), lambda g: (g * out * (1 - out),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))
    return _result(out, (x,), lambda g: (g * _sigmoid(xd),))


# -- linear algebra ------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y + bias if bias is not None else y


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; ``mask`` (broadcastable, True = keep) zeroes entries.

    A slice with every entry masked yields all zeros instead of NaN.
    """
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s == 0, 1, s)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _result(out.astype(x.dtype, copy=False), (x,), bw)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    q: (..., Tq, d), k: (..., Tk, d), v: (..., Tk, dv). ``mask`` is
    broadcastable to (..., Tq, Tk) with True marking usable keys.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("key and value token counts differ")
    logits = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax(logits, axis=-1, mask=mask), v)


# -- normalisation -----------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    gd = gamma.data

    def bw(g):
        dxhat = g * gd
        gx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return (gx, (g * xhat).sum(axis=red), g.sum(axis=red))
    return _result(xhat * gd + beta.data, (x, gamma, beta), bw)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalisation over (C/groups, *spatial) for input (B, C, *spatial)."""
    B, C = x.shape[:2]
    if C % groups:
        raise ConfigError(f"{C} channels not divisible by {groups} groups")
    spatial = x.shape[2:]
    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = (xc * rstd).reshape(x.shape)
    bshape = (1, C) + (1,) * len(spatial)
    gd = gamma.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        dxhat = (g * gd).reshape(B, groups, -1)
        xh = xhat.reshape(B, groups, -1)
        gx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                     - xh * (dxhat * xh).mean(-1, keepdims=True))
        return (gx.reshape(x.shape), (g * xhat).sum(axis=red), g.sum(axis=red))
    return _result(xhat * gd + beta.data.reshape(bshape), (x, gamma, beta), bw)


# -- convolution and resampling ----------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and (O, C, kh, kw) kernel, via im2col."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape}, {weight.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = weight.shape
    if C != Ck:
        raise DimensionError(f"input has {C} channels, kernel expects {Ck}")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < kh or Wp < kw:
        raise DimensionError(f"padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    s = stride
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    K, L = C * kh * kw, Ho * Wo
    if kh == kw == 1 and s == 1:
        cols = xp.reshape(B, C, L)
    else:
        xp = np.ascontiguousarray(xp)
        st = xp.strides
        win = as_strided(xp, (B, C, kh, kw, Ho, Wo),
                         (st[0], st[1], st[2], st[3], st[2] * s, st[3] * s), writeable=False)
        cols = win.reshape(B, K, L)
    wm = weight.data.reshape(O, K)
    out = (wm @ cols).reshape(B, O, Ho, Wo)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(B, O, L)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape) \
            if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = wm.T @ g2
            if kh == kw == 1 and s == 1:
                gxp = gcols.reshape(B, C, Hp, Wp)
            else:
                gcols = gcols.reshape(B, C, kh, kw, Ho, Wo)
                gxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += gcols[:, :, i, j]
            gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    return _result(out, parents, bw)


def patch_embed(x: Tensor, weight: Tensor, bias: Optional[Tensor], patch: int) -> Tensor:
    """Non-overlapping patch projection (a conv whose stride equals its size)."""
    if weight.shape[-1] != patch or weight.shape[-2] != patch:
        raise DimensionError("patch kernel must be patch x patch")
    if x.shape[-1] < patch or x.shape[-2] < patch:
        raise ConfigError(f"image {x.shape[-2:]} smaller than one {patch}px patch")
    return conv2d(x, weight, bias, stride=patch, pad=0)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    H, W = x.shape[-2:]
    if H % k or W % k:
        raise DimensionError(f"spatial dims {H}x{W} not divisible by pool size {k}")
    lead = x.shape[:-2]
    out = x.data.reshape(lead + (H // k, k, W // k, k)).mean(axis=(-3, -1))

    def bw(g):
        return (np.repeat(np.repeat(g, k, axis=-2), k, axis=-1) / (k * k),)
    return _result(out, (x,), bw)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic 1-D linear interpolation matrix, corners aligned."""
    A = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1 or n_in == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    rows = np.arange(n_out)
    np.add.at(A, (rows, i0), 1 - f)
    np.add.at(A, (rows, i1), f)
    return A


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling of the last two axes (corner samples preserved)."""
    if out_h < 1 or out_w < 1:
        raise DimensionError("output size must be at least 1x1")
    H, W = x.shape[-2:]
    if (H, W) == (out_h, out_w):
        return x
    Ah = interp_matrix(H, out_h, x.dtype)
    Aw = interp_matrix(W, out_w, x.dtype)
    out = Ah @ x.data @ Aw.T
    return _result(out, (x,), lambda g: (Ah.T @ g @ Aw,))


# -- sparse row operators ---------------------------------------------------------

def sparse_apply(S: sp.spmatrix, x: Tensor) -> Tensor:
    """Apply a constant sparse matrix to the rows of a 2-D tensor: ``S @ x``."""
    if x.ndim != 2 or S.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot apply {S.shape} operator to {x.shape}")
    S = S.tocsr()
    St = S.T.tocsr()
    out = np.asarray(S @ x.data, dtype=x.dtype)
    return _result(out, (x,), lambda g: (np.asarray(St @ g, dtype=g.dtype),))


def gather_rows(x: Tensor, idx: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """out[n] = sum_k weights[n, k] * x[idx[n, k]]; idx may be 1-D (one tap)."""
    idx = np.asarray(idx)
    if idx.ndim == 1:
        idx = idx[:, None]
    if weights is None:
        weights = np.ones(idx.shape)
    n, k = idx.shape
    S = sp.csr_matrix((np.asarray(weights, dtype=np.float64).ravel(),
                       (np.repeat(np.arange(n), k), idx.ravel())),
                      shape=(n, x.shape[0]))
    return sparse_apply(S, x)


def scatter_rows(x: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """Dense (n_rows, C) tensor with row ``idx[i]`` = ``x[i]`` and zeros elsewhere."""
    idx = np.asarray(idx)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("scatter_rows targets must be unique")
    S = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))),
                      shape=(n_rows, x.shape[0]))
    return sparse_apply(S, x)


# -- losses -------------------------------------------------------------------

def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on raw logits, numerically stable."""
    t = np.broadcast_to(np.asarray(target, dtype=logits.dtype), logits.shape)
    xd = logits.data
    loss = np.maximum(xd, 0) - xd * t + np.log1p(np.exp(-np.abs(xd)))
    n = loss.size

    def bw(g):
        return (g * (_sigmoid(xd) - t) / n,)
    return _result(np.asarray(loss.mean(), dtype=logits.dtype), (logits,), bw)


def binary_cross_entropy(prob: Tensor, target, eps: float = 1e-7) -> Tensor:
    t = as_tensor(np.asarray(target, dtype=prob.dtype), prob)
    p = _clip(prob, eps, 1 - eps)
    return -((t * log(p) + (1 - t) * log(1 - p)).mean())


def _clip(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _result(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


__all__ = [
    "DimensionError", "ConfigError", "leaky_relu", "relu", "sigmoid", "softplus",
    "linear", "softmax", "attention", "layer_norm", "group_norm", "conv2d",
    "patch_embed", "avg_pool2d", "interp_matrix", "bilinear_resize",
    "sparse_apply", "gather_rows", "scatter_rows", "bce_with_logits",
    "binary_cross_entropy",
]
