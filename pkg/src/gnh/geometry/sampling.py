"""Continuous-coordinate sampling of feature maps.

Pixel edges lie on integers and texel centres on half-integers, so an image
of size W maps to a feature grid of width W_f by the uniform scale W_f / W.
Samples outside [0, W_f] x [0, H_f] are flagged out of bounds and produce
zeros; inside that range the outermost half texel clamps to the edge.
"""
from __future__ import annotations

import numpy as np


def image_to_feature(uv: np.ndarray, image_size, feature_size) -> np.ndarray:
    H, W = image_size
    Hf, Wf = feature_size
    uv = np.asarray(uv, dtype=np.float64)
    return np.stack([uv[..., 0] * (Wf / W), uv[..., 1] * (Hf / H)], axis=-1)


def bilinear_taps(uv: np.ndarray, feature_size, mode: str = "bilinear"):
    """Flat texel indices (P, 4), weights (P, 4) and in-bounds flags (P,).

    ``uv`` is in feature-grid units. Out-of-bounds rows get zero weights.
    """
    Hf, Wf = feature_size
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]
    inb = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= Wf) & (v >= 0) & (v <= Hf)
    u = np.where(inb, u, 0.5)
    v = np.where(inb, v, 0.5)
    if mode == "nearest":
        c = np.clip(np.floor(u), 0, Wf - 1).astype(np.int64)
        r = np.clip(np.floor(v), 0, Hf - 1).astype(np.int64)
        idx = np.zeros((len(u), 4), np.int64)
        idx[:, 0] = r * Wf + c
        w = np.zeros((len(u), 4))
        w[:, 0] = 1.0
    elif mode == "bilinear":
        x, y = u - 0.5, v - 0.5
        x0, y0 = np.floor(x), np.floor(y)
        fx, fy = x - x0, y - y0
        c0 = np.clip(x0, 0, Wf - 1).astype(np.int64)
        c1 = np.clip(x0 + 1, 0, Wf - 1).astype(np.int64)
        r0 = np.clip(y0, 0, Hf - 1).astype(np.int64)
        r1 = np.clip(y0 + 1, 0, Hf - 1).astype(np.int64)
        idx = np.stack([r0 * Wf + c0, r0 * Wf + c1, r1 * Wf + c0, r1 * Wf + c1], axis=1)
        w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    else:
        raise ValueError(f"unknown sampling mode '{mode}'")
    w = w * inb[:, None]
    return idx, w, inb


def sample_bilinear(fmap: np.ndarray, uv: np.ndarray, mode: str = "bilinear"):
    """Sample an (H_f, W_f, C) map at feature-grid positions ``uv`` (..., 2).

    Returns (features (..., C), in-bounds flags (...)).
    """
    fmap = np.asarray(fmap)
    if fmap.ndim != 3 or fmap.shape[0] == 0 or fmap.shape[1] == 0:
        raise ValueError("feature map must be a nonempty (H, W, C) array")
    Hf, Wf, C = fmap.shape
    uv = np.asarray(uv, dtype=np.float64)
    lead = uv.shape[:-1]
    idx, w, inb = bilinear_taps(uv, (Hf, Wf), mode)
    flat = fmap.reshape(Hf * Wf, C)
    out = np.einsum("pk,pkc->pc", w, flat[idx])
    return out.reshape(lead + (C,)), inb.reshape(lead)
