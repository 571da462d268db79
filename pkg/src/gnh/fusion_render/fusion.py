"""Per-pixel multi-frame fusion: one token per source frame, a small transformer
across the frame axis, and a permutation-invariant pooling head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..features.lifting import TargetLayer
from ..numerics import functional as F
from ..numerics.functional import ConfigError
from ..numerics.nn import LayerNorm, Linear, Module, Parameter
from ..numerics.tensor import Tensor, concat, stack


@dataclass
class FusionConfig:
    dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    use_depth: bool = True
    use_ndv: bool = True
    use_viewdir: bool = True
    use_occupancy: bool = True
    fixed_length: bool = False   # pad absent frames with a learned empty token
    head: str = "mean"           # "mean" or "query"

    @property
    def n_meta(self) -> int:
        return int(self.use_depth) + int(self.use_ndv) + 3 * int(self.use_viewdir) + int(self.use_occupancy)

    def no_metadata(self) -> "FusionConfig":
        return FusionConfig(self.dim, self.depth, self.heads, self.mlp_ratio, False, False, False, False,
                            self.fixed_length, self.head)


@dataclass
class PixelTokenSet:
    size: tuple               # (H, W)
    pixels: np.ndarray        # P flat pixel ids (ascending) occupied in at least one frame
    features: Tensor          # P x N x C, zero rows for absent frames
    meta: np.ndarray          # P x N x n_meta
    mask: np.ndarray          # P x N, True where the frame has a feature
    source_ids: np.ndarray    # N

    @property
    def n_pixels(self) -> int:
        return len(self.pixels)

    def counts(self) -> np.ndarray:
        return self.mask.sum(1)


def build_tokens(layers: Sequence[TargetLayer], cfg: FusionConfig) -> PixelTokenSet:
    if not layers:
        raise ValueError("need at least one target layer")
    size = layers[0].plan.size
    if any(l.plan.size != size for l in layers):
        raise F.DimensionError("target layers differ in size")
    C = layers[0].features.shape[1]
    pixels = np.unique(np.concatenate([l.plan.pixels for l in layers]))
    P, N = len(pixels), len(layers)
    mask = np.zeros((P, N), dtype=bool)
    meta = np.zeros((P, N, cfg.n_meta))
    cols = []
    for n, layer in enumerate(layers):
        pos = np.searchsorted(pixels, layer.plan.pixels)
        mask[pos, n] = True
        row = np.full(P, 0, np.int64)
        row[pos] = np.arange(len(pos))
        # absent frames gather with weight 0 -> exact zero rows
        cols.append(F.gather_rows(layer.features, row, mask[:, n].astype(np.float64)) if len(pos)
                    else Tensor(np.zeros((P, C), layer.features.dtype)))
        m = layer.plan.meta
        parts = []
        if cfg.use_depth:
            parts.append(m[:, :1])
        if cfg.use_ndv:
            parts.append(m[:, 1:2])
        if cfg.use_viewdir:
            parts.append(m[:, 2:5])
        if cfg.use_occupancy:
            parts.append(np.ones((len(pos), 1)))
        if parts:
            meta[pos, n] = np.concatenate(parts, axis=1)
    feats = stack(cols, axis=1) if P else Tensor(np.zeros((0, N, C), layers[0].features.dtype))
    return PixelTokenSet(size, pixels, feats, meta, mask, np.array([l.plan.source_id for l in layers]))


class FusionBlock(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng):
        self.heads = heads
        self.norm1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def _split(self, t: Tensor) -> Tensor:
        P, N, D = t.shape
        return t.reshape(P, N, self.heads, D // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        P, N, D = x.shape
        qkv = self.qkv(self.norm1(x))
        q, k, v = (self._split(qkv[..., i * D:(i + 1) * D]) for i in range(3))
        a = F.attention(q, k, v, mask=mask[:, None, None, :])
        x = x + self.proj(a.transpose(0, 2, 1, 3).reshape(P, N, D))
        return x + self.fc2(F.leaky_relu(self.fc1(self.norm2(x))))


class FusionTransformer(Module):
    """Tokens (P, N, C + meta) -> fused features (P, D)."""

    def __init__(self, in_channels: int, cfg: FusionConfig, rng):
        if cfg.dim % cfg.heads:
            raise ConfigError(f"fusion width {cfg.dim} not divisible by {cfg.heads} heads")
        self.cfg = cfg
        self.embed = Linear(in_channels + cfg.n_meta, cfg.dim, rng)
        if cfg.fixed_length:
            self.empty = Parameter(np.zeros(cfg.dim, np.float32))
        self.blocks = [FusionBlock(cfg.dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim)
        if cfg.head == "query":
            self.query = Parameter(rng.normal(0, 0.02, cfg.dim).astype(np.float32))
        elif cfg.head != "mean":
            raise ConfigError(f"unknown fusion head '{cfg.head}'")

    def forward(self, tokens: PixelTokenSet) -> Tensor:
        P, N, C = tokens.features.shape
        x = tokens.features
        if self.cfg.n_meta:
            x = concat([x, Tensor(tokens.meta.astype(x.dtype))], axis=2)
        x = self.embed(x)
        mask = tokens.mask
        if self.cfg.fixed_length:
            m = Tensor(mask[..., None].astype(x.dtype))
            x = x * m + self.empty * (1.0 - m)
            mask = np.ones_like(mask)
        for blk in self.blocks:
            x = blk(x, mask)
        x = self.norm(x)
        if self.cfg.head == "query":
            q = self.query.reshape(1, 1, -1) * Tensor(np.ones((P, 1, 1), x.dtype))
            return F.attention(q, x, x, mask=mask[:, None, :]).reshape(P, self.cfg.dim)
        w = mask / np.maximum(mask.sum(1, keepdims=True), 1)
        return (x * Tensor(w[..., None].astype(x.dtype))).sum(axis=1)


@dataclass
class FusedFeatureMap:
    omega: Tensor             # 1 x D x H x W, zeros where no frame contributed
    occupancy: np.ndarray     # H x W booleans

    def renderer_input(self) -> Tensor:
        occ = Tensor(self.occupancy[None, None].astype(self.omega.dtype))
        return concat([self.omega, occ], axis=1)


def fuse(transformer: FusionTransformer, tokens: PixelTokenSet, dtype=np.float32) -> FusedFeatureMap:
    H, W = tokens.size
    D = transformer.cfg.dim
    occ = np.zeros(H * W, dtype=bool)
    occ[tokens.pixels] = True
    if tokens.n_pixels == 0:
        return FusedFeatureMap(Tensor(np.zeros((1, D, H, W), dtype)), occ.reshape(H, W))
    fused = transformer(tokens)
    dense = F.scatter_rows(fused, tokens.pixels, H * W)
    omega = dense.transpose(1, 0).reshape(1, D, H, W)
    return FusedFeatureMap(omega, occ.reshape(H, W))
