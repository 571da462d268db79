"""Source image encoders: a coarse (transformer-refined) stream and a fine CNN stream."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import functional as F
from ..numerics.functional import ConfigError
from ..numerics.nn import Conv2d, LayerNorm, Linear, Module, Parameter, kaiming_uniform
from ..numerics.tensor import Tensor, concat


@dataclass
class EncoderConfig:
    feature_size: tuple = (64, 64)  # H_f, W_f
    c_coarse: int = 24
    c_fine: int = 24
    patch: int = 16
    width: int = 32           # token width of the coarse stream
    heads: int = 2
    depth: int = 4            # efficient self-attention blocks
    sr_ratio: int = 2         # spatial reduction of keys/values
    fine_hidden: int = 16
    backbone: str = "patch"   # "patch" (trainable) or "random" (fixed projection)


def to_tokens(x: Tensor) -> Tensor:
    """(B, C, h, w) -> (B, h*w, C)."""
    B, C, h, w = x.shape
    return x.reshape(B, C, h * w).transpose(0, 2, 1)


def from_tokens(t: Tensor, h: int, w: int) -> Tensor:
    B, T, C = t.shape
    return t.transpose(0, 2, 1).reshape(B, C, h, w)


class PatchBackbone(Module):
    """Non-overlapping patch embedding (conv with kernel = stride = patch)."""

    def __init__(self, width: int, patch: int, rng, trainable: bool = True):
        self.patch = patch
        fan_in = 3 * patch * patch
        self.weight = Parameter(kaiming_uniform(rng, (width, 3, patch, patch), fan_in), requires_grad=trainable)
        self.bias = Parameter(np.zeros(width, np.float32), requires_grad=trainable)
        self.norm = LayerNorm(width)

    def forward(self, img: Tensor) -> Tensor:
        x = F.patch_embed(img, self.weight, self.bias, self.patch)
        h, w = x.shape[-2:]
        return from_tokens(self.norm(to_tokens(x)), h, w)


class EfficientSelfAttention(Module):
    """Multi-head self-attention whose keys/values come from a spatially reduced grid."""

    def __init__(self, dim: int, heads: int, sr: int, rng):
        if dim % heads:
            raise ConfigError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.sr = sr
        self.q = Linear(dim, dim, rng)
        self.kv = Linear(dim, 2 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        if sr > 1:
            self.reduce = Conv2d(dim, dim, sr, rng, stride=sr, pad=0)
            self.reduce_norm = LayerNorm(dim)

    def _split(self, t: Tensor) -> Tensor:
        B, T, D = t.shape
        return t.reshape(B, T, self.heads, D // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        B, T, D = x.shape
        src = x
        if self.sr > 1:
            if h % self.sr or w % self.sr:
                raise ConfigError(f"token grid {h}x{w} not divisible by reduction {self.sr}")
            g = self.reduce(from_tokens(x, h, w))
            src = self.reduce_norm(to_tokens(g))
        kv = self.kv(src)
        k, v = kv[..., :D], kv[..., D:]
        out = F.attention(self._split(self.q(x)), self._split(k), self._split(v))
        out = out.transpose(0, 2, 1, 3).reshape(B, T, D)
        return self.proj(out)


class TransformerBlock(Module):
    def __init__(self, dim: int, heads: int, sr: int, rng, mlp_ratio: int = 2):
        self.norm1 = LayerNorm(dim)
        self.attn = EfficientSelfAttention(dim, heads, sr, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.fc2(F.leaky_relu(self.fc1(self.norm2(x))))


class CoarseEncoder(Module):
    """Backbone -> efficient self-attention refinement -> 3 convs with bilinear upsampling."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        self.backbone = PatchBackbone(cfg.width, cfg.patch, rng, trainable=cfg.backbone != "random")
        self.blocks = [TransformerBlock(cfg.width, cfg.heads, cfg.sr_ratio, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.width)
        self.conv1 = Conv2d(cfg.width, cfg.c_coarse, 3, rng)
        self.conv2 = Conv2d(cfg.c_coarse, cfg.c_coarse, 3, rng)
        self.conv3 = Conv2d(cfg.c_coarse, cfg.c_coarse, 3, rng)

    def forward(self, img: Tensor) -> Tensor:
        H, W = img.shape[-2:]
        p = self.cfg.patch
        if H < p or W < p:
            raise ConfigError(f"image {H}x{W} smaller than one {p}x{p} patch")
        g = self.backbone(img)
        h, w = g.shape[-2:]
        t = to_tokens(g)
        for blk in self.blocks:
            t = blk(t, h, w)
        g = from_tokens(self.norm(t), h, w)
        x = F.leaky_relu(self.conv1(g))
        x = F.bilinear_resize(x, *self.cfg.feature_size)
        x = F.leaky_relu(self.conv2(x))
        return self.conv3(x)


class FineEncoder(Module):
    """Five 3x3 convs (one stride 2) with LeakyReLU, then bilinear upsampling."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        c = cfg.fine_hidden
        self.convs = [Conv2d(3, c, 3, rng), Conv2d(c, c, 3, rng, stride=2), Conv2d(c, c, 3, rng),
                      Conv2d(c, c, 3, rng), Conv2d(c, cfg.c_fine, 3, rng)]

    def forward(self, img: Tensor) -> Tensor:
        x = img
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.leaky_relu(x)
        return F.bilinear_resize(x, *self.cfg.feature_size)


def concat_features(coarse: Tensor, fine: Tensor) -> Tensor:
    """Channel concatenation, coarse first."""
    if coarse.shape[-2:] != fine.shape[-2:] or coarse.shape[0] != fine.shape[0]:
        raise F.DimensionError(f"feature maps differ in size: {coarse.shape} vs {fine.shape}")
    return concat([coarse, fine], axis=1)


def split_features(fmap: Tensor, c_coarse: int):
    return fmap[:, :c_coarse], fmap[:, c_coarse:]


class SourceEncoder(Module):
    """Both streams; maps (N, 3, H, W) images in [0, 1] to (N, C_coarse + C_fine, H_f, W_f)."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        self.coarse = CoarseEncoder(cfg, rng)
        self.fine = FineEncoder(cfg, rng)

    @property
    def channels(self) -> int:
        return self.cfg.c_coarse + self.cfg.c_fine

    def forward(self, img: Tensor) -> Tensor:
        if img.ndim != 4 or img.shape[1] != 3:
            raise F.DimensionError(f"expected (N, 3, H, W) images, got {img.shape}")
        return concat_features(self.coarse(img), self.fine(img))


def dump_feature_map(path, fmap) -> None:
    """Raw float32 (H, W, C) dump preceded by a text line 'H W C'."""
    a = fmap.data if isinstance(fmap, Tensor) else np.asarray(fmap)
    if a.ndim == 4:
        a = a[0]
    a = np.ascontiguousarray(np.transpose(a, (1, 2, 0)), dtype=np.float32)
    with open(path, "wb") as f:
        f.write(f"{a.shape[0]} {a.shape[1]} {a.shape[2]}\n".encode())
        f.write(a.tobytes())


def load_feature_dump(path) -> np.ndarray:
    with open(path, "rb") as f:
        H, W, C = (int(x) for x in f.readline().split())
        return np.frombuffer(f.read(), dtype=np.float32).reshape(H, W, C)
