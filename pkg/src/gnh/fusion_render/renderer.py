"""Residual U-Net image renderer with group normalisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import functional as F
from ..numerics.functional import ConfigError
from ..numerics.nn import Conv2d, GroupNorm, Module
from ..numerics.tensor import Tensor, concat


@dataclass
class RendererConfig:
    base: int = 32
    levels: int = 3
    groups: int = 8
    out_channels: int = 3


class ResBlock(Module):
    """GN -> LeakyReLU -> conv, twice, plus an identity (or 1x1) shortcut."""

    def __init__(self, c_in: int, c_out: int, groups: int, rng):
        self.norm1 = GroupNorm(groups, c_in)
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.norm2 = GroupNorm(groups, c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.skip = Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(F.leaky_relu(self.norm1(x)))
        h = self.conv2(F.leaky_relu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class ResUNet(Module):
    def __init__(self, in_channels: int, cfg: RendererConfig, rng):
        self.cfg = cfg
        widths = [cfg.base * 2 ** l for l in range(cfg.levels + 1)]
        self.stem = Conv2d(in_channels, widths[0], 3, rng)
        self.enc = [ResBlock(widths[l], widths[l], cfg.groups, rng) for l in range(cfg.levels)]
        self.down = [Conv2d(widths[l], widths[l + 1], 3, rng, stride=2) for l in range(cfg.levels)]
        self.mid = ResBlock(widths[-1], widths[-1], cfg.groups, rng)
        self.up = [Conv2d(widths[l + 1], widths[l], 3, rng) for l in range(cfg.levels)]
        self.dec = [ResBlock(2 * widths[l], widths[l], cfg.groups, rng) for l in range(cfg.levels)]
        self.out_norm = GroupNorm(cfg.groups, widths[0])
        self.head = Conv2d(widths[0], cfg.out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        H, W = x.shape[-2:]
        f = 2 ** self.cfg.levels
        if H % f or W % f:
            raise ConfigError(f"renderer input {H}x{W} not divisible by {f}")
        h = self.stem(x)
        skips = []
        for l in range(self.cfg.levels):
            h = self.enc[l](h)
            skips.append(h)
            h = self.down[l](h)
        h = self.mid(h)
        for l in reversed(range(self.cfg.levels)):
            s = skips[l]
            h = self.up[l](F.bilinear_resize(h, *s.shape[-2:]))
            h = self.dec[l](concat([h, s], axis=1))
        return F.sigmoid(self.head(F.leaky_relu(self.out_norm(h))))


def to_image(rendered: Tensor) -> np.ndarray:
    """(1, 3, H, W) tensor -> H x W x 3 array clamped to [0, 1]."""
    return np.clip(np.transpose(rendered.data[0], (1, 2, 0)), 0.0, 1.0)
