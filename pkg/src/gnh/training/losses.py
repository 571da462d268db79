"""Photometric, perceptual, adversarial and anti-bias losses, plus the patch discriminator."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping, Sequence, Union

import numpy as np

from ..numerics import functional as F
from ..numerics.functional import ConfigError, DimensionError
from ..numerics.nn import Conv2d, Module
from ..numerics.tensor import Tensor, abs_, sqrt

LOSS_NAMES = ("color", "lpips", "adv", "ab")


@dataclass(frozen=True)
class LossWeights:
    color: float = 0.2
    lpips: float = 0.1
    adv: float = 0.05
    ab: float = 0.8

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be non-negative")

    def as_tuple(self):
        return tuple(getattr(self, n) for n in LOSS_NAMES)


def _check_pair(pred: Tensor, target: Tensor):
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")


def _as_tensor(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, like.dtype))


def loss_color(pred: Tensor, target) -> Tensor:
    """Mean absolute difference over all pixels and channels."""
    target = _as_tensor(target, pred)
    _check_pair(pred, target)
    return abs_(pred - target).mean()


def downsample(x: Tensor, k: int, mode: str = "repeat") -> Tensor:
    """k-fold downsampling: ``repeat`` applies 2x2 average pooling k times,
    ``factor`` pools once with a k x k window."""
    if k < 0 or (mode == "factor" and k < 1):
        raise ConfigError(f"invalid downsampling fold {k} for mode {mode}")
    if mode == "repeat":
        for _ in range(k):
            x = F.avg_pool2d(x, 2)
        return x
    if mode == "factor":
        return x if k == 1 else F.avg_pool2d(x, k)
    raise ConfigError(f"unknown downsampling mode '{mode}'")


def loss_antibias(pred: Tensor, target, k: int = 2, mode: str = "repeat") -> Tensor:
    """L1 between downsampled images; tolerant to small misalignments."""
    target = _as_tensor(target, pred)
    _check_pair(pred, target)
    return loss_color(downsample(pred, k, mode), downsample(target, k, mode))


class PerceptualExtractor(Module):
    """Fixed random conv pyramid used as a stand-in for a pretrained perceptual network.

    Each level is a 3x3 conv + LeakyReLU, levels after the first start with a
    2x2 average pool. First-layer kernels are zero-mean per output channel, so
    uniform brightness changes only register near the image border.
    """

    def __init__(self, channels: Sequence[int] = (8, 16, 16, 32), seed: int = 20240611, eps: float = 1e-6):
        rng = np.random.default_rng(seed)
        self.eps = eps
        c_in = 3
        self.convs = []
        for c in channels:
            conv = Conv2d(c_in, c, 3, rng)
            self.convs.append(conv)
            c_in = c
        w = self.convs[0].weight.data
        w -= w.mean(axis=(1, 2, 3), keepdims=True)
        self.freeze()

    def features(self, img: Tensor):
        out = []
        x = img
        for i, conv in enumerate(self.convs):
            if i:
                x = F.avg_pool2d(x, 2)
            x = F.leaky_relu(conv(x))
            norm = sqrt((x * x).sum(axis=1, keepdims=True) + self.eps)
            out.append((x, norm))
        return out

    def distance(self, a: Tensor, b: Tensor) -> Tensor:
        total = None
        for (fa, na), (fb, nb) in zip(self.features(a), self.features(b)):
            d = fa / na - fb / nb
            term = (d * d).sum(axis=1).mean()
            total = term if total is None else total + term
        return total

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        return self.distance(a, b)


def loss_perceptual(pred: Tensor, target, extractor: PerceptualExtractor) -> Tensor:
    target = _as_tensor(target, pred)
    _check_pair(pred, target)
    if extractor.convs[0].weight.dtype != pred.dtype:
        extractor.to(pred.dtype)
    return extractor(pred, target)


class Discriminator(Module):
    """Patch discriminator: four stride-2 4x4 convs, LeakyReLU(0.2) between, 1-channel logits."""

    def __init__(self, rng, widths: Sequence[int] = (16, 32, 64), in_channels: int = 3):
        chans = [in_channels, *widths, 1]
        self.convs = [Conv2d(chans[i], chans[i + 1], 4, rng, stride=2, pad=1) for i in range(4)]

    def forward(self, img: Tensor) -> Tensor:
        x = img
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < 3:
                x = F.leaky_relu(x, 0.2)
        return x


def loss_adversarial_g(pred: Tensor, disc: Discriminator, non_saturating: bool = False) -> Tensor:
    """Generator term. As written: mean log(1 - sigmoid(D(pred))) = -mean softplus(D(pred)),
    which is <= 0 and decreases as the discriminator is fooled. ``non_saturating``
    switches to mean -log sigmoid(D(pred)) = mean softplus(-D(pred))."""
    logits = disc(pred)
    if non_saturating:
        return F.softplus(-logits).mean()
    return -F.softplus(logits).mean()


def disc_loss(real, fake: Tensor, disc: Discriminator) -> Tensor:
    """BCE with real -> 1 and fake -> 0, averaged over both halves. ``fake`` is detached."""
    real = real if isinstance(real, Tensor) else Tensor(np.asarray(real, fake.dtype))
    lr = F.bce_with_logits(disc(real), 1.0)
    lf = F.bce_with_logits(disc(fake.detach()), 0.0)
    return (lr + lf) * 0.5


Components = Union[Mapping[str, object], Sequence[object]]


def total_loss(components: Components, weights: Union[LossWeights, Sequence]):
    """Weighted sum in the order color, lpips, adv, ab.

    Works for Tensors, floats, Fractions or Decimals alike, so the arithmetic
    can be checked exactly when the weights are given as exact numbers.
    """
    w = weights.as_tuple() if isinstance(weights, LossWeights) else tuple(weights)
    c = tuple(components[n] for n in LOSS_NAMES) if isinstance(components, Mapping) else tuple(components)
    if len(w) != 4 or len(c) != 4:
        raise ConfigError("expected four loss components and four weights")
    total = c[0] * w[0]
    for ci, wi in zip(c[1:], w[1:]):
        total = total + ci * wi
    return total
