"""Random-instance builders for finite-difference gradient checks.

Each case returns ``(loss_fn, params)`` for a freshly drawn 64-bit instance;
the loss is the op output contracted against a fixed random tensor so every
output element contributes.
"""
import numpy as np

import gnh.numerics as gn
from gnh.numerics import functional as F
from gnh.numerics.tensor import Tensor


def _leaf(rng, *shape, away_from_zero=False):
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = np.where(np.abs(x) < 0.05, np.sign(x + 1e-12) * 0.05, x)
    return Tensor(x, requires_grad=True)


def _case(op, leaves, rng):
    w = rng.standard_normal(op(*leaves).shape)
    return (lambda: (op(*leaves) * w).sum()), leaves


def case_add(rng):
    return _case(lambda a, b: a + b, [_leaf(rng, 3, 4), _leaf(rng, 1, 4)], rng)


def case_sub(rng):
    return _case(lambda a, b: a - b, [_leaf(rng, 2, 3, 4), _leaf(rng, 3, 1)], rng)


def case_mul(rng):
    return _case(lambda a, b: a * b, [_leaf(rng, 3, 4), _leaf(rng, 4)], rng)


def case_div(rng):
    b = Tensor(rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1, 1], (3, 4)), requires_grad=True)
    return _case(lambda a, b: a / b, [_leaf(rng, 3, 4), b], rng)


def case_pow(rng):
    a = Tensor(rng.uniform(0.5, 2.0, (5,)), requires_grad=True)
    return _case(lambda a: a ** 3 + a ** 0.5, [a], rng)


def case_exp_log_sqrt(rng):
    a = Tensor(rng.uniform(0.5, 2.0, (4, 3)), requires_grad=True)
    return _case(lambda a: gn.exp(a) + gn.log(a) + gn.sqrt(a), [a], rng)


def case_abs(rng):
    return _case(lambda a: gn.abs_(a), [_leaf(rng, 6, away_from_zero=True)], rng)


def case_reductions(rng):
    return _case(lambda a: a.sum(axis=1, keepdims=True) * a.mean(axis=(0, 1)),
                 [_leaf(rng, 2, 3, 4)], rng)


def case_shape_ops(rng):
    return _case(lambda a: a.reshape(6, 4).transpose(1, 0)[1:3, ::2],
                 [_leaf(rng, 2, 3, 4)], rng)


def case_fancy_index(rng):
    idx = rng.integers(0, 5, size=7)
    return _case(lambda a: a[idx], [_leaf(rng, 5, 3)], rng)


def case_concat_stack(rng):
    return _case(lambda a, b: gn.concat([a, gn.stack([b, b * 2.0], axis=1)[:, 0]], axis=1),
                 [_leaf(rng, 3, 2), _leaf(rng, 3, 4)], rng)


def case_matmul(rng):
    return _case(lambda a, b: a @ b, [_leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)], rng)


def case_linear(rng):
    return _case(lambda x, w, b: F.linear(x, w, b), [_leaf(rng, 3, 4), _leaf(rng, 4, 2), _leaf(rng, 2)], rng)


def case_leaky_relu(rng):
    return _case(lambda a: F.leaky_relu(a), [_leaf(rng, 4, 5, away_from_zero=True)], rng)


def case_sigmoid_softplus(rng):
    return _case(lambda a: F.sigmoid(a) + F.softplus(a * 3.0), [_leaf(rng, 4, 5)], rng)


def case_softmax(rng):
    mask = rng.random((3, 1, 5)) > 0.3
    mask[..., 0] = True
    return _case(lambda a: F.softmax(a, axis=-1, mask=mask), [_leaf(rng, 3, 2, 5)], rng)


def case_attention(rng):
    mask = rng.random((2, 1, 4)) > 0.4
    mask[..., 1] = True
    return _case(lambda q, k, v: F.attention(q, k, v, mask=mask),
                 [_leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 4), _leaf(rng, 2, 4, 3)], rng)


def case_layer_norm(rng):
    return _case(lambda x, g, b: F.layer_norm(x, g, b), [_leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)], rng)


def case_group_norm(rng):
    return _case(lambda x, g, b: F.group_norm(x, 2, g, b),
                 [_leaf(rng, 2, 4, 3, 3), _leaf(rng, 4), _leaf(rng, 4)], rng)


def case_conv2d(rng):
    stride, pad, k = int(rng.integers(1, 3)), int(rng.integers(0, 2)), int(rng.choice([1, 2, 3]))
    return _case(lambda x, w, b: F.conv2d(x, w, b, stride=stride, pad=pad),
                 [_leaf(rng, 2, 3, 5, 6), _leaf(rng, 2, 3, k, k), _leaf(rng, 2)], rng)


def case_patch_embed(rng):
    return _case(lambda x, w, b: F.patch_embed(x, w, b, 2),
                 [_leaf(rng, 1, 2, 4, 6), _leaf(rng, 3, 2, 2, 2), _leaf(rng, 3)], rng)


def case_avg_pool(rng):
    return _case(lambda x: F.avg_pool2d(x, 2), [_leaf(rng, 1, 2, 4, 6)], rng)


def case_bilinear_resize(rng):
    oh, ow = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    return _case(lambda x: F.bilinear_resize(x, oh, ow), [_leaf(rng, 1, 2, 3, 4)], rng)


def case_gather_rows(rng):
    idx = rng.integers(0, 6, size=(5, 4))
    w = rng.random((5, 4))
    return _case(lambda x: F.gather_rows(x, idx, w), [_leaf(rng, 6, 3)], rng)


def case_scatter_rows(rng):
    idx = rng.permutation(8)[:5]
    return _case(lambda x: F.scatter_rows(x, idx, 8), [_leaf(rng, 5, 3)], rng)


def case_bce_with_logits(rng):
    t = rng.random((3, 4))
    x = _leaf(rng, 3, 4)
    return (lambda: F.bce_with_logits(x * 2.0, t)), [x]


def case_binary_cross_entropy(rng):
    t = rng.random((3, 4))
    p = Tensor(rng.uniform(0.1, 0.9, (3, 4)), requires_grad=True)
    return (lambda: F.binary_cross_entropy(p, t)), [p]


OP_CASES = {name[5:]: fn for name, fn in dict(globals()).items() if name.startswith("case_")}


# ---------------------------------------------------------------- composites
# Small 64-bit instances of the learnable stages and the four losses.

def _small_modules():
    from gnh.features import EncoderConfig, SourceEncoder
    from gnh.fusion_render import FusionConfig, FusionTransformer, RendererConfig, ResUNet
    from gnh.training import Discriminator, PerceptualExtractor
    if "m" not in _MODULES:
        rng = np.random.default_rng(0)
        enc_cfg = EncoderConfig(feature_size=(16, 16), c_coarse=4, c_fine=4, patch=8, width=8, heads=2, depth=1,
                                fine_hidden=4)
        fus_cfg = FusionConfig(dim=8, depth=1, heads=2)
        _MODULES["m"] = dict(
            enc=SourceEncoder(enc_cfg, rng).to(np.float64),
            fus=FusionTransformer(5, fus_cfg, rng).to(np.float64), fus_cfg=fus_cfg,
            ren=ResUNet(4, RendererConfig(base=4, levels=2, groups=2), rng).to(np.float64),
            disc=Discriminator(rng, (4, 4, 4)).to(np.float64),
            ext=PerceptualExtractor((4, 4, 4, 4)).to(np.float64))
    return _MODULES["m"]


_MODULES = {}


def _image(rng, *shape):
    return Tensor(rng.uniform(0.05, 0.95, shape), requires_grad=True)


def _params(module):
    return [p for _, p in module.named_parameters() if p.requires_grad]


def case_encoder(rng):
    m = _small_modules()
    x = _image(rng, 2, 3, 16, 16)
    return _case(lambda x: m["enc"](x), [x], rng)[0], [x] + _params(m["enc"])


def case_fusion(rng):
    from gnh.features import SplatPlan, TargetLayer
    from gnh.fusion_render import build_tokens, fuse
    m = _small_modules()
    layers = []
    for s in range(3):
        pix = np.flatnonzero(rng.random(16) < 0.6)
        plan = SplatPlan((4, 4), pix, np.arange(len(pix)), np.ones(len(pix)), rng.normal(size=(len(pix), 5)), s)
        layers.append(TargetLayer(plan, _leaf(rng, len(pix), 5)))
    w = rng.standard_normal((1, 8, 4, 4))
    leaves = [l.features for l in layers]

    def fn():
        return (fuse(m["fus"], build_tokens(layers, m["fus_cfg"]), np.float64).omega * w).sum()

    return fn, leaves + _params(m["fus"])


def case_renderer(rng):
    m = _small_modules()
    x = _leaf(rng, 1, 4, 8, 8)
    return _case(lambda x: m["ren"](x), [x], rng)[0], [x] + _params(m["ren"])


def _pair(rng):
    return _image(rng, 1, 3, 16, 16), Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))


def case_loss_color(rng):
    from gnh.training import loss_color
    x, y = _pair(rng)
    return (lambda: loss_color(x, y)), [x]


def case_loss_perceptual(rng):
    from gnh.training import loss_perceptual
    m = _small_modules()
    x, y = _pair(rng)
    return (lambda: loss_perceptual(x, y, m["ext"])), [x]


def case_loss_adversarial(rng):
    from gnh.training import loss_adversarial_g
    m = _small_modules()
    x, _ = _pair(rng)
    return (lambda: loss_adversarial_g(x, m["disc"])), [x] + _params(m["disc"])


def case_loss_antibias(rng):
    from gnh.training import loss_antibias
    x, y = _pair(rng)
    return (lambda: loss_antibias(x, y, 2)), [x]


COMPOSITE_CASES = {n: globals()[f"case_{n}"] for n in
                   ("encoder", "fusion", "renderer", "loss_color", "loss_perceptual", "loss_adversarial",
                    "loss_antibias")}
