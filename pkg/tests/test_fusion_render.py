import numpy as np
import pytest

from gnh.features import SplatPlan, TargetLayer
from gnh.fusion_render import (FusionConfig, FusionTransformer, RendererConfig, ResUNet, build_tokens, fuse,
                               to_image)
from gnh.numerics import ConfigError, Tensor
from gnh.numerics.gradcheck import directional_check

C = 6


def layer(pixels, feats, size=(8, 8), meta=None, source_id=0):
    pixels = np.asarray(pixels, np.int64)
    K = len(pixels)
    if meta is None:
        meta = np.tile([0.1, -0.5, 0.0, 0.0, -1.0], (K, 1))
    return TargetLayer(SplatPlan(size, pixels, np.arange(K), np.ones(K), meta, source_id),
                       Tensor(np.asarray(feats, np.float32).reshape(K, C)))


def random_layers(rng, n, size=(8, 8), frac=0.5):
    out = []
    for s in range(n):
        pix = np.flatnonzero(rng.random(size[0] * size[1]) < frac)
        meta = rng.normal(size=(len(pix), 5))
        out.append(layer(pix, rng.normal(size=(len(pix), C)), size, meta, s))
    return out


def small_fusion(rng, **kw):
    cfg = FusionConfig(dim=16, depth=2, heads=2, **kw)
    return cfg, FusionTransformer(C, cfg, rng)


# ---------------------------------------------------------------- tokens

def test_token_counts():
    rng = np.random.default_rng(0)
    t = build_tokens([layer([5], rng.normal(size=C))], FusionConfig())
    assert t.n_pixels == 1 and t.counts().tolist() == [1]
    layers = [layer([9] if s in (1, 3) else [], rng.normal(size=(1 if s in (1, 3) else 0, C)))
              for s in range(5)]
    t = build_tokens(layers, FusionConfig())
    assert t.n_pixels == 1 and t.counts().tolist() == [2]
    assert t.mask[0].tolist() == [False, True, False, True, False]
    # absent frames carry exact zero rows
    assert np.all(t.features.data[0, [0, 2, 4]] == 0)


def test_empty_token_set_is_valid():
    cfg, ft = small_fusion(np.random.default_rng(0))
    t = build_tokens([layer([], np.zeros((0, C)))], cfg)
    assert t.n_pixels == 0
    fused = fuse(ft, t)
    assert fused.omega.shape == (1, 16, 8, 8) and not fused.omega.data.any()


def test_metadata_disabled_token_depends_only_on_features():
    rng = np.random.default_rng(1)
    cfg, ft = small_fusion(rng)
    cfg = cfg.no_metadata()
    ft = FusionTransformer(C, cfg, rng)
    f = rng.normal(size=(3, C))
    a = build_tokens([layer([1, 2, 3], f, meta=rng.normal(size=(3, 5)))], cfg)
    b = build_tokens([layer([1, 2, 3], f, meta=rng.normal(size=(3, 5)), source_id=4)], cfg)
    assert a.meta.shape[-1] == 0
    assert np.array_equal(ft(a).data, ft(b).data)


def test_metadata_flags_select_channels():
    cfg = FusionConfig(use_depth=True, use_ndv=False, use_viewdir=False, use_occupancy=True)
    meta = np.array([[0.3, -0.2, 1.0, 2.0, 3.0]])
    t = build_tokens([layer([0], np.ones(C), meta=meta)], cfg)
    np.testing.assert_array_equal(t.meta[0, 0], [0.3, 1.0])


# ---------------------------------------------------------------- fusion

def test_single_and_identical_tokens():
    rng = np.random.default_rng(2)
    cfg, ft = small_fusion(rng)
    pix = [3, 10, 40]
    f = rng.normal(size=(3, C))
    meta = rng.normal(size=(3, 5))
    one = fuse(ft, build_tokens([layer(pix, f, meta=meta)], cfg)).omega.data
    five = fuse(ft, build_tokens([layer(pix, f, meta=meta, source_id=s) for s in range(5)], cfg)).omega.data
    assert np.abs(one - five).max() <= 1e-6
    # mean of one token is that token's transformer output
    direct = ft(build_tokens([layer(pix, f, meta=meta)], cfg)).data
    np.testing.assert_array_equal(one[0].reshape(16, -1).T[pix], direct)


@pytest.mark.parametrize("head", ["mean", "query"])
def test_permutation_invariance(head):
    rng = np.random.default_rng(3)
    cfg = FusionConfig(dim=16, depth=2, heads=2, head=head).no_metadata()
    ft = FusionTransformer(C, cfg, rng)
    layers = random_layers(rng, 5)
    base = fuse(ft, build_tokens(layers, cfg)).omega.data
    for _ in range(3):
        perm = rng.permutation(5)
        other = fuse(ft, build_tokens([layers[i] for i in perm], cfg)).omega.data
        assert np.abs(base - other).max() <= 1e-6


def test_untouched_pixels_exact_zero_and_locality():
    rng = np.random.default_rng(4)
    cfg, ft = small_fusion(rng)
    layers = random_layers(rng, 3, frac=0.3)
    fused = fuse(ft, build_tokens(layers, cfg))
    occ = np.zeros(64, bool)
    for l in layers:
        occ[l.plan.pixels] = True
    om = fused.omega.data[0].reshape(16, -1)
    assert np.array_equal(fused.occupancy.ravel(), occ)
    assert np.all(om[:, ~occ] == 0) and np.all(np.abs(om[:, occ]).sum(0) > 0)
    rin = fused.renderer_input().data[0]
    assert rin.shape[0] == 17 and np.array_equal(rin[16].ravel(), occ.astype(np.float32))
    # perturb one pixel's feature in one frame
    p = int(layers[0].plan.pixels[0])
    layers[0].features.data[0] += 1.0
    om2 = fuse(ft, build_tokens(layers, cfg)).omega.data[0].reshape(16, -1)
    changed = np.flatnonzero(np.abs(om2 - om).max(0) > 0)
    assert changed.tolist() == [p]


def test_fixed_length_mode():
    rng = np.random.default_rng(5)
    cfg, ft = small_fusion(rng, fixed_length=True)
    ft.empty.data[:] = rng.normal(size=16)
    layers = random_layers(rng, 3, frac=0.5)
    fused = fuse(ft, build_tokens(layers, cfg))
    occ = fused.occupancy.ravel()
    om = fused.omega.data[0].reshape(16, -1)
    assert np.all(om[:, ~occ] == 0) and np.isfinite(om).all()
    # the learned empty token receives gradient when some frame is absent
    fused.omega.sum().backward()
    assert np.abs(ft.empty.grad).sum() > 0


def test_fusion_config_errors():
    with pytest.raises(ConfigError):
        FusionTransformer(C, FusionConfig(dim=10, heads=4), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        FusionTransformer(C, FusionConfig(head="max"), np.random.default_rng(0))


def test_fusion_gradient_fd():
    rng = np.random.default_rng(6)
    cfg, ft = small_fusion(rng)
    ft.to(np.float64)
    layers = random_layers(rng, 3, size=(4, 4))
    for l in layers:
        l.features.data = l.features.data.astype(np.float64)
        l.features.requires_grad = True
    w = rng.normal(size=(1, 16, 4, 4))

    def loss():
        om = fuse(ft, build_tokens(layers, cfg), np.float64).omega
        return (om * Tensor(w)).sum()

    params = [l.features for l in layers] + [p for _, p in ft.named_parameters()]
    assert directional_check(loss, params, rng) < 1e-4


# ---------------------------------------------------------------- renderer

def test_render_shape_and_range():
    rng = np.random.default_rng(0)
    un = ResUNet(17, RendererConfig(), rng)
    x = Tensor(rng.normal(size=(1, 17, 64, 64)).astype(np.float32))
    out = un(x)
    assert out.shape == (1, 3, 64, 64)
    img = to_image(out)
    assert img.shape == (64, 64, 3) and img.min() >= 0 and img.max() <= 1
    assert np.array_equal(un(x).data, out.data)


def test_render_divisibility_error():
    un = ResUNet(4, RendererConfig(base=8, levels=3, groups=4), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        un(Tensor(np.zeros((1, 4, 20, 20), np.float32)))


def test_zero_omega_constant_interior():
    rng = np.random.default_rng(1)
    un = ResUNet(9, RendererConfig(base=8, levels=3, groups=4), rng)
    for _, p in un.named_parameters():
        if p.data.ndim == 1:
            p.data[:] = rng.normal(0, 0.1, p.shape)
    # zero padding of the constant activations leaks about 40 px inwards through three levels
    out = un(Tensor(np.zeros((1, 9, 128, 128), np.float32))).data[0]
    inner = out[:, 40:-40, 40:-40]
    assert inner.reshape(3, -1).std(1).max() < 1e-5


def test_render_gradient_fd():
    rng = np.random.default_rng(2)
    un = ResUNet(5, RendererConfig(base=8, levels=2, groups=4), rng).to(np.float64)
    omega = Tensor(rng.normal(size=(1, 5, 8, 8)), requires_grad=True)
    target = Tensor(rng.random((1, 3, 8, 8)))

    def loss():
        return abs(un(omega) - target).mean()

    assert directional_check(loss, [omega], rng) < 1e-4
    assert directional_check(loss, [p for _, p in un.named_parameters()], rng) < 1e-4


def test_render_locality():
    rng = np.random.default_rng(3)
    un = ResUNet(5, RendererConfig(base=8, levels=1, groups=4), rng).to(np.float64)
    # GroupNorm statistics are global, so locality is checked with an instance whose norms see
    # identical inputs: perturb a pixel and compare differences outside the receptive field
    x = rng.normal(size=(1, 5, 32, 32))
    base = un(Tensor(x)).data
    y = x.copy()
    y[0, :, 16, 16] += 1e-3
    diff = np.abs(un(Tensor(y)).data - base).max(1)[0]
    near = diff[6:27, 6:27].sum()
    assert near > 0.5 * diff.sum()
