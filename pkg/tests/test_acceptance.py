"""The eight acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary.
"""
import functools
import math
import time
import zlib
from decimal import Decimal

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from skimage.measure import block_reduce

from conftest import record
from gradcases import COMPOSITE_CASES, OP_CASES

from gnh.body import BodyConfig, Pose, icosphere, lbs_pose, synthesize_body, with_normals
from gnh.features import (EncoderConfig, SourceEncoder, TargetLayer, apply_lift, apply_splat, lift_features, retarget,
                          splat_to_target)
from gnh.fusion_render import FusionConfig, FusionTransformer, build_tokens, fuse, to_image
from gnh.geometry import (Camera, intrinsics, orbit_camera, sample_bilinear, silhouette_vertices,
                          vertex_visibility, visibility_oracle_all)
from gnh.harness import average_error, bench, compute_metrics, generate_synthetic_scene
from gnh.harness import cli
from gnh.numerics import Tensor
from gnh.numerics.gradcheck import directional_check
from gnh.training import (GNH, LossWeights, PlanCache, TrainConfig, downsample, format_config, loss_antibias,
                          render_target, select_sources, total_loss, train)

# held-out PSNR threshold (dB), fixed from the first overfit run (observed 22.5 / 23.1 dB;
# an all-black prediction scores 16.6 dB and uniform noise 5.1 dB on the same frames)
PSNR_THRESHOLD = 20.0
OVERFIT_SOURCES = (1, 3, 5, 7, 9)


def criterion(number, title):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                record(number, title, False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
                raise
            record(number, title, True, detail or "")
        return wrapper
    return deco


@pytest.fixture(scope="module")
def scene():
    return generate_synthetic_scene(0)


# ---------------------------------------------------------------- 1

@criterion(1, "gradient suite")
def test_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    # smooth per-op cases at h = 1e-6; composites contain LeakyReLU / |x| kinks, where a
    # smaller step keeps the central difference from straddling a kink
    for cases, h in ((OP_CASES, 1e-6), (COMPOSITE_CASES, 1e-8)):
        for name in sorted(cases):
            rng = np.random.default_rng(zlib.crc32(name.encode()))
            w = 0.0
            for _ in range(100):
                fn, params = cases[name](rng)
                w = max(w, directional_check(fn, params, rng, h=h))
            worst[name] = w
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    assert not bad, f"rel err >= 1e-4: {bad}"
    assert elapsed < 120, f"took {elapsed:.1f}s"
    top = max(worst, key=worst.get)
    return (f"{len(worst)} ops/composites x 100 instances, worst {top} {worst[top]:.1e} < 1e-4, "
            f"{elapsed:.1f}s < 120s")


# ---------------------------------------------------------------- 2

@criterion(2, "geometry oracles")
def test_geometry_oracles():
    rng = np.random.default_rng(2024)
    agree = total = 0
    per_body = []
    for b in range(20):
        model = synthesize_body(BodyConfig(n_vertices=1500, seed=1000 + b, jitter=0.1))
        mesh = lbs_pose(model, Pose(rng.normal(0, 0.35, (24, 3))))
        cam = orbit_camera(rng.uniform(0, 2 * np.pi), 2.8, rng.uniform(-0.5, 0.8), target=(0, -0.1, 0))
        vis = vertex_visibility(mesh, cam)
        orc, gap = visibility_oracle_all(mesh, cam, return_gap=True)
        uv, _ = cam.project(mesh.vertices)
        keep = cam.pixel_index(uv)[2] & ~silhouette_vertices(mesh, cam) & ~(gap < 2e-3)
        a = int((vis == orc)[keep].sum())
        agree += a
        total += int(keep.sum())
        per_body.append(a / keep.sum())
    frac = agree / total
    assert frac >= 0.99, f"visibility agreement {frac:.4f}"

    model = synthesize_body(BodyConfig(n_vertices=1500, seed=7))
    zero = np.abs(lbs_pose(model, Pose.zero()).vertices - model.template_vertices).max()
    assert zero <= 1e-6

    cfg = BodyConfig(n_vertices=800, seed=5)
    cfg.joints = cfg.joints + [0.05, 0.9, -0.02]
    body = synthesize_body(cfg)
    eq = 0.0
    for s in range(20):
        r = np.random.default_rng(s)
        pose = Pose(r.normal(0, 0.4, (24, 3)), r.normal(0, 0.3, 3))
        R = Rotation.random(random_state=s).as_matrix()
        a = lbs_pose(body, pose.with_root(R, body.rest_joints[0])).vertices
        eq = max(eq, np.abs(a - lbs_pose(body, pose).vertices @ R.T).max())
    assert eq <= 1e-5

    sphere = icosphere(4, 0.5, (0, 0, 0))
    sph = vertex_visibility(sphere, orbit_camera(0.4, 40.0, 3.0, focal=2000.0, size=(128, 128))).mean()
    assert abs(sph - 0.5) <= 0.05
    return (f"visibility {100 * frac:.2f}% of {total} vertices (min body {100 * min(per_body):.2f}%), "
            f"zero-pose {zero:.1e}, equivariance {eq:.1e}, sphere {sph:.3f}")


# ---------------------------------------------------------------- 3

def _texel_grid(n=8, z=1.5, f=100.0, c=32.0, first=20):
    j = np.arange(first, first + n) + 0.5
    uu, vv = np.meshgrid(j, j)
    pts = np.column_stack([(uu.ravel() - c) * z / f, (vv.ravel() - c) * z / f, np.full(n * n, z)])
    faces = [[r * n + q, (r + 1) * n + q, r * n + q + 1] for r in range(n - 1) for q in range(n - 1)]
    faces += [[r * n + q + 1, (r + 1) * n + q, (r + 1) * n + q + 1] for r in range(n - 1) for q in range(n - 1)]
    return with_normals(pts, np.array(faces))


@criterion(3, "pipeline identity")
def test_pipeline_identity():
    rng = np.random.default_rng(3)
    checked = 0
    for b in range(5):
        model = synthesize_body(BodyConfig(n_vertices=1500, seed=300 + b))
        pose = Pose(rng.normal(0, 0.3, (24, 3)))
        mesh = lbs_pose(model, pose)
        cam = orbit_camera(rng.uniform(0, 2 * np.pi), 2.8, 0.3, target=(0, -0.05, 0))
        fmap = rng.normal(size=(1, 8, 64, 64))
        cloud = lift_features(Tensor(fmap), mesh, cam)
        mesh_t, _ = retarget(cloud, model, pose)
        layer = splat_to_target(cloud, mesh_t, cam, mesh_s=mesh, cam_s=cam)
        v = layer.plan.vertex
        uv, _ = cam.project(mesh.vertices[v])
        ref, _ = sample_bilinear(np.transpose(fmap[0], (1, 2, 0)), uv)
        assert np.abs(layer.features.data - ref).max() <= 1e-12
        allowed = cloud.valid & vertex_visibility(mesh, cam)
        assert allowed[v].all()
        assert layer.plan.occupancy.sum() <= allowed.sum()
        checked += len(v)
    # texel-centred vertices reproduce the map exactly
    cam = Camera(np.hstack([np.eye(3), np.zeros((3, 1))]), intrinsics(100.0, 32.0, 32.0), (64, 64))
    grid = _texel_grid()
    fmap = rng.normal(size=(1, 5, 64, 64)).astype(np.float32)
    layer = splat_to_target(lift_features(Tensor(fmap), grid, cam), grid, cam, mesh_s=grid, cam_s=cam)
    exact = fmap[0].reshape(5, -1).T[layer.plan.pixels]
    assert len(layer.plan.pixels) == 64 and np.array_equal(layer.features.data, exact)
    return f"{checked} body pixels match bilinear samples to 1e-12; 64/64 texel-centred pixels bit-exact"


# ---------------------------------------------------------------- 4

@criterion(4, "fusion properties")
def test_fusion_properties(scene):
    enc = SourceEncoder(EncoderConfig(), np.random.default_rng(0))
    sources = [1, 3, 5, 7, 9]
    cache = PlanCache(scene.to_subject(), _desk_model_cfg())
    fmap = enc(cache.source_images(sources))
    layers = [apply_splat(apply_lift(fmap[n:n + 1], lp), sp)
              for n, (lp, sp) in enumerate(cache.plans(sources, 0))]
    cfg = FusionConfig().no_metadata()
    ft = FusionTransformer(enc.channels, cfg, np.random.default_rng(1))
    base = fuse(ft, build_tokens(layers, cfg))
    perm_err = 0.0
    rng = np.random.default_rng(4)
    for _ in range(5):
        perm = rng.permutation(len(layers))
        other = fuse(ft, build_tokens([layers[i] for i in perm], cfg)).omega.data
        perm_err = max(perm_err, float(np.abs(other - base.omega.data).max()))
    assert perm_err <= 1e-6

    # identical tokens: exact in real arithmetic, so checked in 64-bit; float32 is only
    # equal up to rounding in the softmax-weighted sum (relative error reported)
    cfg_m = FusionConfig()
    ft_m = FusionTransformer(enc.channels, cfg_m, np.random.default_rng(2))
    f32 = [fuse(ft_m, build_tokens([layers[0]] * n, cfg_m)).omega.data for n in (1, 5)]
    rel32 = float(np.abs(f32[0] - f32[1]).max() / np.abs(f32[0]).max())
    ft_m.to(np.float64)
    one = TargetLayer(layers[0].plan, Tensor(layers[0].features.data.astype(np.float64)))
    single = fuse(ft_m, build_tokens([one], cfg_m), np.float64).omega.data
    repeated = fuse(ft_m, build_tokens([one] * 5, cfg_m), np.float64).omega.data
    ident_err = float(np.abs(single - repeated).max())
    assert ident_err <= 1e-6

    occ = base.occupancy
    om = base.omega.data[0]
    assert np.all(om[:, ~occ] == 0.0)
    assert np.all(base.renderer_input().data[0, -1][~occ] == 0.0)
    return (f"permutation {perm_err:.1e}, single vs 5 identical {ident_err:.1e} (float32 rel {rel32:.1e}), "
            f"{int((~occ).sum())} untouched pixels exactly zero")


def _desk_model_cfg():
    return TrainConfig().model_config()


# ---------------------------------------------------------------- 5

@criterion(5, "loss oracles")
def test_loss_oracles():
    rng = np.random.default_rng(5)
    pool_err = 0.0
    for _ in range(20):
        x = rng.normal(size=(1, 3, 64, 64))
        y = rng.normal(size=(1, 3, 64, 64))
        for k in (0, 1, 2, 3):
            ref_x, ref_y = x, y
            for _ in range(k):
                ref_x = block_reduce(ref_x, (1, 1, 2, 2), np.mean)
                ref_y = block_reduce(ref_y, (1, 1, 2, 2), np.mean)
            pool_err = max(pool_err, float(np.abs(downsample(Tensor(x), k).data - ref_x).max()))
            ours = loss_antibias(Tensor(x), Tensor(y), k).item()
            pool_err = max(pool_err, abs(ours - float(np.mean(np.abs(ref_x - ref_y)))))
    assert pool_err <= 1e-10

    exact = total_loss([Decimal(1)] * 4, [Decimal(s) for s in ("0.2", "0.1", "0.05", "0.8")])
    assert exact == Decimal("1.15")
    as_float = total_loss([1.0] * 4, LossWeights())
    assert abs(as_float - 1.15) <= math.ulp(1.15)

    avg = average_error(20.0, 0.75, 0.1)
    assert abs(avg - 79.4) <= 0.1
    return (f"pooling err {pool_err:.1e}, total = {exact} exact (binary float {as_float!r}, within 1 ulp), "
            f"average {avg:.2f}")


# ---------------------------------------------------------------- 6

@criterion(6, "end-to-end overfit")
def test_overfit(scene, tmp_path):
    cfg = TrainConfig(n_sources=5, target=0, sources=OVERFIT_SOURCES, steps=500, seed=0)
    t0 = time.perf_counter()
    trainer = train(scene.to_subject(), cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    hist = trainer.history
    drop = 1 - hist[-1]["color"] / hist[0]["color"]

    sub = scene.with_heldout()
    cache = PlanCache(sub, trainer.net.cfg)
    train_ids = list(range(len(scene.frames)))
    psnrs = []
    for j, fr in enumerate(scene.heldout):
        src = select_sources(fr.pose, train_ids, cfg.n_sources, sub)
        pred = to_image(render_target(trainer.net, cache, src, len(scene.frames) + j))
        psnrs.append(compute_metrics(pred, fr.image).psnr)
    train_psnr = compute_metrics(to_image(render_target(trainer.net, cache, list(OVERFIT_SOURCES), 0)),
                                 scene.frames[0].image).psnr
    detail = (f"color {hist[0]['color']:.4f} -> {hist[-1]['color']:.4f} ({100 * drop:.1f}% drop), "
              f"{elapsed:.0f}s, held-out PSNR {', '.join(f'{p:.2f}' for p in psnrs)} dB "
              f"(T = {PSNR_THRESHOLD}), training target {train_psnr:.2f} dB")
    assert drop >= 0.8, detail
    assert elapsed < 900, detail
    assert min(psnrs) >= PSNR_THRESHOLD, detail
    assert train_psnr >= PSNR_THRESHOLD, detail
    return detail


# ---------------------------------------------------------------- 7

@criterion(7, "render time grows with N")
def test_bench_trend(scene):
    net = GNH(_desk_model_cfg(), np.random.default_rng(0))
    rows = bench(net, scene, (1, 3, 5, 7), repeats=7)
    totals = [r["total"] for r in rows]
    detail = "median ms " + ", ".join(f"N={r['n_sources']}: {1e3 * r['total']:.1f}" for r in rows)
    assert all(b > a for a, b in zip(totals, totals[1:])), detail
    return detail


# ---------------------------------------------------------------- 8

@criterion(8, "determinism with --threads 1")
def test_determinism(tmp_path):
    scene_dir = tmp_path / "scene"
    assert cli.main(["synth", "--out", str(scene_dir), "--seed", "11", "--threads", "1"]) == 0
    (tmp_path / "cfg.txt").write_text(format_config(TrainConfig(steps=8)))
    for run in ("a", "b"):
        assert cli.main(["train", "--scene", str(scene_dir), "--config", str(tmp_path / "cfg.txt"),
                         "--out", str(tmp_path / run), "--seed", "5", "--threads", "1", "--quiet"]) == 0
    ck = [(tmp_path / r / "model.ckpt").read_bytes() for r in "ab"]
    lc = [(tmp_path / r / "loss.csv").read_bytes() for r in "ab"]
    assert ck[0] == ck[1], "checkpoints differ"
    assert lc[0] == lc[1], "loss traces differ"
    n_steps = len(lc[0].splitlines()) - 1
    return f"checkpoints ({len(ck[0])} bytes) and loss.csv ({n_steps} steps) byte-identical"
