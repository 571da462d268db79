import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image
from skimage.metrics import structural_similarity

from gnh.harness import (MetricsError, MotionConfig, average_error, compute_metrics, generate_synthetic_scene,
                         load_image, load_scene, psnr, render_ground_truth, save_scene, ssim)
from gnh.harness import cli
from gnh.training import TrainConfig, format_config

SMALL = MotionConfig(n_frames=4, n_vertices=500, image_size=(32, 32), focal=45.0)
TINY = dict(n_sources=2, feature_size=32, c_coarse=8, c_fine=8, fusion_dim=16, fusion_depth=1, fusion_heads=2,
            unet_base=8, unet_levels=3)


# ---------------------------------------------------------------- scenes

def test_synthetic_scene_counts_and_determinism():
    a = generate_synthetic_scene(5, n_frames=10, motion=SMALL)
    b = generate_synthetic_scene(5, n_frames=10, motion=SMALL)
    assert len(a.frames) == 10 and len(a.heldout) == 2
    for fa, fb in zip(a.frames + a.heldout, b.frames + b.heldout):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.pose.joint_rotations, fb.pose.joint_rotations)
    c = generate_synthetic_scene(6, n_frames=10, motion=SMALL)
    assert not np.array_equal(a.frames[0].image, c.frames[0].image)


def test_saved_scenes_byte_identical(tmp_path):
    for name in ("a", "b"):
        save_scene(generate_synthetic_scene(2, motion=SMALL), tmp_path / name)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) >= 4
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_frame_zero_rerender_bitwise():
    sc = generate_synthetic_scene(3, motion=SMALL)
    f0 = sc.frames[0]
    img, mask = render_ground_truth(sc.model, sc.albedo, f0.pose, f0.camera)
    assert np.array_equal(img, f0.image)
    assert mask.any() and not mask.all()
    assert np.all(img[~mask] == 0)


def test_scene_round_trip(tmp_path):
    sc = generate_synthetic_scene(4, motion=SMALL)
    save_scene(sc, tmp_path / "s")
    back = load_scene(tmp_path / "s")
    assert back.subject == sc.subject and len(back.frames) == len(sc.frames)
    for fa, fb in zip(sc.frames + sc.heldout, back.frames + back.heldout):
        assert np.array_equal(fa.pose.joint_rotations, fb.pose.joint_rotations)
        assert np.array_equal(fa.pose.global_translation, fb.pose.global_translation)
        assert np.array_equal(fa.camera.extrinsic, fb.camera.extrinsic)
        assert np.array_equal(fa.camera.intrinsic, fb.camera.intrinsic)
        assert fa.camera.size == fb.camera.size
        assert np.array_equal(fa.image, fb.image)
    assert np.array_equal(back.model.faces, sc.model.faces)
    assert np.array_equal(back.albedo, sc.albedo)


def test_load_ppm(tmp_path):
    a = (np.arange(4 * 5 * 3) % 256).astype(np.uint8).reshape(4, 5, 3)
    Image.fromarray(a).save(tmp_path / "x.ppm")
    np.testing.assert_array_equal(load_image(tmp_path / "x.ppm"), a.astype(np.float32) / 255.0)


# ---------------------------------------------------------------- metrics

def test_metrics_identity_and_extremes():
    x = np.random.default_rng(0).random((32, 32, 3))
    r = compute_metrics(x, x)
    assert (r.psnr, r.ssim, r.lpips, r.average) == (99.0, 1.0, 0.0, 0.0)
    r = compute_metrics(np.zeros((16, 16, 3)), np.ones((16, 16, 3)))
    assert r.psnr == 0.0 and r.mse == 1.0
    with pytest.raises(MetricsError):
        compute_metrics(np.zeros((16, 16, 3)), np.zeros((16, 8, 3)))


def test_average_error_hand_value():
    assert average_error(20.0, 0.75, 0.1) == pytest.approx(79.37, abs=0.01)
    assert abs(average_error(20.0, 0.75, 0.1) - 79.4) < 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.3))
def test_metrics_consistency(seed, sigma):
    rng = np.random.default_rng(seed)
    a = rng.random((24, 24, 3))
    b = np.clip(a + rng.normal(0, sigma, a.shape), 0, 1)
    r = compute_metrics(b, a)
    assert r.mse == pytest.approx(10 ** (-r.psnr / 10), rel=1e-9)
    ref = structural_similarity(b, a, channel_axis=2, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0)
    assert ssim(b, a) == pytest.approx(ref, abs=1e-12)
    assert 0 <= r.ssim <= 1 and r.lpips >= 0


@settings(max_examples=50, deadline=None)
@given(st.floats(5, 60), st.floats(0.02, 0.99), st.floats(1e-4, 1.0), st.floats(0.01, 0.5))
def test_average_error_monotone(p, s, lp, step):
    base = average_error(p, s, lp)
    assert average_error(p - step, s, lp) > base
    assert average_error(p, s * (1 - step), lp) > base
    assert average_error(p, s, lp + step) > base


def test_psnr_cap():
    x = np.zeros((4, 4, 3))
    assert psnr(x, x) == 99.0
    assert psnr(x, x + 1e-6) == 99.0


# ---------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_scene(generate_synthetic_scene(0, motion=SMALL), root / "scene")
    (root / "tiny.cfg").write_text(format_config(TrainConfig(**TINY, steps=2)))
    return root


def test_cli_train_render_eval(workdir, capsys):
    w = workdir
    assert cli.main(["train", "--scene", str(w / "scene"), "--config", str(w / "tiny.cfg"),
                     "--out", str(w / "run"), "--seed", "1", "--threads", "1", "--quiet"]) == 0
    assert (w / "run" / "model.ckpt").exists() and (w / "run" / "config.txt").exists()
    with open(w / "run" / "loss.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
    assert cli.main(["render", "--scene", str(w / "scene"), "--checkpoint", str(w / "run" / "model.ckpt"),
                     "--out", str(w / "renders")]) == 0
    pngs = sorted((w / "renders").glob("*.png"))
    assert len(pngs) == 2 and load_image(pngs[0]).shape == (32, 32, 3)
    assert cli.main(["eval", "--scene", str(w / "scene"), "--checkpoint", str(w / "run" / "model.ckpt"),
                     "--out", str(w / "metrics.csv"), "--split", "train"]) == 0
    with open(w / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 and rows[-1]["frame"] == "mean"
    assert "PSNR" in capsys.readouterr().out


def test_cli_bench(workdir, capsys):
    out = workdir / "bench.csv"
    assert cli.main(["bench", "--scene", str(workdir / "scene"), "--config", str(workdir / "tiny.cfg"),
                     "--n-list", "1,2", "--repeats", "1", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["n_sources"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"n_sources", "encode", "lift", "splat", "fuse", "render", "total"}


def test_cli_synth(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path / "s"), "--frames", "3", "--seed", "9"]) == 0
    assert len(load_scene(tmp_path / "s").frames) == 3


def test_cli_missing_checkpoint(workdir, capsys):
    code = cli.main(["render", "--scene", str(workdir / "scene"), "--checkpoint", str(workdir / "nope.ckpt")])
    assert code != 0
    assert "checkpoint not found" in capsys.readouterr().err


def test_cli_missing_scene(tmp_path, capsys):
    assert cli.main(["train", "--scene", str(tmp_path / "none"), "--steps", "1"]) != 0
    assert "error" in capsys.readouterr().err


def test_cli_mismatched_checkpoint(workdir, capsys):
    # a checkpoint from the tiny widths cannot be loaded into the default desk-scale model
    ckpt = workdir / "run" / "model.ckpt"
    if not ckpt.exists():
        cli.main(["train", "--scene", str(workdir / "scene"), "--config", str(workdir / "tiny.cfg"),
                  "--out", str(workdir / "run"), "--quiet"])
    (workdir / "default.cfg").write_text("")
    code = cli.main(["eval", "--scene", str(workdir / "scene"), "--checkpoint", str(ckpt),
                     "--config", str(workdir / "default.cfg")])
    assert code != 0
    assert "does not match" in capsys.readouterr().err


def test_seed_env_fallback(monkeypatch):
    args = cli.build_parser().parse_args(["synth"])
    monkeypatch.setenv("GNH_SEED", "17")
    assert cli._seed(args) == 17
    args = cli.build_parser().parse_args(["synth", "--seed", "3"])
    assert cli._seed(args) == 3
    monkeypatch.delenv("GNH_SEED")
    assert cli._seed(cli.build_parser().parse_args(["synth"])) == 0
