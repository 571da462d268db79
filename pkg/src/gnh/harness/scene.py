"""Scene container, on-disk format, and a procedural synthetic subject.

On disk a scene is a directory::

    scene.json      {"format": "gnh-scene/1", "subject": str, "fps": float, "body": "body.npz",
                     "frames": [FRAME, ...], "heldout": [FRAME, ...]}
    body.npz        skinned body model (see gnh.body.io)
    images/*.png    8-bit RGB frames
    albedo.npy      per-vertex colours (synthetic subjects only)

    FRAME = {"image": "images/000.png",
             "pose": {"rotations": [[x, y, z] * J], "translation": [x, y, z]},
             "camera": {"extrinsic": 3x4, "intrinsic": 3x3, "size": [H, W]}}

Floats are written with ``repr`` and therefore reload exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from ..body.io import load_body_model, save_body_model
from ..body.model import Pose, SkinnedBodyModel, lbs_pose
from ..body.synth import BodyConfig, segment_of_vertex, synthesize_body
from ..geometry.camera import Camera, orbit_camera
from ..geometry.raster import rasterize
from ..training.model import Frame, Subject

FORMAT = "gnh-scene/1"


class SceneError(ValueError):
    pass


@dataclass
class Scene:
    model: SkinnedBodyModel
    frames: List[Frame]
    heldout: List[Frame] = field(default_factory=list)
    subject: str = "synthetic"
    fps: float = 30.0
    albedo: Optional[np.ndarray] = None   # per-vertex colours of procedural subjects

    def __post_init__(self):
        for fr in self.frames + self.heldout:
            if fr.pose.n_joints != self.model.n_joints:
                raise SceneError(f"frame pose has {fr.pose.n_joints} joints, body has {self.model.n_joints}")

    def to_subject(self) -> Subject:
        return Subject(self.model, self.frames)

    def with_heldout(self) -> Subject:
        """Training frames followed by held-out frames (held-out indices start at len(frames))."""
        return Subject(self.model, self.frames + self.heldout)


# ---------------------------------------------------------------- images

def load_image(path) -> np.ndarray:
    """Any PIL-readable RGB image (PNG, PPM, ...) as H x W x 3 float32 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def save_image(path, image: np.ndarray) -> None:
    a = np.clip(np.round(np.asarray(image, np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a, "RGB").save(path, format="PNG")


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so a PNG round trip is lossless."""
    return (np.clip(np.round(np.asarray(image, np.float64) * 255.0), 0, 255) / 255.0).astype(np.float32)


# ---------------------------------------------------------------- (de)serialisation

def _camera_json(cam: Camera) -> dict:
    return {"extrinsic": cam.extrinsic.tolist(), "intrinsic": cam.intrinsic.tolist(), "size": list(cam.size)}


def _camera_from(d) -> Camera:
    return Camera(np.array(d["extrinsic"], np.float64), np.array(d["intrinsic"], np.float64),
                  tuple(int(x) for x in d["size"]))


def _pose_json(p: Pose) -> dict:
    return {"rotations": p.joint_rotations.tolist(), "translation": p.global_translation.tolist()}


def _pose_from(d) -> Pose:
    return Pose(np.array(d["rotations"], np.float64), np.array(d["translation"], np.float64))


def save_scene(scene: Scene, root) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    save_body_model(root / "body.npz", scene.model)
    if scene.albedo is not None:
        np.save(root / "albedo.npy", scene.albedo)

    def dump(frames, tag):
        out = []
        for i, fr in enumerate(frames):
            rel = f"images/{tag}{i:03d}.png"
            save_image(root / rel, fr.image)
            out.append({"image": rel, "pose": _pose_json(fr.pose), "camera": _camera_json(fr.camera)})
        return out

    doc = {"format": FORMAT, "subject": scene.subject, "fps": scene.fps, "body": "body.npz",
           "frames": dump(scene.frames, "frame"), "heldout": dump(scene.heldout, "heldout")}
    (root / "scene.json").write_text(json.dumps(doc, indent=1) + "\n")
    return root


def load_scene(root) -> Scene:
    root = Path(root)
    path = root / "scene.json" if root.is_dir() else root
    root = path.parent
    if not path.exists():
        raise SceneError(f"no scene file at {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != FORMAT:
        raise SceneError(f"{path}: unsupported scene format {doc.get('format')!r}")
    model = load_body_model(root / doc.get("body", "body.npz"))

    def frames(key):
        out = []
        for d in doc.get(key, []):
            out.append(Frame(load_image(root / d["image"]), _pose_from(d["pose"]), _camera_from(d["camera"])))
        return out

    albedo = np.load(root / "albedo.npy") if (root / "albedo.npy").exists() else None
    return Scene(model, frames("frames"), frames("heldout"), doc.get("subject", "unknown"),
                 float(doc.get("fps", 30.0)), albedo)


# ---------------------------------------------------------------- synthetic subject

@dataclass
class MotionConfig:
    n_frames: int = 12
    yaw_range: float = 0.6        # root yaw sweeps +-yaw_range (radians)
    arm_drop: float = 1.1         # shoulders lowered from the rest T-pose
    arm_swing: float = 0.5
    elbow_bend: float = 0.6
    leg_swing: float = 0.35
    knee_bend: float = 0.5
    n_vertices: int = 1500
    image_size: tuple = (64, 64)
    focal: float = 90.0
    distance: float = 2.8
    camera_yaw: float = 0.0


# SMPL joint ids used by the procedural motion
_L_HIP, _R_HIP, _L_KNEE, _R_KNEE, _SPINE = 1, 2, 4, 5, 6
_L_SHOULDER, _R_SHOULDER, _L_ELBOW, _R_ELBOW = 16, 17, 18, 19


def motion_pose(phase: float, motion: MotionConfig, n_joints: int = 24) -> Pose:
    """Walking-like joint curves at ``phase`` in [0, 1) (one cycle over the sequence)."""
    a = 2 * math.pi * phase
    s, c = math.sin(a), math.cos(a)
    rot = np.zeros((n_joints, 3))
    rot[0] = [0.0, motion.yaw_range * math.sin(a + 0.3), 0.0]
    rot[_SPINE] = [0.08 * s, 0.0, 0.05 * c]
    rot[_L_SHOULDER] = [motion.arm_swing * s, 0.0, -motion.arm_drop]
    rot[_R_SHOULDER] = [-motion.arm_swing * s, 0.0, motion.arm_drop]
    rot[_L_ELBOW] = [0.0, -motion.elbow_bend * (0.6 + 0.4 * c), 0.0]
    rot[_R_ELBOW] = [0.0, motion.elbow_bend * (0.6 - 0.4 * c), 0.0]
    rot[_L_HIP] = [-motion.leg_swing * s, 0.0, 0.0]
    rot[_R_HIP] = [motion.leg_swing * s, 0.0, 0.0]
    rot[_L_KNEE] = [motion.knee_bend * max(0.0, s), 0.0, 0.0]
    rot[_R_KNEE] = [motion.knee_bend * max(0.0, -s), 0.0, 0.0]
    return Pose(rot, np.zeros(3))


def procedural_albedo(model: SkinnedBodyModel, seed: int) -> np.ndarray:
    """Per-vertex RGB: a colour per body part modulated by stripes in rest coordinates."""
    rng = np.random.default_rng(seed)
    seg = segment_of_vertex(model)
    palette = 0.25 + 0.7 * rng.random((model.n_joints, 3))
    v = model.template_vertices
    freq = rng.uniform(12, 20, 3)
    phase = rng.uniform(0, 2 * np.pi, 3)
    stripes = 0.75 + 0.25 * np.sin(v[:, [1, 0, 2]] * freq + phase)
    return np.clip(palette[seg] * stripes, 0.0, 1.0)


LIGHT_DIR = np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8])


def render_ground_truth(model: SkinnedBodyModel, albedo: np.ndarray, pose: Pose, cam: Camera,
                        light=LIGHT_DIR, ambient: float = 0.35):
    """Flat Lambertian shading of the posed body, composited on black. Returns (image, mask)."""
    mesh = lbs_pose(model, pose)
    r = rasterize(mesh.vertices, mesh.faces, cam)
    mask = r.face_id >= 0
    fid = r.face_id[mask]
    v = mesh.vertices[mesh.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    shade = ambient + (1 - ambient) * np.clip(n @ np.asarray(light), 0.0, None)
    col = np.einsum("pk,pkc->pc", r.bary[mask], albedo[mesh.faces[fid]])
    img = np.zeros(cam.size + (3,))
    img[mask] = col * shade[fid, None]
    return quantize(img), mask


def scene_camera(motion: MotionConfig) -> Camera:
    return orbit_camera(motion.camera_yaw, motion.distance, 0.0, target=(0.0, -0.04, 0.0),
                        focal=motion.focal, size=tuple(motion.image_size))


def generate_synthetic_scene(seed: int = 0, n_frames: Optional[int] = None,
                             motion: Optional[MotionConfig] = None) -> Scene:
    """One procedural subject filmed by a fixed camera; held-out frames sit half-way between
    consecutive training poses."""
    motion = motion or MotionConfig()
    if n_frames is not None:
        motion = MotionConfig(**{**motion.__dict__, "n_frames": n_frames})
    if motion.n_frames < 1:
        raise SceneError("n_frames must be >= 1")
    model = synthesize_body(BodyConfig(n_vertices=motion.n_vertices, seed=seed))
    albedo = procedural_albedo(model, seed)
    cam = scene_camera(motion)

    def frame(phase):
        pose = motion_pose(phase, motion, model.n_joints)
        img, _ = render_ground_truth(model, albedo, pose, cam)
        return Frame(img, pose, cam)

    n = motion.n_frames
    frames = [frame(i / n) for i in range(n)]
    heldout = [frame((i + 0.5) / n) for i in (2, n // 2 + 1) if i < n]
    return Scene(model, frames, heldout, f"synthetic-{seed}", 30.0, albedo)
