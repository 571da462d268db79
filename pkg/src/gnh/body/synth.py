"""Procedural capsule-limb humanoid with an SMPL-compatible 24-joint tree.

Each bone becomes a closed capsule mesh. Vertices are skinned mostly to the
bone's own joint and blended towards the parent joint near the bone start and
towards the child joint near its end. The vertex budget is met exactly by
first meshing all capsules under budget and then splitting the largest faces
at their (surface-projected) centroids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .model import SMPL_PARENTS, SkinnedBodyModel

# Approximate SMPL neutral rest joints, metres, y up, subject facing +z.
HUMANOID_JOINTS = np.array([
    [0.000, 0.000, 0.000],   # 0 pelvis
    [0.060, -0.090, 0.000],  # 1 left hip
    [-0.060, -0.090, 0.000], # 2 right hip
    [0.000, 0.110, -0.020],  # 3 spine1
    [0.100, -0.470, 0.000],  # 4 left knee
    [-0.100, -0.470, 0.000], # 5 right knee
    [0.000, 0.250, 0.000],   # 6 spine2
    [0.090, -0.870, -0.030], # 7 left ankle
    [-0.090, -0.870, -0.030],# 8 right ankle
    [0.000, 0.310, 0.010],   # 9 spine3
    [0.110, -0.930, 0.100],  # 10 left foot
    [-0.110, -0.930, 0.100], # 11 right foot
    [0.000, 0.520, -0.010],  # 12 neck
    [0.080, 0.420, -0.010],  # 13 left collar
    [-0.080, 0.420, -0.010], # 14 right collar
    [0.000, 0.600, 0.040],   # 15 head
    [0.180, 0.460, -0.020],  # 16 left shoulder
    [-0.180, 0.460, -0.020], # 17 right shoulder
    [0.440, 0.450, -0.040],  # 18 left elbow
    [-0.440, 0.450, -0.040], # 19 right elbow
    [0.700, 0.450, -0.030],  # 20 left wrist
    [-0.700, 0.450, -0.030], # 21 right wrist
    [0.790, 0.440, -0.040],  # 22 left hand
    [-0.790, 0.440, -0.040], # 23 right hand
])

# (owner joint, end joint or -1, radius); end -1 uses ``end_offset``.
HUMANOID_SEGMENTS = [
    (0, 3, 0.115), (3, 6, 0.125), (6, 9, 0.13), (9, 12, 0.12),
    (1, 4, 0.075), (2, 5, 0.075), (4, 7, 0.055), (5, 8, 0.055),
    (7, 10, 0.045), (8, 11, 0.045),
    (13, 16, 0.055), (14, 17, 0.055), (16, 18, 0.048), (17, 19, 0.048),
    (18, 20, 0.042), (19, 21, 0.042), (20, 22, 0.038), (21, 23, 0.038),
    (12, 15, 0.055), (15, -1, 0.10),
]
HEAD_OFFSET = np.array([0.0, 0.16, 0.0])


@dataclass
class Segment:
    start: int
    end: int
    radius: float
    end_point: Optional[np.ndarray] = None


@dataclass
class BodyConfig:
    n_vertices: int = 1500
    seed: int = 0
    jitter: float = 0.0          # relative random perturbation of radii and bone offsets
    blend: float = 0.25          # fraction of a bone over which weights blend into neighbours
    joints: np.ndarray = field(default_factory=lambda: HUMANOID_JOINTS.copy())
    parents: np.ndarray = field(default_factory=lambda: SMPL_PARENTS.copy())
    segments: Sequence[Tuple[int, int, float]] = tuple(HUMANOID_SEGMENTS)
    end_offset: np.ndarray = field(default_factory=lambda: HEAD_OFFSET.copy())


def _frame(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0, 0]) if abs(d[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def _capsule_counts(length: float, radius: float, h: float) -> Tuple[int, int, int]:
    n_seg = max(6, int(round(2 * math.pi * radius / h)))
    n_cap = max(1, int(round(0.5 * math.pi * radius / h)))
    n_mid = max(0, int(round(length / h)) - 1)
    return n_seg, n_cap, n_mid


def _capsule_mesh(a, b, radius, n_seg, n_cap, n_mid):
    """Vertices, faces and axial parameter t in [0, 1] of a closed capsule a->b."""
    axis = b - a
    L = float(np.linalg.norm(axis))
    d = axis / L
    e1, e2 = _frame(d)
    profile = []  # (axial offset s, ring radius)
    for i in range(1, n_cap + 1):
        phi = -math.pi / 2 + i * (math.pi / 2) / n_cap
        profile.append((radius * math.sin(phi), radius * math.cos(phi)))
    for m in range(1, n_mid + 1):
        profile.append((L * m / (n_mid + 1), radius))
    for i in range(n_cap):
        phi = i * (math.pi / 2) / n_cap
        profile.append((L + radius * math.sin(phi), radius * math.cos(phi)))
    alpha = 2 * math.pi * np.arange(n_seg) / n_seg
    ring_dirs = np.cos(alpha)[:, None] * e1 + np.sin(alpha)[:, None] * e2
    verts, s_all = [a - radius * d], [-radius]
    for s, rho in profile:
        verts.extend(a + s * d + rho * ring_dirs)
        s_all.extend([s] * n_seg)
    verts.append(b + radius * d)
    s_all.append(L + radius)
    verts = np.array(verts)
    R = len(profile)
    ring = lambda k, j: 1 + k * n_seg + (j % n_seg)
    top = len(verts) - 1
    faces = []
    for j in range(n_seg):
        faces.append((0, ring(0, j + 1), ring(0, j)))
        faces.append((top, ring(R - 1, j), ring(R - 1, j + 1)))
        for k in range(R - 1):
            faces.append((ring(k, j), ring(k, j + 1), ring(k + 1, j + 1)))
            faces.append((ring(k, j), ring(k + 1, j + 1), ring(k + 1, j)))
    faces = np.array(faces, dtype=np.int64)
    # orient outwards: normal must point away from the closest axis point
    fv = verts[faces]
    n = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
    c = fv.mean(1)
    proj = a + np.clip((c - a) @ d, 0, L)[:, None] * d
    flip = np.einsum("ij,ij->i", n, c - proj) < 0
    faces[flip] = faces[flip][:, ::-1]
    t = np.clip(np.array(s_all) / L, 0.0, 1.0)
    return verts, faces, t


def _project_to_capsule(p, a, b, radius):
    d = b - a
    L = np.linalg.norm(d)
    d = d / L
    q = a + np.clip((p - a) @ d, 0, L) * d
    off = p - q
    n = np.linalg.norm(off)
    return q + off / n * radius if n > 1e-12 else p


def synthesize_body(config: Optional[BodyConfig] = None) -> SkinnedBodyModel:
    cfg = config or BodyConfig()
    rng = np.random.default_rng(cfg.seed)
    parents = np.asarray(cfg.parents)
    joints = np.asarray(cfg.joints, dtype=np.float64).copy()
    if cfg.jitter > 0:
        # scale each bone offset, parents first so children follow
        offsets = np.zeros_like(joints)
        for j in range(1, len(joints)):
            offsets[j] = joints[j] - joints[parents[j]]
        scale = 1 + cfg.jitter * rng.uniform(-1, 1, size=len(joints))
        for j in range(1, len(joints)):
            joints[j] = joints[parents[j]] + offsets[j] * scale[j]
    segs = []
    for start, end, radius in cfg.segments:
        r = radius * (1 + cfg.jitter * rng.uniform(-1, 1)) if cfg.jitter > 0 else radius
        b = joints[end] if end >= 0 else joints[start] + np.asarray(cfg.end_offset)
        segs.append(Segment(start, end, float(r), b))
    V_target = int(cfg.n_vertices)

    def mesh_all(h):
        return [_capsule_counts(np.linalg.norm(s.end_point - joints[s.start]), s.radius, h) for s in segs]

    def count(counts):
        return sum(ns * (2 * nc + nm) + 2 for ns, nc, nm in counts)

    area = sum(2 * math.pi * s.radius * np.linalg.norm(s.end_point - joints[s.start])
               + 4 * math.pi * s.radius ** 2 for s in segs)
    h = math.sqrt(area / V_target)
    counts = mesh_all(h)
    while count(counts) > V_target:
        h *= 1.03
        counts = mesh_all(h)
        if h > 10:
            raise ValueError(f"cannot mesh {len(segs)} capsules with only {V_target} vertices")

    verts, faces, weights, owner_seg = [], [], [], []
    J = len(joints)
    offset = 0
    for si, (s, (ns, nc, nm)) in enumerate(zip(segs, counts)):
        a = joints[s.start]
        v, f, t = _capsule_mesh(a, s.end_point, s.radius, ns, nc, nm)
        w = np.zeros((len(v), J))
        beta = cfg.blend
        w_par = 0.5 * np.clip(1 - t / beta, 0, 1) ** 2 if parents[s.start] >= 0 else np.zeros_like(t)
        w_child = 0.5 * np.clip(1 - (1 - t) / beta, 0, 1) ** 2 if s.end >= 0 else np.zeros_like(t)
        if parents[s.start] >= 0:
            w[:, parents[s.start]] += w_par
        if s.end >= 0:
            w[:, s.end] += w_child
        w[:, s.start] += 1 - w_par - w_child
        verts.append(v)
        faces.append(f + offset)
        weights.append(w)
        owner_seg.append(np.full(len(f), si))
        offset += len(v)
    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    weights = np.concatenate(weights)
    face_seg = np.concatenate(owner_seg)

    # top up the budget by splitting the largest faces at their centroids
    while len(verts) < V_target:
        fv = verts[faces]
        areas = np.linalg.norm(np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0]), axis=1)
        cand = np.flatnonzero(areas >= np.quantile(areas, 0.9))
        fi = int(rng.choice(cand))
        i0, i1, i2 = faces[fi]
        seg = segs[face_seg[fi]]
        p = _project_to_capsule(verts[[i0, i1, i2]].mean(0), joints[seg.start], seg.end_point, seg.radius)
        verts = np.vstack([verts, p])
        weights = np.vstack([weights, weights[[i0, i1, i2]].mean(0)])
        n = len(verts) - 1
        faces[fi] = (i0, i1, n)
        faces = np.vstack([faces, [(i1, i2, n), (i2, i0, n)]])
        face_seg = np.concatenate([face_seg, [face_seg[fi]] * 2])

    weights = weights / weights.sum(1, keepdims=True)
    return SkinnedBodyModel(template_vertices=verts, faces=faces.astype(np.int64),
                            rest_joints=joints, parents=parents.astype(np.int64),
                            skin_weights=weights)


def arm_config(n_vertices: int = 300, radius: float = 0.05, bone: float = 0.3) -> BodyConfig:
    """Two-capsule straight arm along +x: shoulder -> elbow -> wrist."""
    joints = np.array([[0.0, 0, 0], [bone, 0, 0], [2 * bone, 0, 0]])
    return BodyConfig(n_vertices=n_vertices, joints=joints, parents=np.array([-1, 0, 1]),
                      segments=((0, 1, radius), (1, 2, radius)))


def segment_of_vertex(model: SkinnedBodyModel) -> np.ndarray:
    """Dominant joint per vertex (argmax skinning weight)."""
    return np.argmax(model.skin_weights, axis=1)
