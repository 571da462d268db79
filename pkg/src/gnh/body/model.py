"""Skinned body model: forward kinematics, linear blend skinning, normals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

# SMPL kinematic tree (24 joints).
SMPL_PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])
SMPL_NUM_VERTICES = 6890
SMPL_NUM_JOINTS = 24


class ModelError(ValueError):
    pass


class PoseError(ValueError):
    pass


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3)."""
    r = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    small = theta < 1e-12
    axis = r / np.where(small, 1.0, theta)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    Kx = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1).reshape(r.shape[:-1] + (3, 3))
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    R = np.eye(3) + s * Kx + (1 - c) * (Kx @ Kx)
    return R


def rotation_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rodrigues` (angle in [0, pi])."""
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def canonical_rotvec(rotvec: np.ndarray) -> np.ndarray:
    """Wrap each axis-angle magnitude into [0, 2*pi), keeping the axis."""
    r = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    wrapped = np.mod(theta, 2 * np.pi)
    return np.where(theta > 0, r / np.where(theta > 0, theta, 1) * wrapped, r)


@dataclass
class Pose:
    """Per-joint axis-angle rotations (J x 3, radians) and a root translation."""

    joint_rotations: np.ndarray
    global_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.joint_rotations, dtype=np.float64)
        if rot.ndim == 1:
            rot = rot.reshape(-1, 3)
        trans = np.asarray(self.global_translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise PoseError("pose contains non-finite values")
        self.joint_rotations = canonical_rotvec(rot)
        self.global_translation = trans

    @classmethod
    def zero(cls, n_joints: int = SMPL_NUM_JOINTS) -> "Pose":
        return cls(np.zeros((n_joints, 3)))

    @property
    def n_joints(self) -> int:
        return len(self.joint_rotations)

    def with_root(self, R: np.ndarray, root_joint=None) -> "Pose":
        """Pose whose posed body is R times this one (rotation about the world origin).

        ``root_joint`` is the model's rest root position; the translation is
        adjusted so the rotation pivots on the origin rather than the root.
        """
        R = np.asarray(R, dtype=np.float64)
        rot = self.joint_rotations.copy()
        rot[0] = rotation_to_rotvec(R @ rodrigues(rot[0]))
        j0 = np.zeros(3) if root_joint is None else np.asarray(root_joint, np.float64)
        return Pose(rot, R @ (j0 + self.global_translation) - j0)


@dataclass(frozen=True)
class SkinnedBodyModel:
    template_vertices: np.ndarray  # V x 3
    faces: np.ndarray              # F x 3
    rest_joints: np.ndarray        # J x 3
    parents: np.ndarray            # J, parents[0] == -1
    skin_weights: np.ndarray       # V x J

    def __post_init__(self):
        V = self.template_vertices.shape[0]
        J = self.rest_joints.shape[0]
        if self.template_vertices.shape != (V, 3) or self.rest_joints.shape != (J, 3):
            raise ModelError("template and joints must be (n, 3)")
        if self.skin_weights.shape != (V, J):
            raise ModelError(f"weights shape {self.skin_weights.shape} != ({V}, {J})")
        if (self.skin_weights < 0).any():
            raise ModelError("negative skinning weight")
        if np.abs(self.skin_weights.sum(1) - 1).max() > 1e-6:
            raise ModelError("skinning weight rows must sum to 1")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            raise ModelError("face indexes an unknown vertex")
        if len(self.parents) != J or self.parents[0] != -1:
            raise ModelError("parents must have one entry per joint and a root at 0")
        _ = self.joint_order  # validates the tree

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.rest_joints.shape[0]

    @property
    def joint_order(self) -> list:
        """Joints ordered parents-first; raises on cycles or orphan joints."""
        J = len(self.parents)
        order, placed = [0], {0}
        children = {j: [] for j in range(J)}
        for j in range(1, J):
            p = int(self.parents[j])
            if p < 0 or p >= J or p == j:
                raise ModelError(f"joint {j} has invalid parent {p}")
            children[p].append(j)
        frontier = [0]
        while frontier:
            nxt = []
            for p in frontier:
                for c in children[p]:
                    if c in placed:
                        raise ModelError("kinematic tree has a cycle")
                    placed.add(c)
                    order.append(c)
                    nxt.append(c)
            frontier = nxt
        if len(order) != J:
            raise ModelError("kinematic tree is not connected to the root")
        return order


@dataclass
class PosedMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    joints_world: Optional[np.ndarray] = None
    vertex_rotations: Optional[np.ndarray] = None  # V x 3 x 3 blended linear part


def forward_kinematics(model: SkinnedBodyModel, pose: Pose) -> np.ndarray:
    """World transforms (J x 4 x 4) of every joint frame."""
    if pose.n_joints != model.n_joints:
        raise PoseError(f"pose has {pose.n_joints} joints, model has {model.n_joints}")
    R = rodrigues(pose.joint_rotations)
    J = model.rest_joints.astype(np.float64)
    G = np.zeros((model.n_joints, 4, 4))
    for j in model.joint_order:
        local = np.eye(4)
        local[:3, :3] = R[j]
        p = model.parents[j]
        if p < 0:
            local[:3, 3] = J[j] + pose.global_translation
            G[j] = local
        else:
            local[:3, 3] = J[j] - J[p]
            G[j] = G[p] @ local
    return G


def skinning_transforms(model: SkinnedBodyModel, pose: Pose) -> np.ndarray:
    """Per-joint transforms relative to the rest pose (G_j composed with rest inverse)."""
    G = forward_kinematics(model, pose)
    A = G.copy()
    A[:, :3, 3] -= np.einsum("jab,jb->ja", G[:, :3, :3], model.rest_joints.astype(np.float64))
    return A, G


def lbs_pose(model: SkinnedBodyModel, pose: Pose) -> PosedMesh:
    A, G = skinning_transforms(model, pose)
    T = (model.skin_weights.astype(np.float64) @ A.reshape(model.n_joints, 16)).reshape(-1, 4, 4)
    v = np.einsum("vab,vb->va", T[:, :3, :3], model.template_vertices) + T[:, :3, 3]
    return PosedMesh(vertices=v, faces=model.faces, normals=compute_normals(v, model.faces),
                     joints_world=G[:, :3, 3].copy(), vertex_rotations=T[:, :3, :3].copy())


def compute_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; vertices without area get +z."""
    v = np.asarray(vertices, dtype=np.float64)
    n = np.zeros_like(v)
    if len(faces):
        f = np.asarray(faces)
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for k in range(3):
            np.add.at(n, f[:, k], fn)
    length = np.linalg.norm(n, axis=1, keepdims=True)
    out = np.where(length > 1e-20, n / np.where(length > 1e-20, length, 1), 0.0)
    out[length[:, 0] <= 1e-20] = (0.0, 0.0, 1.0)
    return out


def with_normals(vertices: np.ndarray, faces: np.ndarray) -> PosedMesh:
    return PosedMesh(vertices=np.asarray(vertices, np.float64), faces=np.asarray(faces),
                     normals=compute_normals(vertices, faces))


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> PosedMesh:
    """Closed, outward-oriented geodesic sphere."""
    t = (1 + 5 ** 0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]
        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, float)
    return with_normals(v, np.array(faces, dtype=np.int64))
