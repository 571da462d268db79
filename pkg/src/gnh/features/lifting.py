"""2D -> 3D lifting onto mesh vertices, retargeting, and splatting to the target view.

Geometry never receives gradients: every step splits into a plan computed in
numpy (taps, winners, metadata) and a differentiable apply that only gathers
feature rows. Plans depend on poses and cameras alone, so they can be cached
across training steps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..body.model import PosedMesh, Pose, SkinnedBodyModel, lbs_pose
from ..geometry.camera import Camera
from ..geometry.sampling import bilinear_taps, image_to_feature
from ..geometry.visibility import DEPTH_EPS, vertex_visibility
from ..numerics import functional as F
from ..numerics.tensor import Tensor


# ---------------------------------------------------------------- lifting

@dataclass
class LiftPlan:
    idx: np.ndarray      # V x 4 flat texel indices into one (H_f * W_f) map
    weights: np.ndarray  # V x 4, zero rows for invalid vertices
    valid: np.ndarray    # V booleans
    feature_size: tuple


@dataclass
class VertexFeatureCloud:
    features: Tensor     # V x C, invalid rows exactly zero
    valid: np.ndarray


def plan_lift(mesh_s: PosedMesh, cam_s: Camera, feature_size, check_src_visibility: bool = False,
              mode: str = "bilinear", eps: float = DEPTH_EPS) -> LiftPlan:
    uv, _ = cam_s.project(mesh_s.vertices, strict=False)
    uv_f = image_to_feature(uv, cam_s.size, feature_size)
    idx, w, valid = bilinear_taps(uv_f, feature_size, mode)
    if check_src_visibility:
        valid = valid & vertex_visibility(mesh_s, cam_s, eps=eps)
        w = w * valid[:, None]
    return LiftPlan(idx, w, valid, tuple(feature_size))


def feature_rows(fmap: Tensor) -> Tensor:
    """(C, H_f, W_f) or (1, C, H_f, W_f) map -> (H_f * W_f, C) rows."""
    if fmap.ndim == 4:
        if fmap.shape[0] != 1:
            raise F.DimensionError("feature_rows takes a single map")
        fmap = fmap.reshape(*fmap.shape[1:])
    C, H, W = fmap.shape
    return fmap.reshape(C, H * W).transpose(1, 0)


def apply_lift(fmap: Tensor, plan: LiftPlan) -> VertexFeatureCloud:
    if tuple(fmap.shape[-2:]) != plan.feature_size:
        raise F.DimensionError(f"map {fmap.shape[-2:]} does not match plan {plan.feature_size}")
    return VertexFeatureCloud(F.gather_rows(feature_rows(fmap), plan.idx, plan.weights), plan.valid.copy())


def lift_features(fmap: Tensor, mesh_s: PosedMesh, cam_s: Camera, check_src_visibility: bool = False,
                  mode: str = "bilinear") -> VertexFeatureCloud:
    plan = plan_lift(mesh_s, cam_s, tuple(fmap.shape[-2:]), check_src_visibility, mode)
    return apply_lift(fmap, plan)


# ---------------------------------------------------------------- retargeting

def retarget(cloud: VertexFeatureCloud, model: SkinnedBodyModel, pose_t: Pose):
    """Re-pose the body; features stay attached to vertex indices."""
    return lbs_pose(model, pose_t), cloud


# ---------------------------------------------------------------- splatting

META_NAMES = ("depth", "ndv", "dir_x", "dir_y", "dir_z")


@dataclass
class SplatPlan:
    """Which vertex lands on which target pixel, plus per-pixel metadata."""

    size: tuple               # (H_t, W_t)
    pixels: np.ndarray        # K flat pixel ids, ascending
    vertex: np.ndarray        # K winning vertex ids
    depth: np.ndarray         # K target camera depths
    meta: np.ndarray          # K x 5: depth (normalised), source n.v, source view dir in target camera
    source_id: int = 0

    @property
    def occupancy(self) -> np.ndarray:
        occ = np.zeros(self.size[0] * self.size[1], dtype=bool)
        occ[self.pixels] = True
        return occ.reshape(self.size)


@dataclass
class TargetLayer:
    """One source frame's contribution: features at occupied pixels only (sparse rows)."""

    plan: SplatPlan
    features: Tensor          # K x C

    def dense(self) -> Tensor:
        """(C, H_t, W_t) map with exact zeros at unoccupied pixels."""
        H, W = self.plan.size
        rows = F.scatter_rows(self.features, self.plan.pixels, H * W)
        return rows.transpose(1, 0).reshape(self.features.shape[1], H, W)


def source_view_metadata(mesh_s: PosedMesh, cam_s: Camera, mesh_t: PosedMesh, cam_t: Camera):
    """Per-vertex source n.v and the source viewing direction carried to the target camera frame."""
    d_s = cam_s.view_dirs(mesh_s.vertices)
    ndv = np.einsum("ij,ij->i", mesh_s.normals, d_s)
    # local skinning rotation from the source pose to the target pose
    Rs, Rt = mesh_s.vertex_rotations, mesh_t.vertex_rotations
    if Rs is None or Rt is None:
        d_world = d_s
    else:
        d_world = np.einsum("vab,vcb,vc->va", Rt, Rs, d_s)  # Rt Rs^T d
        d_world /= np.maximum(np.linalg.norm(d_world, axis=1, keepdims=True), 1e-12)
    return ndv, d_world @ cam_t.R.T


def plan_splat(valid: np.ndarray, mesh_t: PosedMesh, cam_t: Camera, size=None, radius: int = 0,
               visible: Optional[np.ndarray] = None, src_ndv: Optional[np.ndarray] = None,
               src_dir: Optional[np.ndarray] = None, source_id: int = 0) -> SplatPlan:
    """Nearest-depth splat of valid, target-visible vertices.

    Each vertex covers the (2 radius + 1)^2 pixels centred on the pixel
    containing its projection (rescaled to ``size`` when it differs from the
    camera image). Conflicts go to the smaller depth, then the lower vertex id.
    """
    H, W = size or cam_t.size
    if visible is None:
        visible = vertex_visibility(mesh_t, cam_t)
    V = len(mesh_t.vertices)
    uv, z = cam_t.project(mesh_t.vertices, strict=False)
    uv = image_to_feature(uv, cam_t.size, (H, W))
    ok = np.asarray(valid, bool) & visible & np.isfinite(z)
    col = np.floor(np.where(ok, uv[:, 0], 0)).astype(np.int64)
    row = np.floor(np.where(ok, uv[:, 1], 0)).astype(np.int64)
    ok &= (col >= 0) & (col < W) & (row >= 0) & (row < H)
    vid = np.flatnonzero(ok)
    off = np.arange(-radius, radius + 1)
    dr, dc = np.meshgrid(off, off, indexing="ij")
    rr = (row[vid, None] + dr.ravel()).ravel()
    cc = (col[vid, None] + dc.ravel()).ravel()
    vv = np.repeat(vid, dr.size)
    inside = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    rr, cc, vv = rr[inside], cc[inside], vv[inside]
    pix = rr * W + cc
    order = np.lexsort((vv, z[vv], pix))
    pix_s = pix[order]
    first = order[np.r_[True, pix_s[1:] != pix_s[:-1]]] if len(order) else order
    pixels, vertex = pix[first], vv[first]
    depth = z[vertex]
    ndv = np.zeros(V) if src_ndv is None else src_ndv
    sdir = np.zeros((V, 3)) if src_dir is None else src_dir
    dnorm = depth / depth.mean() - 1.0 if len(depth) else depth
    meta = np.column_stack([dnorm, ndv[vertex], sdir[vertex]]) if len(vertex) else np.zeros((0, 5))
    return SplatPlan((H, W), pixels, vertex, depth, meta, source_id)


def apply_splat(cloud: VertexFeatureCloud, plan: SplatPlan) -> TargetLayer:
    return TargetLayer(plan, F.gather_rows(cloud.features, plan.vertex))


def splat_to_target(cloud: VertexFeatureCloud, mesh_t: PosedMesh, cam_t: Camera, size=None,
                    radius: int = 0, mesh_s: PosedMesh = None, cam_s: Camera = None,
                    source_id: int = 0) -> TargetLayer:
    ndv = sdir = None
    if mesh_s is not None and cam_s is not None:
        ndv, sdir = source_view_metadata(mesh_s, cam_s, mesh_t, cam_t)
    plan = plan_splat(cloud.valid, mesh_t, cam_t, size, radius, src_ndv=ndv, src_dir=sdir,
                      source_id=source_id)
    return apply_splat(cloud, plan)
