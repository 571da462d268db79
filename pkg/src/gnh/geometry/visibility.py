"""Per-vertex visibility from a z-buffer, and a brute-force ray-cast oracle."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .camera import Camera
from .raster import Raster, rasterize

DEPTH_EPS = 1e-3


def vertex_visibility(mesh, cam: Camera, raster: Raster = None, eps: float = DEPTH_EPS,
                      mode: str = "face", radius: int = 1) -> np.ndarray:
    """Boolean visibility per vertex.

    A vertex must project inside the image and face the camera
    (normal . view_dir < 0). The depth test then uses the z-buffer:

    ``mode="pixel"`` compares the vertex depth with the buffer depth at the
    centre of the pixel containing its projection (+ eps).
    ``mode="face"`` (default) collects the winning faces of the
    (2 radius + 1)^2 pixels around that pixel and rejects the vertex if one of
    them, or a face sharing a vertex with one of them, is crossed by the
    vertex's own ray more than eps in front of it (faces incident to the
    vertex itself are skipped). This removes the within-pixel depth slope and the
    pixel-centre sampling error at occlusion boundaries.
    """
    if raster is None:
        raster = rasterize(mesh.vertices, mesh.faces, cam)
    pc = cam.to_camera(mesh.vertices)
    z = pc[:, 2]
    uv, _ = cam.project(mesh.vertices, strict=False)
    row, col, inb = cam.pixel_index(uv)
    facing = np.einsum("ij,ij->i", mesh.normals, cam.view_dirs(mesh.vertices)) < 0
    vis = inb & facing
    if mode == "pixel":
        return vis & (z <= raster.depth[row, col] + eps)
    if mode != "face":
        raise ValueError(f"unknown visibility mode '{mode}'")
    return vis & ~_occluded_by_neighbours(mesh, cam, raster, pc, row, col, eps, radius)


def _face_adjacency(faces: np.ndarray, n_vertices: int) -> sp.csr_matrix:
    """F x F boolean matrix: faces sharing at least one vertex (including itself)."""
    F = len(faces)
    inc = sp.csr_matrix((np.ones(3 * F), (np.repeat(np.arange(F), 3), faces.ravel())), shape=(F, n_vertices))
    return (inc @ inc.T).astype(bool).tocsr()


def _occluded_by_neighbours(mesh, cam, raster, pc, row, col, eps, radius):
    H, W = cam.size
    V = len(pc)
    faces = np.asarray(mesh.faces, np.int64)
    F = len(faces)
    off = np.arange(-radius, radius + 1)
    rr = np.clip(row[:, None, None] + off[:, None], 0, H - 1)
    cc = np.clip(col[:, None, None] + off[None, :], 0, W - 1)
    cand = raster.face_id[rr, cc].reshape(V, -1)           # V x K winners
    vi = np.repeat(np.arange(V), cand.shape[1])
    f = cand.ravel()
    keep = f >= 0
    winners = sp.csr_matrix((np.ones(keep.sum()), (vi[keep], f[keep])), shape=(V, F))
    # winners plus faces sharing a vertex with them: covers sub-pixel triangles
    cand = (winners @ _face_adjacency(faces, V)).tocoo()
    vi, f = cand.row.astype(np.int64), cand.col.astype(np.int64)
    tri = faces[f]
    keep = ~(tri == vi[:, None]).any(1)
    vi, tri = vi[keep], tri[keep]
    q = pc[tri.ravel()].reshape(-1, 3, 3)
    # segment from the camera centre (camera-space origin) to the vertex
    t = _segment_hits(pc[vi], q)
    blocked = np.isfinite(t) & (t * pc[vi, 2] < pc[vi, 2] - eps)
    out = np.zeros(V, dtype=bool)
    out[vi[blocked]] = True
    return out


def _segment_hits(d, tri):
    """Pairwise Möller–Trumbore from the origin along d (P x 3) against tri (P x 3 x 3)."""
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = -v0
    u = np.einsum("ij,ij->i", s, pvec) * inv
    qvec = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, qvec) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
    return np.where(hit, t, np.inf)


def _ray_hits(origin, targets, tri, eps=1e-6):
    """Möller–Trumbore: (P, T) parameters t of ray origin->target hitting tri, NaN on miss."""
    d = targets - origin                           # P x 3
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]   # T x 3
    e1, e2 = v1 - v0, v2 - v0
    pvec = np.cross(d[:, None, :], e2[None])       # P x T x 3
    det = np.einsum("ptk,tk->pt", pvec, e1)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0                                # T x 3
    u = np.einsum("ptk,tk->pt", pvec, s) * inv
    qvec = np.cross(s, e1)                         # T x 3
    v = np.einsum("pk,tk->pt", d, qvec) * inv
    t = np.einsum("tk,tk->t", e2, qvec)[None] * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    return np.where(hit, t, np.nan)


def visibility_oracle(mesh, cam: Camera, vertex_index: int, eps: float = 1e-6) -> bool:
    return bool(visibility_oracle_all(mesh, cam, eps=eps, vertices=[vertex_index])[0])


def visibility_oracle_all(mesh, cam: Camera, eps: float = 1e-6, vertices=None, chunk: int = 256,
                          return_gap: bool = False):
    """Ray-cast visibility: no non-incident triangle strictly between camera and vertex.

    With ``return_gap`` also returns, per vertex, the camera-depth distance
    from the nearest blocking triangle to the vertex (+inf when unblocked).
    """
    V = np.asarray(mesh.vertices, np.float64)
    faces = np.asarray(mesh.faces, np.int64)
    idx = np.arange(len(V)) if vertices is None else np.asarray(vertices, np.int64)
    o = cam.center
    tri = V[faces]
    z = cam.to_camera(V[idx])[:, 2]
    out = np.zeros(len(idx), dtype=bool)
    gap = np.full(len(idx), np.inf)
    for s in range(0, len(idx), chunk):
        vi = idx[s:s + chunk]
        t = _ray_hits(o, V[vi], tri, eps)
        incident = (faces[None, :, :] == vi[:, None, None]).any(2)
        blocked = (t < 1 - eps) & ~incident
        out[s:s + chunk] = ~blocked.any(1)
        tmin = np.where(blocked, t, np.inf).min(1)
        gap[s:s + chunk] = np.where(np.isfinite(tmin), (1 - tmin) * z[s:s + chunk], np.inf)
    return (out, gap) if return_gap else out


def silhouette_vertices(mesh, cam: Camera) -> np.ndarray:
    """Vertices whose incident faces include both camera-facing and back-facing ones."""
    v = np.asarray(mesh.vertices, np.float64)
    f = np.asarray(mesh.faces, np.int64)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    front = np.einsum("ij,ij->i", fn, v[f[:, 0]] - cam.center) < 0
    n_front = np.bincount(f.ravel(), weights=np.repeat(front, 3), minlength=len(v))
    n_back = np.bincount(f.ravel(), weights=np.repeat(~front, 3), minlength=len(v))
    return (n_front > 0) & (n_back > 0)
