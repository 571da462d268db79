"""Vectorised z-buffer rasterizer.

Pixel (r, c) is sampled at its centre (c + 0.5, r + 0.5). Triangles are
back-face culled by screen signed area, filled with the top-left rule and
shaded with perspective-correct depth. Triangles with any vertex at or
behind the near plane are dropped (no clipping).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import NEAR, Camera


@dataclass
class Raster:
    depth: np.ndarray      # H x W camera z, +inf where empty
    face_id: np.ndarray    # H x W, -1 where empty
    bary: np.ndarray       # H x W x 3 perspective-correct barycentrics

    @property
    def mask(self) -> np.ndarray:
        return self.face_id >= 0


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    return ((dy == 0) & (dx > 0)) | (dy < 0)


def screen_triangles(vertices, faces, cam: Camera, cull_backfaces: bool = True, near: float = NEAR):
    """Project faces; return kept face ids, screen xy (F', 3, 2), depths (F', 3), area."""
    pc = cam.to_camera(vertices)
    z = pc[:, 2]
    faces = np.asarray(faces, dtype=np.int64)
    uv, _ = cam.project(vertices, strict=False, near=near)
    fz = z[faces]
    ok = (fz > near).all(1)
    fid = np.flatnonzero(ok)
    p = uv[faces[fid]]
    fz = fz[fid]
    area = _edge(p[:, 0, 0], p[:, 0, 1], p[:, 1, 0], p[:, 1, 1], p[:, 2, 0], p[:, 2, 1])
    keep = area < 0 if cull_backfaces else area != 0
    fid, p, fz, area = fid[keep], p[keep], fz[keep], area[keep]
    # wind every kept triangle to positive area
    neg = area < 0
    p[neg] = p[neg][:, [0, 2, 1]]
    fz[neg] = fz[neg][:, [0, 2, 1]]
    perm = np.tile(np.arange(3), (len(fid), 1))
    perm[neg] = [0, 2, 1]
    return fid, p, fz, np.abs(area), perm


def rasterize(vertices: np.ndarray, faces: np.ndarray, cam: Camera, cull_backfaces: bool = True,
              near: float = NEAR) -> Raster:
    H, W = cam.size
    depth = np.full((H, W), np.inf)
    face_id = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    if len(faces) == 0:
        return Raster(depth, face_id, bary)
    fid, p, fz, area, perm = screen_triangles(vertices, faces, cam, cull_backfaces, near)
    if len(fid) == 0:
        return Raster(depth, face_id, bary)
    xs, ys = p[..., 0], p[..., 1]
    c0 = np.clip(np.ceil(xs.min(1) - 0.5), 0, W).astype(np.int64)
    c1 = np.clip(np.floor(xs.max(1) - 0.5), -1, W - 1).astype(np.int64)
    r0 = np.clip(np.ceil(ys.min(1) - 0.5), 0, H).astype(np.int64)
    r1 = np.clip(np.floor(ys.max(1) - 0.5), -1, H - 1).astype(np.int64)
    nx, ny = np.maximum(c1 - c0 + 1, 0), np.maximum(r1 - r0 + 1, 0)
    n = nx * ny
    if n.sum() == 0:
        return Raster(depth, face_id, bary)
    t = np.repeat(np.arange(len(fid)), n)
    local = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    col = c0[t] + local % nx[t]
    row = r0[t] + local // nx[t]
    px, py = col + 0.5, row + 0.5
    x0, y0, x1, y1, x2, y2 = xs[t, 0], ys[t, 0], xs[t, 1], ys[t, 1], xs[t, 2], ys[t, 2]
    e0 = _edge(x1, y1, x2, y2, px, py)  # opposite vertex 0
    e1 = _edge(x2, y2, x0, y0, px, py)
    e2 = _edge(x0, y0, x1, y1, px, py)
    inside = ((e0 > 0) | ((e0 == 0) & _top_left(x1, y1, x2, y2))) \
        & ((e1 > 0) | ((e1 == 0) & _top_left(x2, y2, x0, y0))) \
        & ((e2 > 0) | ((e2 == 0) & _top_left(x0, y0, x1, y1)))
    t, row, col = t[inside], row[inside], col[inside]
    b = np.stack([e0[inside], e1[inside], e2[inside]], 1) / area[t, None]
    w = b / fz[t]
    inv_z = w.sum(1)
    z = 1.0 / inv_z
    lam = w / inv_z[:, None]
    pix = row * W + col
    order = np.lexsort((fid[t], z, pix))
    pix_s = pix[order]
    first = order[np.r_[True, pix_s[1:] != pix_s[:-1]]]
    rr, cc = row[first], col[first]
    depth[rr, cc] = z[first]
    face_id[rr, cc] = fid[t[first]]
    # barycentrics back in the face's original vertex order
    lam_orig = np.empty_like(lam[first])
    np.put_along_axis(lam_orig, perm[t[first]], lam[first], axis=1)
    bary[rr, cc] = lam_orig
    return Raster(depth, face_id, bary)


def rasterize_depth(mesh, cam: Camera, **kw) -> np.ndarray:
    """H x W depth buffer of a posed mesh (+inf where empty)."""
    return rasterize(mesh.vertices, mesh.faces, cam, **kw).depth
