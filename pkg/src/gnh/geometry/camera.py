"""Pinhole camera (OpenCV convention: x right, y down, z forward)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

NEAR = 1e-4


class CameraError(ValueError):
    pass


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    extrinsic: np.ndarray  # 3x4 world -> camera
    intrinsic: np.ndarray  # 3x3
    size: Tuple[int, int]  # (H, W)

    def __post_init__(self):
        P = np.asarray(self.extrinsic, dtype=np.float64).reshape(3, 4)
        K = np.asarray(self.intrinsic, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "extrinsic", P)
        object.__setattr__(self, "intrinsic", K)
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))
        R = P[:, :3]
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-5 or abs(np.linalg.det(R) - 1) > 1e-5:
            raise CameraError("extrinsic rotation is not a proper rotation")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise CameraError("focal lengths must be positive")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise CameraError("image size must be positive")

    @property
    def R(self) -> np.ndarray:
        return self.extrinsic[:, :3]

    @property
    def t(self) -> np.ndarray:
        return self.extrinsic[:, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    @property
    def H(self) -> int:
        return self.size[0]

    @property
    def W(self) -> int:
        return self.size[1]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def project(self, points: np.ndarray, strict: bool = True, near: float = NEAR):
        """World points (..., 3) -> (uv (..., 2), depth (...)).

        With ``strict`` any point at depth <= near raises; otherwise those
        entries come back as NaN.
        """
        pc = self.to_camera(points)
        z = pc[..., 2]
        bad = ~(z > near)
        if strict and bad.any():
            raise BehindCameraError(f"{int(bad.sum())} point(s) at or behind the near plane")
        K = self.intrinsic
        zs = np.where(bad, np.nan, z)
        u = K[0, 0] * pc[..., 0] / zs + K[0, 1] * pc[..., 1] / zs + K[0, 2]
        v = K[1, 1] * pc[..., 1] / zs + K[1, 2]
        return np.stack([u, v], axis=-1), zs

    def unproject(self, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        d = np.asarray(depth, dtype=np.float64)
        K = self.intrinsic
        y = (uv[..., 1] - K[1, 2]) / K[1, 1]
        x = (uv[..., 0] - K[0, 2] - K[0, 1] * y) / K[0, 0]
        pc = np.stack([x * d, y * d, d], axis=-1)
        return (pc - self.t) @ self.R  # R^T (pc - t)

    def view_dirs(self, points: np.ndarray) -> np.ndarray:
        """Unit directions from the camera centre towards each world point."""
        d = np.asarray(points, dtype=np.float64) - self.center
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def pixel_index(self, uv: np.ndarray):
        """Nearest pixel (row, col) containing each continuous position and an in-bounds mask."""
        u, v = uv[..., 0], uv[..., 1]
        inb = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u < self.W) & (v >= 0) & (v < self.H)
        col = np.floor(np.where(inb, u, 0)).astype(np.int64)
        row = np.floor(np.where(inb, v, 0)).astype(np.int64)
        return row, col, inb

    def translated(self, offset) -> "Camera":
        """Same camera after moving the world by ``offset`` (camera moves with it)."""
        P = self.extrinsic.copy()
        P[:, 3] = self.t - self.R @ np.asarray(offset, np.float64)
        return Camera(P, self.intrinsic, self.size)

    def scaled(self, factor: float) -> "Camera":
        """Camera for an image resized by ``factor``.

        Pixel edges sit on integers, so continuous coordinates simply scale.
        """
        K = self.intrinsic.copy()
        K[:2] *= factor
        return Camera(self.extrinsic, K, (int(round(self.H * factor)), int(round(self.W * factor))))


def intrinsics(f: float, cx: float, cy: float, fy=None) -> np.ndarray:
    return np.array([[f, 0, cx], [0, f if fy is None else fy, cy], [0, 0, 1.0]])


def look_at(eye, target, up=(0.0, 1.0, 0.0), K=None, size=(64, 64)) -> Camera:
    """Camera at ``eye`` looking at ``target``; image y points along -up."""
    eye, target, up = (np.asarray(a, np.float64) for a in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        raise CameraError("up vector parallel to viewing direction")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    P = np.concatenate([R, (-R @ eye)[:, None]], axis=1)
    if K is None:
        K = intrinsics(1.4 * size[1], size[1] / 2, size[0] / 2)
    return Camera(P, K, size)


def orbit_camera(yaw: float, distance: float, height: float = 0.0, target=(0.0, 0.0, 0.0),
                 focal: float = 90.0, size=(64, 64)) -> Camera:
    """Camera on a horizontal circle around ``target`` (yaw 0 looks along -z from +z)."""
    target = np.asarray(target, np.float64)
    eye = target + np.array([distance * np.sin(yaw), height, distance * np.cos(yaw)])
    return look_at(eye, target, K=intrinsics(focal, size[1] / 2, size[0] / 2), size=size)
