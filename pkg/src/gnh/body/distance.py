"""Pose similarity used to pick source frames close to a target pose."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from .model import Pose, rodrigues


class AlignmentError(ValueError):
    pass


def torso_angle(a: Pose, b: Pose) -> float:
    """Geodesic angle (radians) between the two root rotations."""
    Ra, Rb = rodrigues(a.joint_rotations[0]), rodrigues(b.joint_rotations[0])
    cos = (np.trace(Ra.T @ Rb) - 1) / 2
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def _similarity_residual(src: np.ndarray, dst: np.ndarray) -> float:
    """RMSE after the best scale * rotation + translation mapping src onto dst."""
    s0, d0 = src - src.mean(0), dst - dst.mean(0)
    ns = np.sum(s0 * s0)
    if ns < 1e-20:
        raise AlignmentError("all source joints coincide; alignment undefined")
    U, S, Vt = np.linalg.svd(d0.T @ s0)
    D = np.ones(3)
    D[-1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ np.diag(D) @ Vt
    scale = np.sum(S * D) / ns
    resid = d0 - scale * s0 @ R.T
    return float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))


def procrustes_distance(joints_a: np.ndarray, joints_b: np.ndarray) -> float:
    """Joint RMSE after similarity alignment, symmetrised.

    The directed residuals a->b and b->a differ by the ratio of the two point
    spreads; their geometric mean is symmetric and equals either one when the
    skeletons have equal spread.
    """
    ja, jb = np.asarray(joints_a, np.float64), np.asarray(joints_b, np.float64)
    if ja.shape != jb.shape:
        raise AlignmentError(f"joint sets differ in shape: {ja.shape} vs {jb.shape}")
    r_ab = _similarity_residual(jb, ja)
    r_ba = _similarity_residual(ja, jb)
    return float(np.sqrt(r_ab * r_ba))


def pose_distance(a: Pose, b: Pose, joints_a: np.ndarray, joints_b: np.ndarray) -> Tuple[float, float]:
    if a.n_joints != b.n_joints:
        raise AlignmentError("poses have different joint counts")
    return torso_angle(a, b), procrustes_distance(joints_a, joints_b)


def rank_by_pose(target: Tuple[Pose, np.ndarray], candidates, torso_tol: float = 0.0):
    """Candidate indices sorted by (torso angle, procrustes) against ``target``.

    ``candidates`` is a sequence of (Pose, joints). With ``torso_tol`` > 0 the
    torso angle is quantised to that bin width before the lexicographic sort.
    """
    tp, tj = target
    keys = []
    for i, (p, j) in enumerate(candidates):
        torso, proc = pose_distance(tp, p, tj, j)
        if torso_tol > 0:
            torso = np.floor(torso / torso_tol)
        keys.append((torso, proc, i))
    return [k[2] for k in sorted(keys)]
