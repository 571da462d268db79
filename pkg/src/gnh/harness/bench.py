"""Per-stage inference timing as a function of the number of source frames."""
from __future__ import annotations

import time
from typing import Dict, List, Sequence

import numpy as np

from ..body.model import lbs_pose
from ..features.lifting import apply_lift, apply_splat, plan_lift, plan_splat, source_view_metadata
from ..fusion_render.fusion import build_tokens, fuse
from ..geometry.visibility import vertex_visibility
from ..numerics.tensor import no_grad
from ..training.model import GNH, images_to_tensor
from .scene import Scene

STAGES = ("encode", "lift", "splat", "fuse", "render")


def time_render(net: GNH, scene: Scene, sources: Sequence[int], target) -> Dict[str, float]:
    """Full single-pass inference for one target (pose, camera); geometry is planned from scratch."""
    frames = scene.frames
    pose_t, cam_t = target
    cfg = net.cfg
    t = {}
    with no_grad():
        t0 = time.perf_counter()
        fmap = net.encoder(images_to_tensor([frames[s].image for s in sources]))
        t1 = time.perf_counter()
        meshes = [lbs_pose(scene.model, frames[s].pose) for s in sources]
        clouds = [apply_lift(fmap[n:n + 1], plan_lift(meshes[n], frames[s].camera, cfg.encoder.feature_size,
                                                      cfg.check_src_visibility))
                  for n, s in enumerate(sources)]
        t2 = time.perf_counter()
        mesh_t = lbs_pose(scene.model, pose_t)
        vis = vertex_visibility(mesh_t, cam_t)
        layers = []
        for n, s in enumerate(sources):
            ndv, sdir = source_view_metadata(meshes[n], frames[s].camera, mesh_t, cam_t)
            plan = plan_splat(clouds[n].valid, mesh_t, cam_t, radius=cfg.splat_radius, visible=vis,
                              src_ndv=ndv, src_dir=sdir, source_id=s)
            layers.append(apply_splat(clouds[n], plan))
        t3 = time.perf_counter()
        fused = fuse(net.fuse, build_tokens(layers, cfg.fusion))
        t4 = time.perf_counter()
        net.render(fused.renderer_input())
        t5 = time.perf_counter()
    for name, a, b in zip(STAGES, (t0, t1, t2, t3, t4), (t1, t2, t3, t4, t5)):
        t[name] = b - a
    t["total"] = t5 - t0
    return t


def bench(net: GNH, scene: Scene, n_list: Sequence[int] = (1, 3, 5, 7), repeats: int = 5,
          warmup: int = 1) -> List[Dict[str, float]]:
    """Median per-stage seconds for each N. Targets cycle through held-out frames when present."""
    targets = scene.heldout or scene.frames
    if max(n_list) > len(scene.frames):
        raise ValueError(f"scene has {len(scene.frames)} frames, cannot use N={max(n_list)}")
    # interleave N values inside each repeat so slow drifts hit every N alike
    runs = {n: [] for n in n_list}
    for r in range(warmup + repeats):
        tgt = targets[r % len(targets)]
        for n in n_list:
            res = time_render(net, scene, list(range(n)), (tgt.pose, tgt.camera))
            if r >= warmup:
                runs[n].append(res)
    rows = []
    for n in n_list:
        row = {"n_sources": n}
        for k in STAGES + ("total",):
            row[k] = float(np.median([x[k] for x in runs[n]]))
        rows.append(row)
    return rows
