"""The full generator (encoder -> lift -> splat -> fuse -> render) plus discriminator,
and a cache for the pose/camera-only geometry plans."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from ..body.model import PosedMesh, Pose, SkinnedBodyModel, lbs_pose
from ..features.encoders import EncoderConfig, SourceEncoder
from ..features.lifting import LiftPlan, SplatPlan, apply_lift, apply_splat, plan_lift, plan_splat, \
    source_view_metadata
from ..fusion_render.fusion import FusionConfig, FusionTransformer, build_tokens, fuse
from ..fusion_render.renderer import RendererConfig, ResUNet
from ..geometry.camera import Camera
from ..geometry.visibility import vertex_visibility
from ..numerics.nn import Module
from ..numerics.tensor import Tensor
from .losses import Discriminator


@dataclass
class Frame:
    image: np.ndarray          # H x W x 3 in [0, 1]
    pose: Pose
    camera: Camera


@dataclass
class Subject:
    model: SkinnedBodyModel
    frames: List[Frame]

    def __len__(self):
        return len(self.frames)


@dataclass
class GNHConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    renderer: RendererConfig = field(default_factory=RendererConfig)
    disc_widths: tuple = (16, 32, 64)
    splat_radius: int = 0
    check_src_visibility: bool = False


def images_to_tensor(images: Sequence[np.ndarray], dtype=np.float32) -> Tensor:
    """List of H x W x 3 arrays -> (N, 3, H, W) tensor."""
    return Tensor(np.ascontiguousarray(np.stack([np.transpose(im, (2, 0, 1)) for im in images]), dtype=dtype))


def image_tensor(image: np.ndarray, dtype=np.float32) -> Tensor:
    return images_to_tensor([image], dtype)


class GNH(Module):
    """Parameters are named encoder.*, fuse.*, render.*, disc.* in checkpoints."""

    def __init__(self, cfg: GNHConfig, rng):
        self.cfg = cfg
        self.encoder = SourceEncoder(cfg.encoder, rng)
        self.fuse = FusionTransformer(self.encoder.channels, cfg.fusion, rng)
        self.render = ResUNet(cfg.fusion.dim + 1, cfg.renderer, rng)
        self.disc = Discriminator(rng, cfg.disc_widths)

    def generator_modules(self):
        return [self.encoder, self.fuse, self.render]

    def generator_state(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.state_dict().items() if not k.startswith("disc.")}

    def forward(self, images: Tensor, plans: Sequence[Tuple[LiftPlan, SplatPlan]]) -> Tensor:
        """images: (N, 3, H, W) source frames; plans: one (lift, splat) pair per source."""
        if images.shape[0] != len(plans):
            raise ValueError(f"{images.shape[0]} images but {len(plans)} view plans")
        fmap = self.encoder(images)
        layers = [apply_splat(apply_lift(fmap[n:n + 1], lp), sp) for n, (lp, sp) in enumerate(plans)]
        return self.render_layers(layers)

    def render_layers(self, layers) -> Tensor:
        tokens = build_tokens(layers, self.cfg.fusion)
        fused = fuse(self.fuse, tokens, dtype=self.render.head.weight.dtype)
        return self.render(fused.renderer_input())


Target = Union[int, Tuple[Pose, Camera]]


class PlanCache:
    """Memoised geometry for a subject: posed meshes, lift plans and visibility per
    frame, splat plans per (source, target) pair. Nothing here carries gradients."""

    def __init__(self, subject: Subject, cfg: GNHConfig):
        self.subject = subject
        self.cfg = cfg
        self._mesh: Dict[int, PosedMesh] = {}
        self._lift: Dict[int, LiftPlan] = {}
        self._vis: Dict[int, np.ndarray] = {}
        self._splat: Dict[Tuple[int, int], SplatPlan] = {}

    def mesh(self, i: int) -> PosedMesh:
        if i not in self._mesh:
            self._mesh[i] = lbs_pose(self.subject.model, self.subject.frames[i].pose)
        return self._mesh[i]

    def lift(self, i: int) -> LiftPlan:
        if i not in self._lift:
            cam = self.subject.frames[i].camera
            self._lift[i] = plan_lift(self.mesh(i), cam, self.cfg.encoder.feature_size,
                                      self.cfg.check_src_visibility)
        return self._lift[i]

    def _splat_plan(self, s: int, mesh_t: PosedMesh, cam_t: Camera, vis: np.ndarray) -> SplatPlan:
        ndv, sdir = source_view_metadata(self.mesh(s), self.subject.frames[s].camera, mesh_t, cam_t)
        return plan_splat(self.lift(s).valid, mesh_t, cam_t, radius=self.cfg.splat_radius, visible=vis,
                          src_ndv=ndv, src_dir=sdir, source_id=s)

    def plans(self, sources: Sequence[int], target: Target):
        """(lift, splat) per source frame for a target frame index or an explicit (pose, camera)."""
        if isinstance(target, (int, np.integer)):
            t = int(target)
            if t not in self._vis:
                self._vis[t] = vertex_visibility(self.mesh(t), self.subject.frames[t].camera)
            out = []
            for s in sources:
                if (s, t) not in self._splat:
                    self._splat[(s, t)] = self._splat_plan(s, self.mesh(t), self.subject.frames[t].camera,
                                                           self._vis[t])
                out.append((self.lift(s), self._splat[(s, t)]))
            return out
        pose_t, cam_t = target
        mesh_t = lbs_pose(self.subject.model, pose_t)
        vis = vertex_visibility(mesh_t, cam_t)
        return [(self.lift(s), self._splat_plan(s, mesh_t, cam_t, vis)) for s in sources]

    def source_images(self, sources: Sequence[int], dtype=np.float32) -> Tensor:
        return images_to_tensor([self.subject.frames[s].image for s in sources], dtype)


def render_target(net: GNH, cache: PlanCache, sources: Sequence[int], target: Target,
                  dtype=np.float32) -> Tensor:
    return net(cache.source_images(sources, dtype), cache.plans(sources, target))
