"""Training configuration, source-frame selection, one optimisation step, and the loop."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..body.distance import rank_by_pose
from ..body.model import Pose, forward_kinematics
from ..features.encoders import EncoderConfig
from ..fusion_render.fusion import FusionConfig
from ..fusion_render.renderer import RendererConfig
from ..numerics.checkpoint import save_checkpoint
from ..numerics.functional import ConfigError
from ..numerics.optim import Adam
from .losses import (LossWeights, PerceptualExtractor, disc_loss, loss_adversarial_g, loss_antibias,
                     loss_color, loss_perceptual, total_loss)
from .model import GNH, GNHConfig, PlanCache, Subject, image_tensor

CSV_COLUMNS = ("step", "color", "lpips", "adv", "ab", "total", "disc")


class SamplingError(ValueError):
    pass


@dataclass
class TrainConfig:
    n_sources: int = 5
    k: int = 2
    antibias_mode: str = "repeat"
    lr_encoder: float = 1e-3
    lr_fusion: float = 5e-4
    lr_renderer: float = 5e-4
    lr_disc: float = 1e-5
    w_color: float = 0.2
    w_lpips: float = 0.1
    w_adv: float = 0.05
    w_ab: float = 0.8
    non_saturating: bool = False
    batch_size: int = 1
    epochs: int = 1
    steps: int = 0               # overrides epochs when > 0
    seed: int = 0
    target: int = -1             # fixed target frame (-1: random each step)
    sources: tuple = ()          # fixed source frames (empty: random each step)
    holdout: tuple = ()          # frames never used for training
    # model widths (desk scale)
    feature_size: int = 64
    c_coarse: int = 24
    c_fine: int = 24
    backbone: str = "patch"
    fusion_dim: int = 64
    fusion_depth: int = 4
    fusion_heads: int = 4
    unet_base: int = 32
    unet_levels: int = 3
    splat_radius: int = 0

    def __post_init__(self):
        if self.n_sources < 1:
            raise ConfigError("n_sources must be >= 1")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError("anti-bias fold k must be a positive integer")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.sources = tuple(int(s) for s in self.sources)
        self.holdout = tuple(int(s) for s in self.holdout)
        self.weights  # validates signs

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_color, self.w_lpips, self.w_adv, self.w_ab)

    def model_config(self) -> GNHConfig:
        fs = (self.feature_size, self.feature_size)
        return GNHConfig(
            encoder=EncoderConfig(feature_size=fs, c_coarse=self.c_coarse, c_fine=self.c_fine,
                                  backbone=self.backbone),
            fusion=FusionConfig(dim=self.fusion_dim, depth=self.fusion_depth, heads=self.fusion_heads),
            renderer=RendererConfig(base=self.unet_base, levels=self.unet_levels),
            splat_radius=self.splat_radius)

    def total_steps(self, n_frames: int) -> int:
        if self.steps > 0:
            return self.steps
        return max(1, self.epochs * n_frames // self.batch_size)


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    return raw


def parse_config(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """``key = value`` lines, ``#`` comments. Unknown keys are errors."""
    base = base or TrainConfig()
    defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(TrainConfig)}
    values = dict(defaults)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        try:
            values[key] = _parse_value(raw, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from exc
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- source selection

def select_sources(target_pose: Pose, candidates: Sequence[int], n: int, subject: Subject = None,
                   mode: str = "eval", rng: Optional[np.random.Generator] = None,
                   torso_tol: float = 0.0) -> List[int]:
    """Pick ``n`` source frames out of ``candidates``.

    eval: the closest poses by (torso angle, procrustes joint distance).
    train: uniform random without replacement.
    """
    candidates = list(candidates)
    if n > len(candidates):
        raise SamplingError(f"requested {n} source frames from {len(candidates)} candidates")
    if mode == "train":
        if rng is None:
            raise ValueError("training-mode selection needs an rng")
        return [candidates[i] for i in rng.choice(len(candidates), n, replace=False)]
    if mode != "eval":
        raise ValueError(f"unknown selection mode '{mode}'")
    model = subject.model

    def joints(p):
        return forward_kinematics(model, p)[:, :3, 3]

    cand = [(subject.frames[i].pose, joints(subject.frames[i].pose)) for i in candidates]
    order = rank_by_pose((target_pose, joints(target_pose)), cand, torso_tol)
    return [candidates[i] for i in order[:n]]


# ---------------------------------------------------------------- optimisation

class Trainer:
    """Generator + discriminator with per-module Adam rates and the four-term objective."""

    def __init__(self, subject: Subject, cfg: TrainConfig, net: Optional[GNH] = None):
        self.subject = subject
        self.cfg = cfg
        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        self.net = net or GNH(cfg.model_config(), np.random.default_rng(seeds[0]))
        self.rng = np.random.default_rng(seeds[1])
        self.cache = PlanCache(subject, self.net.cfg)
        self.extractor = PerceptualExtractor()
        net = self.net
        self.opt_g = Adam([(net.encoder.parameters(), cfg.lr_encoder),
                           (net.fuse.parameters(), cfg.lr_fusion),
                           (net.render.parameters(), cfg.lr_renderer)])
        self.opt_d = Adam([(net.disc.parameters(), cfg.lr_disc)])
        self.step_count = 0

    # -- sampling
    def train_frames(self) -> List[int]:
        return [i for i in range(len(self.subject)) if i not in self.cfg.holdout]

    def sample_pair(self):
        cfg = self.cfg
        frames = self.train_frames()
        t = cfg.target if cfg.target >= 0 else int(frames[self.rng.integers(len(frames))])
        if cfg.sources:
            if len(cfg.sources) != cfg.n_sources:
                raise SamplingError(f"{len(cfg.sources)} fixed sources but n_sources={cfg.n_sources}")
            return list(cfg.sources), t
        rest = [i for i in frames if i != t]
        return select_sources(self.subject.frames[t].pose, rest, cfg.n_sources, mode="train", rng=self.rng), t

    # -- losses
    def generator_losses(self, pred, target) -> Dict[str, object]:
        cfg, w = self.cfg, self.cfg.weights
        out = {"color": loss_color(pred, target)}
        out["lpips"] = loss_perceptual(pred, target, self.extractor) if w.lpips > 0 else None
        out["adv"] = loss_adversarial_g(pred, self.net.disc, cfg.non_saturating) if w.adv > 0 else None
        out["ab"] = loss_antibias(pred, target, cfg.k, cfg.antibias_mode)
        return out

    def generator_step(self, batch) -> Dict[str, float]:
        """One Adam step on encoder, fusion and renderer. ``batch`` is a list of (sources, target)."""
        w = self.cfg.weights
        self.opt_g.zero_grad()
        self.net.disc.zero_grad()
        logs = {n: 0.0 for n in ("color", "lpips", "adv", "ab", "total")}
        preds = []
        for sources, t in batch:
            pred = self.net(self.cache.source_images(sources), self.cache.plans(sources, t))
            target = image_tensor(self.subject.frames[t].image)
            comps = self.generator_losses(pred, target)
            zero = pred.sum() * 0.0
            total = total_loss({k: (v if v is not None else zero) for k, v in comps.items()}, w)
            (total * (1.0 / len(batch))).backward()
            for k, v in comps.items():
                logs[k] += (v.item() if v is not None else math.nan) / len(batch)
            logs["total"] += total.item() / len(batch)
            preds.append((pred.detach(), target))
        self.opt_g.step()
        self.net.disc.zero_grad()
        self._last = preds
        return logs

    def discriminator_step(self) -> float:
        """BCE update of the discriminator on the last generator batch (fakes detached)."""
        self.opt_d.zero_grad()
        for m in self.net.generator_modules():
            m.zero_grad()
        value = 0.0
        for fake, real in self._last:
            loss = disc_loss(real, fake, self.net.disc)
            (loss * (1.0 / len(self._last))).backward()
            value += loss.item() / len(self._last)
        self.opt_d.step()
        for m in self.net.generator_modules():
            m.zero_grad()
        return value

    def train_step(self) -> Dict[str, float]:
        batch = [self.sample_pair() for _ in range(self.cfg.batch_size)]
        logs = self.generator_step(batch)
        # the discriminator has nothing to learn for when its term is switched off
        logs["disc"] = self.discriminator_step() if self.cfg.weights.adv > 0 else math.nan
        logs["step"] = self.step_count
        self.step_count += 1
        return logs

    def save(self, path) -> None:
        save_checkpoint(path, self.net.state_dict())


def _fmt(v) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def train(subject: Subject, cfg: TrainConfig, out_dir=None, trainer: Optional[Trainer] = None,
          log=None) -> Trainer:
    """Run ``cfg.total_steps`` steps; writes loss.csv and model.ckpt into ``out_dir`` if given."""
    trainer = trainer or Trainer(subject, cfg)
    n = cfg.total_steps(len(trainer.train_frames()))
    rows = []
    fh = writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "loss.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
    try:
        for _ in range(n):
            logs = trainer.train_step()
            rows.append(logs)
            if writer is not None:
                writer.writerow([logs["step"]] + [_fmt(logs[c]) for c in CSV_COLUMNS[1:]])
            if log is not None:
                log(logs)
    finally:
        if fh is not None:
            fh.close()
    trainer.history = rows
    if out_dir is not None:
        trainer.save(out_dir / "model.ckpt")
    return trainer
