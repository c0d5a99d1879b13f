"""Pose-to-video stage: data batching, training loops, fine-tuning and generation."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .networks import (
    DiscriminatorPyramid,
    FeatureNet,
    HandKeypointNet,
    KeypointDiscriminator,
    PatchHandDiscriminator,
    UNetGenerator,
)
from .pose import (
    HAND_PATCH,
    HandCrop,
    JointLayout,
    LineConfig,
    PoseFrame,
    PoseSequence,
    default_layout,
    rasterize_heatmap,
    select_good_hands,
    to_pixels,
)

log = logging.getLogger(__name__)

SIDES = ("left", "right")
LOG_COLUMNS = ["step", "loss_D", "loss_G", "loss_FM", "loss_VGG", "loss_KeyG", "loss_KeyD", "loss_T"]
HAND_LOSSES = ("keypoint", "patch", "none")


class TrainingDivergedError(FloatingPointError):
    pass


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Clip:
    """One pose sequence rendered in one style; ``frames`` is uint8 (T, H, W, 3) or a loader for it."""

    poses: PoseSequence
    frames: np.ndarray | Callable[[], np.ndarray]
    style: int

    def rgb(self) -> np.ndarray:
        return self.frames() if callable(self.frames) else self.frames


@dataclass
class Batch:
    cond: torch.Tensor  # (N, L, H, W)
    style: torch.Tensor  # (N, 3, H, W)
    real: torch.Tensor  # (N, 3, H, W)
    anchors: np.ndarray  # (N, 2 sides, 2) pixel (row, col)
    hand_mask: torch.Tensor  # (N, 2) bool
    style_ids: list
    poses: list


def uint8_to_unit(img: np.ndarray) -> np.ndarray:
    """uint8 (..., H, W, 3) -> float32 (..., 3, H, W) in [-1, 1]."""
    x = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return np.moveaxis(x, -1, -3)


def frame_anchors(frame: PoseFrame, layout: JointLayout, size) -> tuple[np.ndarray, np.ndarray]:
    anchors = np.zeros((2, 2), dtype=np.int64)
    mask = np.zeros(2, dtype=bool)
    for k, side in enumerate(SIDES):
        idx = layout.anchor(side)
        if frame.confidence[idx] > 0:
            anchors[k] = to_pixels(frame.coords[idx], size)
            mask[k] = True
    return anchors, mask


class ClipDataset:
    """Samples frame pairs from clips.

    With ``consecutive`` the pair is (t, t+1) of one clip, otherwise two
    independent indices of one clip.  Batches hold 2 * n_pairs frames laid
    out as [a0, b0, a1, b1, ...].
    """

    def __init__(self, clips: Sequence[Clip], style_images: np.ndarray, layout: JointLayout | None = None,
                 line_config: LineConfig | None = None, consecutive: bool = True):
        if not clips:
            raise PreconditionError("dataset has no clips")
        self.clips = list(clips)
        self.style_images = np.asarray(style_images, dtype=np.float32)
        self.layout = layout or default_layout()
        self.line_config = line_config or LineConfig()
        self.consecutive = consecutive
        self.size = tuple(self.style_images.shape[-2:])
        self._heat: dict = {}

    @property
    def n_styles(self) -> int:
        return len(self.style_images)

    def heatmap(self, clip_index: int, t: int) -> np.ndarray:
        key = (id(self.clips[clip_index].poses), t)
        hm = self._heat.get(key)
        if hm is None:
            hm = rasterize_heatmap(self.clips[clip_index].poses[t], self.layout, self.size, self.line_config)
            if len(self._heat) < 20000:
                self._heat[key] = hm.astype(np.float16)
        return np.asarray(hm, dtype=np.float32)

    def pick(self, rng: np.random.Generator, n_pairs: int) -> list[tuple[int, int]]:
        out = []
        for _ in range(n_pairs):
            ci = int(rng.integers(len(self.clips)))
            n = len(self.clips[ci].poses)
            if self.consecutive and n > 1:
                t = int(rng.integers(n - 1))
                out += [(ci, t), (ci, t + 1)]
            else:
                a, b = rng.integers(n, size=2)
                out += [(ci, int(a)), (ci, int(b))]
        return out

    def batch(self, items: Sequence[tuple[int, int]], style_override: np.ndarray | None = None) -> Batch:
        cond, style, real, anchors, mask, sids, poses = [], [], [], [], [], [], []
        for ci, t in items:
            clip = self.clips[ci]
            frame = clip.poses[t]
            cond.append(self.heatmap(ci, t))
            style.append(self.style_images[clip.style] if style_override is None else style_override)
            real.append(uint8_to_unit(clip.rgb()[t]))
            a, m = frame_anchors(frame, self.layout, self.size)
            anchors.append(a)
            mask.append(m)
            sids.append(clip.style)
            poses.append(frame)
        return Batch(
            torch.from_numpy(np.stack(cond)),
            torch.from_numpy(np.stack(style).astype(np.float32)),
            torch.from_numpy(np.stack(real)),
            np.stack(anchors),
            torch.from_numpy(np.stack(mask)),
            sids,
            poses,
        )

    def sample(self, rng: np.random.Generator, n_pairs: int) -> Batch:
        return self.batch(self.pick(rng, n_pairs))


def crop_hands_tensor(images: torch.Tensor, anchors: np.ndarray, background) -> torch.Tensor:
    """Differentiable 60x60 crops; returns (N * 2, 3, 60, 60) ordered [img0-left, img0-right, ...]."""
    half = HAND_PATCH // 2
    bg = torch.as_tensor(np.asarray(background, dtype=np.float32)).reshape(1, -1, 1, 1)
    padded = F.pad(images - bg, (half, half, half, half)) + bg
    out = []
    for i in range(images.shape[0]):
        for k in range(2):
            r, c = int(anchors[i, k, 0]), int(anchors[i, k, 1])
            # padded offset: original row r - half maps to padded row r
            out.append(padded[i, :, r : r + HAND_PATCH, c : c + HAND_PATCH])
    return torch.stack(out)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass
class Pose2VideoConfig:
    resolution: int = 64
    ngf: int = 16
    ndf: int = 16
    n_unet_layers: int = 4
    d_layers: int = 2
    batch_pairs: int = 4
    steps: int = 2000
    lr_g: float = 2e-3
    lr_d: float = 5e-5
    decay_from: float = 0.5
    beta1: float = 0.5
    beta2: float = 0.999
    gan_mode: str = "log"
    hand_loss: str = "keypoint"
    good_hands: bool = True
    good_hands_branch: str = "real"
    controllable: bool = True
    seed: int = 0
    log_every: int = 50
    lambda_FM: float = 10.0
    lambda_VGG: float = 10.0
    lambda_Key: float = 1.0
    lambda_T: float = 1.0

    def __post_init__(self):
        if self.hand_loss not in HAND_LOSSES:
            raise ValueError(f"hand_loss must be one of {HAND_LOSSES}")
        if self.good_hands_branch not in ("real", "fake"):
            raise ValueError("good_hands_branch must be 'real' or 'fake'")
        if self.gan_mode not in ("log", "ls"):
            raise ValueError("gan_mode must be 'log' or 'ls'")
        self.weights  # validates the lambdas

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda_FM, self.lambda_VGG, self.lambda_Key, self.lambda_T)


@dataclass
class Pose2VideoModels:
    gen: UNetGenerator
    disc: DiscriminatorPyramid
    hand_disc: torch.nn.Module | None
    handnet: HandKeypointNet | None
    feat: FeatureNet
    n_styles: int = 0

    def state(self) -> dict:
        out = {"gen": self.gen.state_dict(), "disc": self.disc.state_dict(), "feat": self.feat.state_dict()}
        if self.hand_disc is not None:
            out["hand_disc"] = self.hand_disc.state_dict()
        return out


def build_models(config: Pose2VideoConfig, n_limbs: int, handnet: HandKeypointNet | None, feat: FeatureNet,
                 n_styles: int = 0) -> Pose2VideoModels:
    torch.manual_seed(config.seed)
    gen = UNetGenerator(n_limbs, 3, config.ngf, config.n_unet_layers, config.resolution)
    disc = DiscriminatorPyramid(3 + n_limbs + 3, config.ndf, config.d_layers)
    hand_disc = None
    if config.hand_loss == "keypoint":
        hand_disc = KeypointDiscriminator()
    elif config.hand_loss == "patch":
        hand_disc = PatchHandDiscriminator(config.ndf)
    if config.hand_loss == "keypoint" and config.lambda_Key > 0 and handnet is None:
        raise PreconditionError("the keypoint hand loss needs a trained hand keypoint network")
    if handnet is not None:
        handnet.freeze()
    feat.freeze()
    return Pose2VideoModels(gen, disc, hand_disc, handnet, feat, n_styles)


def _set_grad(module, flag: bool):
    if module is None:
        return
    for p in module.parameters():
        p.requires_grad_(flag)


class Pose2VideoTrainer:
    """Alternating 1:1 discriminator / generator updates over a ClipDataset."""

    def __init__(self, models: Pose2VideoModels, data: ClipDataset, config: Pose2VideoConfig,
                 background=(0.0, 0.0, 0.0), good_hands: np.ndarray | None = None):
        self.m = models
        self.data = data
        self.cfg = config
        self.bg = np.asarray(background, dtype=np.float32)
        self.good = None if good_hands is None or len(good_hands) == 0 else torch.as_tensor(good_hands, dtype=torch.float32)
        self.step_index = 0
        d_params = list(models.disc.parameters()) + (list(models.hand_disc.parameters()) if models.hand_disc else [])
        betas = (config.beta1, config.beta2)
        self.opt_g = torch.optim.Adam(models.gen.parameters(), lr=config.lr_g, betas=betas)
        self.opt_d = torch.optim.Adam(d_params, lr=config.lr_d, betas=betas)
        self.rows: list[dict] = []

    # style input used by G and D
    def _style_in(self, batch: Batch) -> torch.Tensor:
        return batch.style if self.cfg.controllable else torch.zeros_like(batch.style)

    def _check(self, terms: dict, step: int):
        for name, v in terms.items():
            if isinstance(v, torch.Tensor) and not torch.isfinite(v).all():
                raise TrainingDivergedError(f"non-finite {name} at step {step}")

    def train_step(self, batch: Batch) -> dict:
        m, cfg, w = self.m, self.cfg, self.cfg.weights
        m.gen.train()
        m.disc.train()
        style = self._style_in(batch)
        cond, real = batch.cond, batch.real
        fake = m.gen(cond, style)
        mask = batch.hand_mask.reshape(-1)
        use_hands = cfg.hand_loss != "none" and m.hand_disc is not None and (cfg.lambda_Key > 0 or cfg.hand_loss == "patch")

        # discriminator step
        _set_grad(m.disc, True)
        _set_grad(m.hand_disc, True)
        real_out = m.disc(real, cond, style)
        fake_out_d = m.disc(fake.detach(), cond, style)
        loss_d, _ = L.gan_terms([o[-1] for o in real_out], [o[-1] for o in fake_out_d], [o[-1] for o in fake_out_d], cfg.gan_mode)
        loss_kd = torch.zeros(())
        fake_crops = real_crops = k_fake = None
        if use_hands:
            fake_crops = crop_hands_tensor(fake, batch.anchors, self.bg)
            real_crops = crop_hands_tensor(real, batch.anchors, self.bg)
            if cfg.hand_loss == "keypoint":
                k_fake = m.handnet(fake_crops)
                real_src, fake_src = self._keypoint_sources(real_crops, k_fake)
                loss_kd, _ = L.hand_keypoint_terms(m.hand_disc(real_src), m.hand_disc(fake_src.detach()),
                                                   m.hand_disc(fake_src.detach()), mask)
            else:
                fd = m.hand_disc(fake_crops.detach())
                loss_kd, _ = L.patch_hand_terms(m.hand_disc(real_crops), fd, fd, mask)
        self._check({"loss_D": loss_d, "loss_KeyD": loss_kd}, self.step_index)
        self.opt_d.zero_grad()
        (loss_d + loss_kd).backward()
        self.opt_d.step()

        # generator step
        _set_grad(m.disc, False)
        _set_grad(m.hand_disc, False)
        fake_out = m.disc(fake, cond, style)
        _, gan_g = L.gan_terms([o[-1] for o in real_out], [o[-1] for o in fake_out], [o[-1] for o in fake_out], cfg.gan_mode)
        comps = {"gan_G": gan_g}
        if w.lambda_FM > 0:
            with torch.no_grad():
                real_feats = m.disc(real, cond, style)
            comps["FM"] = L.feature_matching_terms(real_feats, fake_out)
        else:
            comps["FM"] = torch.zeros(())
        comps["VGG"] = L.perceptual_loss(m.feat, fake, real) if w.lambda_VGG > 0 else torch.zeros(())
        comps["KeyG"] = torch.zeros(())
        if use_hands:
            if cfg.hand_loss == "keypoint":
                _, fake_src = self._keypoint_sources(real_crops, k_fake)
                fl = m.hand_disc(fake_src)
                _, comps["KeyG"] = L.hand_keypoint_terms(fl, fl, fl, mask)
            else:
                fl = m.hand_disc(fake_crops)
                _, comps["KeyG"] = L.patch_hand_terms(fl, fl, fl, mask)
        comps["T"] = (L.temporal_loss((fake[0::2], fake[1::2]), (real[0::2], real[1::2]))
                      if w.lambda_T > 0 and self.data.consecutive else torch.zeros(()))
        total = L.total_loss(comps, w)
        self._check({"loss_G": comps["gan_G"], "loss_FM": comps["FM"], "loss_VGG": comps["VGG"],
                     "loss_KeyG": comps["KeyG"], "loss_T": comps["T"]}, self.step_index)
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()
        _set_grad(m.disc, True)
        _set_grad(m.hand_disc, True)

        row = {
            "step": self.step_index,
            "loss_D": loss_d.item(),
            "loss_G": comps["gan_G"].item(),
            "loss_FM": comps["FM"].item(),
            "loss_VGG": comps["VGG"].item(),
            "loss_KeyG": comps["KeyG"].item(),
            "loss_KeyD": loss_kd.item(),
            "loss_T": comps["T"].item(),
        }
        self.step_index += 1
        return row

    def _keypoint_sources(self, real_crops, k_fake):
        """(real branch, fake branch) inputs of the keypoint discriminator."""
        n = k_fake.shape[0]
        good = None
        if self.cfg.good_hands and self.good is not None:
            g = torch.Generator().manual_seed(self.cfg.seed * 7919 + self.step_index)
            good = self.good[torch.randint(len(self.good), (n,), generator=g)]
        if good is not None and self.cfg.good_hands_branch == "fake":
            # printed reading: curated hands stand in for the generated ones
            with torch.no_grad():
                real = self.m.handnet(real_crops)
            return real, good
        if good is not None:
            return good, k_fake
        with torch.no_grad():
            real = self.m.handnet(real_crops)
        return real, k_fake

    def train(self, steps: int | None = None, on_checkpoint=None, checkpoint_every: int = 0) -> list[dict]:
        steps = self.cfg.steps if steps is None else steps
        while self.step_index < steps:
            self._set_lr()
            rng = np.random.default_rng([self.cfg.seed, self.step_index])
            row = self.train_step(self.data.sample(rng, self.cfg.batch_pairs))
            self.rows.append(row)
            if self.cfg.log_every and row["step"] % self.cfg.log_every == 0:
                log.info("pose2video %s", " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
            if on_checkpoint and checkpoint_every and self.step_index % checkpoint_every == 0:
                on_checkpoint(self)
        return self.rows

    def _set_lr(self):
        # constant, then linear to zero over the last (1 - decay_from) of cfg.steps
        steps = self.cfg.steps
        start = self.cfg.decay_from * steps
        scale = 1.0 if self.step_index < start else max(steps - self.step_index, 0) / max(steps - start, 1)
        for opt, lr in ((self.opt_g, self.cfg.lr_g), (self.opt_d, self.cfg.lr_d)):
            for group in opt.param_groups:
                group["lr"] = lr * scale

    def state(self) -> dict:
        return {"models": self.m.state(), "opt_g": self.opt_g.state_dict(), "opt_d": self.opt_d.state_dict(),
                "step": self.step_index}

    def load_state(self, state: dict):
        self.m.gen.load_state_dict(state["models"]["gen"])
        self.m.disc.load_state_dict(state["models"]["disc"])
        if self.m.hand_disc is not None and "hand_disc" in state["models"]:
            self.m.hand_disc.load_state_dict(state["models"]["hand_disc"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        self.step_index = int(state["step"])


def train_pose2video(models: Pose2VideoModels, data: ClipDataset, config: Pose2VideoConfig, background=(0.0, 0.0, 0.0),
                     good_hands: np.ndarray | None = None) -> tuple[Pose2VideoTrainer, list[dict]]:
    trainer = Pose2VideoTrainer(models, data, config, background, good_hands)
    rows = trainer.train()
    return trainer, rows


def write_log_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


def finetune_style(models: Pose2VideoModels, examples: Sequence[tuple[PoseFrame, np.ndarray]], new_style_image: np.ndarray,
                   config: Pose2VideoConfig, steps: int = 300, layout: JointLayout | None = None, background=(0.0, 0.0, 0.0),
                   good_hands: np.ndarray | None = None) -> Pose2VideoModels:
    """Adapt a trained generator to an unseen style from a few (pose, frame) examples.

    ``frame`` entries are uint8 (H, W, 3).  Returns the same models, updated
    in place.
    """
    if not examples:
        raise PreconditionError("fine-tuning needs at least one example frame")
    if models.n_styles and models.n_styles < 2:
        raise PreconditionError("base model must be trained on at least two styles")
    if steps <= 0:
        return models
    layout = layout or default_layout()
    poses = PoseSequence.from_frames([p for p, _ in examples], layout)
    frames = np.stack([np.asarray(f, dtype=np.uint8) for _, f in examples])
    data = ClipDataset([Clip(poses, frames, 0)], np.asarray(new_style_image, np.float32)[None], layout, consecutive=False)
    cfg = copy.copy(config)
    cfg.lambda_T = 0.0
    cfg.controllable = True
    cfg.steps = steps
    trainer = Pose2VideoTrainer(models, data, cfg, background, good_hands)
    trainer.train(steps)
    return models


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@torch.no_grad()
def generate_frame(gen: UNetGenerator, cond: np.ndarray, style: np.ndarray, controllable: bool = True) -> np.ndarray:
    """One (3, H, W) frame in [-1, 1] from a (L, H, W) heat-map and a (3, H, W) style image."""
    gen.eval()
    c = torch.as_tensor(np.asarray(cond, np.float32))[None]
    s = torch.as_tensor(np.asarray(style, np.float32))[None]
    if not controllable:
        s = torch.zeros_like(s)
    return gen(c, s)[0].clamp(-1, 1).numpy()


@torch.no_grad()
def generate_video(gen: UNetGenerator, poses: PoseSequence, style: np.ndarray, layout: JointLayout | None = None,
                   line_config: LineConfig | None = None, controllable: bool = True, chunk: int = 16) -> list[np.ndarray]:
    if len(poses) == 0:
        raise ValueError("empty pose sequence")
    layout = layout or poses.layout
    size = (gen.resolution, gen.resolution)
    gen.eval()
    s = torch.as_tensor(np.asarray(style, np.float32))[None]
    if not controllable:
        s = torch.zeros_like(s)
    out = []
    for i in range(0, len(poses), chunk):
        hm = np.stack([rasterize_heatmap(poses[t], layout, size, line_config) for t in range(i, min(i + chunk, len(poses)))])
        c = torch.from_numpy(hm.astype(np.float32))
        out.extend(gen(c, s.expand(len(c), -1, -1, -1)).clamp(-1, 1).numpy())
    return out


def frame_to_uint8(frame: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> uint8 (H, W, 3), rounding half up."""
    x = np.clip((np.asarray(frame, np.float64) + 1.0) * 127.5, 0, 255)
    return np.floor(x + 0.5).astype(np.uint8).transpose(1, 2, 0)


# ---------------------------------------------------------------------------
# auxiliary networks
# ---------------------------------------------------------------------------


@dataclass
class HandNetConfig:
    steps: int = 1500
    batch_size: int = 32
    lr: float = 2e-3
    width: int = 32
    seed: int = 0
    log_every: int = 100


def train_handnet(crops: np.ndarray, keypoints: np.ndarray, config: HandNetConfig) -> tuple[HandKeypointNet, list[float]]:
    """Supervised keypoint regression on (N, 3, 60, 60) crops with (N, 21, 2) labels."""
    torch.manual_seed(config.seed)
    net = HandKeypointNet(config.width)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(config.steps, 1))
    x_all = torch.as_tensor(np.asarray(crops, np.float32))
    y_all = torch.as_tensor(np.asarray(keypoints, np.float32))
    curve = []
    for step in range(config.steps):
        g = torch.Generator().manual_seed(config.seed * 1_000_003 + step)
        idx = torch.randint(len(x_all), (config.batch_size,), generator=g)
        pred = net(x_all[idx])
        loss = F.smooth_l1_loss(pred * (HAND_PATCH - 1), y_all[idx] * (HAND_PATCH - 1))
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        curve.append(loss.item())
        if config.log_every and step % config.log_every == 0:
            log.info("handnet step %d loss %.4f", step, loss.item())
    net.eval()
    return net, curve


@torch.no_grad()
def predict_keypoints(net: HandKeypointNet, crops: np.ndarray, chunk: int = 256) -> np.ndarray:
    net.eval()
    x = np.asarray(crops, np.float32)
    out = [net(torch.from_numpy(x[i : i + chunk])).numpy() for i in range(0, len(x), chunk)]
    return np.concatenate(out).astype(np.float64)


def build_good_hands(net: HandKeypointNet, crops: Sequence[HandCrop], blur_threshold: float, window: int | None = None):
    """GoodHandSet over ``crops`` using the trained keypoint network as extractor."""
    def extractor(patch):
        return predict_keypoints(net, patch[None])[0]

    return select_good_hands(crops, extractor, blur_threshold, window)


@dataclass
class FeatureNetConfig:
    steps: int = 400
    batch_size: int = 16
    lr: float = 1e-3
    width: int = 16
    n_layers: int = 3
    include_input: bool = True
    seed: int = 0


def pretrain_feature_net(frames: np.ndarray, config: FeatureNetConfig) -> tuple[FeatureNet, list[float]]:
    """Frame autoencoder on (N, 3, H, W) frames; the encoder becomes the frozen perceptual net."""
    torch.manual_seed(config.seed)
    net = FeatureNet(config.width, config.n_layers, config.include_input)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    x_all = torch.as_tensor(np.asarray(frames, np.float32))
    curve = []
    for step in range(config.steps):
        g = torch.Generator().manual_seed(config.seed * 1_000_003 + step)
        idx = torch.randint(len(x_all), (config.batch_size,), generator=g)
        loss = F.l1_loss(net.reconstruct(x_all[idx]), x_all[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(loss.item())
    return net.freeze(), curve


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_pose2video(path, trainer: Pose2VideoTrainer, n_styles: int, extra: dict | None = None) -> None:
    cfg = trainer.cfg
    meta = {
        "kind": "pose2video",
        "resolution": cfg.resolution,
        "n_unet_layers": cfg.n_unet_layers,
        "N_S": n_styles,
        "loss_weights": asdict(cfg.weights),
        "seed": cfg.seed,
        "config": asdict(cfg),
        "n_limbs": trainer.m.gen.cond_channels,
        "feat": {"width": trainer.m.feat.layers[0][0].out_channels, "n_layers": trainer.m.feat.n_layers,
                 "include_input": trainer.m.feat.include_input},
    }
    if extra:
        meta.update(extra)
    save_checkpoint(path, meta, trainer.state())


def load_generator(path) -> tuple[UNetGenerator, dict]:
    meta, state = load_checkpoint(path)
    if meta.get("kind") != "pose2video":
        raise ValueError(f"{path} is not a pose2video checkpoint")
    cfg = meta["config"]
    gen = UNetGenerator(meta["n_limbs"], 3, cfg["ngf"], cfg["n_unet_layers"], cfg["resolution"])
    gen.load_state_dict(state["models"]["gen"])
    gen.eval()
    return gen, meta


def load_pose2video(path, handnet: HandKeypointNet | None = None) -> tuple[Pose2VideoModels, Pose2VideoConfig, dict]:
    """All pose2video networks from a checkpoint, ready for further training such as fine-tuning."""
    meta, state = load_checkpoint(path)
    if meta.get("kind") != "pose2video":
        raise ValueError(f"{path} is not a pose2video checkpoint")
    cfg = Pose2VideoConfig(**meta["config"])
    f = meta["feat"]
    feat = FeatureNet(f["width"], f["n_layers"], f["include_input"])
    feat.load_state_dict(state["models"]["feat"])
    models = build_models(cfg, meta["n_limbs"], handnet, feat, meta["N_S"])
    models.gen.load_state_dict(state["models"]["gen"])
    models.disc.load_state_dict(state["models"]["disc"])
    if models.hand_disc is not None:
        models.hand_disc.load_state_dict(state["models"]["hand_disc"])
    return models, cfg, meta


def save_handnet(path, net: HandKeypointNet, config: HandNetConfig, extra: dict | None = None) -> None:
    meta = {"kind": "handnet", "width": config.width, "seed": config.seed}
    meta.update(extra or {})
    save_checkpoint(path, meta, {"net": net.state_dict()})


def load_handnet(path) -> HandKeypointNet:
    meta, state = load_checkpoint(path)
    if meta.get("kind") != "handnet":
        raise ValueError(f"{path} is not a hand keypoint checkpoint")
    net = HandKeypointNet(meta["width"])
    net.load_state_dict(state["net"])
    return net.freeze()
