"""Adversarial, feature-matching, perceptual, hand keypoint and temporal losses.

Discriminators output logits; D(x) = sigmoid(logit), so log D and
log(1 - D) are evaluated with logsigmoid for stability.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F


@dataclass
class LossWeights:
    lambda_FM: float = 10.0
    lambda_VGG: float = 10.0
    lambda_Key: float = 1.0
    lambda_T: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {v}")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(*(factor * v for v in asdict(self).values()))


def _log_d(logits):
    return F.logsigmoid(logits)


def _log_1m_d(logits):
    return F.logsigmoid(-logits)


def gan_terms(real_logits, fake_logits_detached, fake_logits, mode: str = "log"):
    """(loss_D, loss_G) from per-scale logit maps.

    Each scale contributes its patch-averaged term; scales are summed.
    ``mode="ls"`` switches to the least-squares objective.
    """
    if mode not in ("log", "ls"):
        raise ValueError(f"unknown GAN mode {mode!r}")
    loss_d = 0.0
    loss_g = 0.0
    for r, fd, f in zip(real_logits, fake_logits_detached, fake_logits):
        if mode == "log":
            loss_d = loss_d - (_log_d(r).mean() + _log_1m_d(fd).mean())
            loss_g = loss_g - _log_d(f).mean()
        else:
            loss_d = loss_d + ((torch.sigmoid(r) - 1) ** 2).mean() + (torch.sigmoid(fd) ** 2).mean()
            loss_g = loss_g + ((torch.sigmoid(f) - 1) ** 2).mean()
    return loss_d, loss_g


def gan_loss(disc, real, fake, cond, style, mode: str = "log"):
    """Multi-scale conditional GAN loss; returns (loss_D, loss_G).

    loss_D sees ``fake`` detached so it only trains the discriminators.
    """
    real_out = disc(real, cond, style)
    fake_det = disc(fake.detach(), cond, style)
    fake_out = disc(fake, cond, style)
    return gan_terms([o[-1] for o in real_out], [o[-1] for o in fake_det], [o[-1] for o in fake_out], mode)


def feature_matching_terms(real_feats, fake_feats):
    """Mean L1 between matching intermediate activations, averaged over layers and scales.

    The final logits of each scale are excluded; real features are constants.
    """
    per_scale = []
    for rs, fs in zip(real_feats, fake_feats):
        layers = [F.l1_loss(f, r.detach()) for r, f in zip(rs[:-1], fs[:-1])]
        per_scale.append(torch.stack(layers).mean())
    return torch.stack(per_scale).mean()


def feature_matching_loss(disc, real, fake, cond, style):
    with torch.no_grad():
        real_feats = disc(real, cond, style)
    return feature_matching_terms(real_feats, disc(fake, cond, style))


def perceptual_loss(feat_net, produced, target, weights=None):
    """sum_l w_l * L1(feat_l(produced), feat_l(target)), default w_l = 1/L."""
    fp = feat_net(produced)
    ft = feat_net(target)
    n = len(fp)
    weights = weights if weights is not None else [1.0 / n] * n
    if len(weights) != n:
        raise ValueError(f"{len(weights)} weights for {n} feature layers")
    return sum(w * F.l1_loss(a, b) for w, a, b in zip(weights, fp, ft))


def temporal_loss(produced_pair, target_pair):
    """mean((d_hat - d_star)^2) with d = frame_2 - frame_1 for each pair."""
    p1, p2 = produced_pair
    t1, t2 = target_pair
    return ((p2 - p1) - (t2 - t1)).pow(2).mean()


def _masked_mean(x, mask):
    if mask is None:
        return x.mean()
    m = mask.to(x.dtype)
    denom = m.sum()
    if denom == 0:
        return x.sum() * 0.0
    return (x * m).sum() / denom


def hand_keypoint_terms(real_logits, fake_logits_detached, fake_logits, mask=None):
    """loss_DH = -[log D_H(real) + log(1 - D_H(fake))], loss_GH = -log D_H(fake).

    ``mask`` (per sample) drops hands that are not visible; with nothing
    visible both terms are 0.
    """
    loss_dh = -(_masked_mean(_log_d(real_logits), mask) + _masked_mean(_log_1m_d(fake_logits_detached), mask))
    loss_gh = -_masked_mean(_log_d(fake_logits), mask)
    return loss_dh, loss_gh


def hand_keypoint_loss(d_h, h, fake_crop, real_source, mask=None):
    """Keypoint-space hand loss.

    ``fake_crop`` (B, 3, 60, 60) is passed through the frozen keypoint net
    ``h`` so the generator gradient flows through it; ``real_source``
    (B, 21, 2) are real keypoints or curated good-hand samples.
    """
    k_fake = h(fake_crop)
    return hand_keypoint_terms(d_h(real_source), d_h(k_fake.detach()), d_h(k_fake), mask)


def patch_hand_terms(real_logits, fake_logits_detached, fake_logits, mask=None):
    """Image-space hand discriminator; logits maps are averaged per sample first."""
    def per(x):
        return x.reshape(x.shape[0], -1)

    r = _log_d(per(real_logits)).mean(1)
    fd = _log_1m_d(per(fake_logits_detached)).mean(1)
    f = _log_d(per(fake_logits)).mean(1)
    return -(_masked_mean(r, mask) + _masked_mean(fd, mask)), -_masked_mean(f, mask)


def total_loss(components: dict, weights: LossWeights):
    """gan_G + l_FM * FM + l_VGG * perceptual + l_Key * keyG + l_T * temporal."""
    if not isinstance(weights, LossWeights):
        weights = LossWeights(**weights)
    return (
        components["gan_G"]
        + weights.lambda_FM * components.get("FM", 0.0)
        + weights.lambda_VGG * components.get("VGG", 0.0)
        + weights.lambda_Key * components.get("KeyG", 0.0)
        + weights.lambda_T * components.get("T", 0.0)
    )
