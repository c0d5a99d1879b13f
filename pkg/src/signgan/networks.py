"""Generator, discriminators, hand keypoint regressor and perceptual feature net."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .pose import HAND_JOINTS, HAND_PATCH

N_SCALES = 3


class ConfigError(ValueError):
    pass


def _down(cin, cout, norm=True):
    layers = [nn.Conv2d(cin, cout, 4, 2, 1)]
    if norm:
        layers.append(nn.InstanceNorm2d(cout, affine=True))
    layers.append(nn.LeakyReLU(0.2))
    return nn.Sequential(*layers)


def _up(cin, cout):
    return nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, 2, 1), nn.InstanceNorm2d(cout, affine=True), nn.ReLU())


class UNetGenerator(nn.Module):
    """U-Net on [heat-maps | style image] with skips from down layer i to up layer n-i.

    ``skip_scale`` multiplies every skip tensor; setting it to 0 is a
    diagnostic mode that removes the skip contribution.
    """

    def __init__(self, cond_channels: int, style_channels: int = 3, ngf: int = 32, n_layers: int = 4,
                 resolution: int = 64):
        super().__init__()
        if n_layers < 2:
            raise ConfigError("U-Net needs at least two levels")
        if resolution % (2**n_layers):
            raise ConfigError(f"resolution {resolution} not divisible by 2^{n_layers}")
        self.cond_channels = cond_channels
        self.style_channels = style_channels
        self.resolution = resolution
        self.n_layers = n_layers
        self.skip_scale = 1.0
        ch = [min(ngf * 2**i, ngf * 8) for i in range(n_layers)]
        self.down = nn.ModuleList()
        cin = cond_channels + style_channels
        for i, c in enumerate(ch):
            self.down.append(_down(cin, c, norm=i > 0))
            cin = c
        self.up = nn.ModuleList()
        for i in range(n_layers - 1):
            cin = ch[-1] if i == 0 else 2 * ch[n_layers - 1 - i]
            self.up.append(_up(cin, ch[n_layers - 2 - i]))
        # full-resolution conv after the last upsample suppresses checkerboard noise
        self.out = nn.Sequential(nn.ConvTranspose2d(2 * ch[0], ch[0], 4, 2, 1), nn.ReLU(True),
                                 nn.Conv2d(ch[0], 3, 3, 1, 1))

    def forward(self, cond: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        if cond.shape[1] != self.cond_channels or style.shape[1] != self.style_channels:
            raise ConfigError(f"expected {self.cond_channels}+{self.style_channels} channels, "
                              f"got {cond.shape[1]}+{style.shape[1]}")
        if cond.shape[-2:] != style.shape[-2:] or cond.shape[-1] != self.resolution:
            raise ConfigError(f"spatial size {tuple(cond.shape[-2:])}/{tuple(style.shape[-2:])} "
                              f"does not match resolution {self.resolution}")
        x = torch.cat([cond, style], dim=1)
        skips = []
        for d in self.down:
            x = d(x)
            skips.append(x)
        for i, u in enumerate(self.up):
            x = u(x)
            x = torch.cat([x, self.skip_scale * skips[-2 - i]], dim=1)
        return torch.tanh(self.out(x))


class PatchDiscriminator(nn.Module):
    """PatchGAN; returns the list of intermediate activations, last entry = logits map."""

    def __init__(self, in_channels: int, ndf: int = 32, n_layers: int = 2):
        super().__init__()
        blocks = [nn.Sequential(nn.Conv2d(in_channels, ndf, 4, 2, 1), nn.LeakyReLU(0.2))]
        c = ndf
        for _ in range(n_layers - 1):
            blocks.append(nn.Sequential(nn.Conv2d(c, c * 2, 4, 2, 1), nn.InstanceNorm2d(c * 2, affine=True), nn.LeakyReLU(0.2)))
            c *= 2
        blocks.append(nn.Sequential(nn.Conv2d(c, c, 3, 1, 1), nn.InstanceNorm2d(c, affine=True), nn.LeakyReLU(0.2)))
        blocks.append(nn.Conv2d(c, 1, 3, 1, 1))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for b in self.blocks:
            x = b(x)
            feats.append(x)
        return feats


class DiscriminatorPyramid(nn.Module):
    """Three patch discriminators at full, 1/2 and 1/4 resolution."""

    def __init__(self, in_channels: int, ndf: int = 32, n_layers: int = 2, n_scales: int = N_SCALES):
        super().__init__()
        if n_scales != N_SCALES:
            raise ConfigError(f"the discriminator pyramid has exactly {N_SCALES} scales, got {n_scales}")
        self.in_channels = in_channels
        self.scales = nn.ModuleList([PatchDiscriminator(in_channels, ndf, n_layers) for _ in range(n_scales)])

    def forward(self, image, cond, style):
        """Per-scale feature lists for ``image`` conditioned on heat-maps and style."""
        x = torch.cat([image, cond, style], dim=1)
        out = []
        for i, d in enumerate(self.scales):
            if i:
                x = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
            out.append(d(x))
        return out


def soft_argmax(heat: torch.Tensor) -> torch.Tensor:
    """(B, K, h, w) logits -> (B, K, 2) expected (x, y) in [0, 1] cell-centre units."""
    b, k, h, w = heat.shape
    p = torch.softmax(heat.reshape(b, k, h * w), dim=-1).reshape(b, k, h, w)
    xs = (torch.arange(w, dtype=heat.dtype) + 0.5) / w
    ys = (torch.arange(h, dtype=heat.dtype) + 0.5) / h
    x = (p.sum(2) * xs).sum(-1)
    y = (p.sum(3) * ys).sum(-1)
    return torch.stack([x, y], dim=-1)


class HandKeypointNet(nn.Module):
    """60x60 crop -> 21 patch-normalised keypoints through a soft-argmax head."""

    def __init__(self, width: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 4, 2, 1), nn.BatchNorm2d(width), nn.ReLU(),
            nn.Conv2d(width, width, 3, 1, 1), nn.BatchNorm2d(width), nn.ReLU(),
            nn.Conv2d(width, width, 3, 1, 2, dilation=2), nn.BatchNorm2d(width), nn.ReLU(),
            nn.Conv2d(width, width, 3, 1, 4, dilation=4), nn.BatchNorm2d(width), nn.ReLU(),
            nn.Conv2d(width, width, 3, 1, 1), nn.ReLU(),
        )
        self.head = nn.Conv2d(width, HAND_JOINTS, 1)
        self.log_beta = nn.Parameter(torch.tensor(1.0))

    def heatmaps(self, crop):
        return self.head(self.body(crop)) * torch.exp(self.log_beta)

    def forward(self, crop):
        if crop.shape[-2:] != (HAND_PATCH, HAND_PATCH):
            raise ConfigError(f"hand crops must be {HAND_PATCH}x{HAND_PATCH}")
        k = soft_argmax(self.heatmaps(crop))
        # cell-centre units of the 30x30 map -> pixel / (patch - 1) units
        return (k * HAND_PATCH - 0.5) / (HAND_PATCH - 1)

    def freeze(self):
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


class KeypointDiscriminator(nn.Module):
    """Three fully connected layers on flattened 21x2 keypoints; outputs logits."""

    def __init__(self, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * HAND_JOINTS, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )

    def forward(self, kp):
        return self.net(kp.reshape(kp.shape[0], -1)).squeeze(-1)


class PatchHandDiscriminator(nn.Module):
    """Image discriminator on 60x60 hand crops (the ablation alternative)."""

    def __init__(self, ndf: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, ndf, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(ndf, ndf * 2, 4, 2, 1), nn.InstanceNorm2d(ndf * 2, affine=True), nn.LeakyReLU(0.2),
            nn.Conv2d(ndf * 2, ndf * 2, 3, 1, 1), nn.InstanceNorm2d(ndf * 2, affine=True), nn.LeakyReLU(0.2),
            nn.Conv2d(ndf * 2, 1, 3, 1, 1),
        )

    def forward(self, crop):
        return self.net(crop)


class FeatureNet(nn.Module):
    """Small conv encoder exposing per-layer features for the perceptual loss.

    Pre-trained as the encoder of a frame autoencoder, then frozen.  With
    ``include_input`` the image itself is the first feature layer.
    """

    def __init__(self, width: int = 32, n_layers: int = 3, include_input: bool = False):
        super().__init__()
        self.include_input = include_input
        layers = []
        c = 3
        for i in range(n_layers):
            out = width * 2**i
            layers.append(nn.Sequential(nn.Conv2d(c, out, 3, 1 if i == 0 else 2, 1), nn.LeakyReLU(0.2)))
            c = out
        self.layers = nn.ModuleList(layers)
        self.decoder = nn.Sequential(
            *[nn.Sequential(nn.ConvTranspose2d(width * 2**i, width * 2 ** max(i - 1, 0), 4, 2, 1), nn.LeakyReLU(0.2))
              for i in range(n_layers - 1, 0, -1)],
            nn.Conv2d(width, 3, 3, 1, 1), nn.Tanh(),
        )

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def forward(self, x):
        feats = [x] if self.include_input else []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats

    def reconstruct(self, x):
        for layer in self.layers:
            x = layer(x)
        return self.decoder(x)

    def freeze(self):
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self
