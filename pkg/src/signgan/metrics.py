"""Image-quality and hand-accuracy metrics for generated frames.

Frames are (3, H, W) float arrays in [-1, 1].  SSIM maps them to the 8-bit
range first so the usual stabilising constants apply.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .pose import HAND_PATCH, JointLayout, NoHandError, PoseFrame, crop_hand, default_layout, to_pixels

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2
TORSO_JOINTS = ("r_shoulder", "l_shoulder", "r_hip", "l_hip")


def _to_255(x) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 1.0) * 127.5


def _gauss_1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    p = len(g) // 2
    return out[p:-p, p:-p]


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM over the valid region of one 2-D channel in [0, 255]."""
    g = _gauss_1d()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * sab + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (saa + sbb + C2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError("image smaller than the SSIM window")
    a, b = _to_255(a), _to_255(b)
    return float(np.mean([ssim_map(a[c], b[c]).mean() for c in range(a.shape[0])]))


def _visible_sides(pose: PoseFrame, layout: JointLayout) -> list[str]:
    return [s for s in ("left", "right") if pose.confidence[layout.anchor(s)] > 0]


def hand_crops(image, pose: PoseFrame, layout: JointLayout, background=(0.0, 0.0, 0.0)) -> dict:
    out = {}
    for side in _visible_sides(pose, layout):
        try:
            out[side] = crop_hand(np.asarray(image), pose, side, layout, background).patch
        except NoHandError:
            pass
    return out


def hand_ssim(a, b, pose: PoseFrame, layout: JointLayout | None = None, background=(0.0, 0.0, 0.0)) -> float | None:
    """Mean SSIM over the visible 60x60 hand crops, or None when no hand is visible."""
    layout = layout or default_layout()
    ca = hand_crops(a, pose, layout, background)
    cb = hand_crops(b, pose, layout, background)
    if not ca:
        return None
    return float(np.mean([ssim(ca[s], cb[s]) for s in ca]))


def keypoint_distance_px(kp_a, kp_b, patch: int = HAND_PATCH) -> float:
    """Mean Euclidean distance in patch pixels between (21, 2) patch-normalised keypoint sets."""
    d = (np.asarray(kp_a, dtype=np.float64) - np.asarray(kp_b, dtype=np.float64)) * (patch - 1)
    return float(np.sqrt((d**2).sum(-1)).mean())


def run_keypoint_net(h: Callable, patches: np.ndarray) -> np.ndarray:
    """Apply a keypoint regressor to (N, 3, 60, 60) patches; returns (N, 21, 2)."""
    import torch

    if isinstance(h, torch.nn.Module):
        was = h.training
        h.eval()
        with torch.no_grad():
            out = h(torch.as_tensor(np.asarray(patches), dtype=torch.float32))
        h.train(was)
        return out.double().numpy()
    return np.asarray(h(patches), dtype=np.float64)


def hand_pose_distance(produced, target, pose: PoseFrame, h: Callable, layout: JointLayout | None = None,
                       background=(0.0, 0.0, 0.0)) -> float | None:
    """Keypoint distance (pixels of the 60x60 crop) between H(produced crop) and H(target crop)."""
    layout = layout or default_layout()
    cp = hand_crops(produced, pose, layout, background)
    ct = hand_crops(target, pose, layout, background)
    if not cp:
        return None
    sides = sorted(cp)
    kp = run_keypoint_net(h, np.stack([cp[s] for s in sides] + [ct[s] for s in sides]))
    n = len(sides)
    return float(np.mean([keypoint_distance_px(kp[i], kp[n + i]) for i in range(n)]))


# fid ---------------------------------------------------------------------


def _sqrt_psd(mat: np.ndarray, tol: float) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    if w.min() < -tol:
        raise FloatingPointError(f"matrix not PSD (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(mu_a, cov_a, mu_b, cov_b, tol: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of the product root is taken from the eigenvalues of the
    symmetric matrix S_a^(1/2) S_b S_a^(1/2), which share their spectrum
    with S_a S_b.
    """
    mu_a, mu_b = np.atleast_1d(mu_a).astype(np.float64), np.atleast_1d(mu_b).astype(np.float64)
    cov_a, cov_b = np.atleast_2d(cov_a).astype(np.float64), np.atleast_2d(cov_b).astype(np.float64)
    ra = _sqrt_psd(cov_a, tol)
    mid = ra @ cov_b @ ra
    w = np.linalg.eigvalsh((mid + mid.T) / 2)
    if w.min() < -tol:
        raise FloatingPointError(f"product covariance not PSD (eigenvalue {w.min():.3g})")
    tr_root = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_root)
    return max(val, 0.0)


def feature_stats(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    return feats.mean(0), np.cov(feats, rowvar=False, bias=False).reshape(feats.shape[1], feats.shape[1])


def pooled_pixel_features(frames, grid: int = 4) -> np.ndarray:
    """Cheap stand-in extractor: per-channel means over a grid x grid partition.

    Scores from this extractor are only comparable with each other.
    """
    x = np.asarray(frames, dtype=np.float64)
    n, c, h, w = x.shape
    x = x[:, :, : h - h % grid, : w - w % grid].reshape(n, c, grid, h // grid, grid, w // grid)
    return x.mean(axis=(3, 5)).reshape(n, -1)


def fid(set_a, set_b, feat: Callable | None = None) -> float:
    """Frechet distance between feature clouds of two frame sets."""
    feat = feat or pooled_pixel_features
    fa, fb = np.asarray(feat(np.asarray(set_a)), np.float64), np.asarray(feat(np.asarray(set_b)), np.float64)
    if len(fa) < 2 or len(fb) < 2:
        raise ValueError("need at least two frames per set")
    return frechet_distance(*feature_stats(fa), *feature_stats(fb))


# style -------------------------------------------------------------------


def torso_box(pose: PoseFrame, layout: JointLayout, size: tuple[int, int]) -> tuple[int, int, int, int]:
    """(r0, r1, c0, c1) inclusive-exclusive bounding box of the shoulder and hip joints."""
    idx = [layout.index(n) for n in TORSO_JOINTS if n in layout.joint_names]
    if len(idx) < len(TORSO_JOINTS) or np.any(pose.confidence[idx] <= 0):
        raise ValueError("torso joints missing")
    px = to_pixels(pose.coords[idx], size)
    return int(px[:, 0].min()), int(px[:, 0].max()) + 1, int(px[:, 1].min()), int(px[:, 1].max()) + 1


def torso_mean(frame, pose: PoseFrame, layout: JointLayout | None = None) -> np.ndarray:
    layout = layout or default_layout()
    frame = np.asarray(frame, dtype=np.float64)
    r0, r1, c0, c1 = torso_box(pose, layout, frame.shape[-2:])
    return frame[:, r0:r1, c0:c1].mean(axis=(1, 2))


def style_distance(frame, style, pose: PoseFrame, layout: JointLayout | None = None,
                   style_pose: PoseFrame | None = None) -> float:
    """Distance between torso mean colours of ``frame`` and the style image.

    The style image's torso is located with ``style_pose`` (the pose it was
    rendered in), defaulting to ``pose``.
    """
    a = torso_mean(frame, pose, layout)
    b = torso_mean(style, style_pose if style_pose is not None else pose, layout)
    return float(np.linalg.norm(a - b))


# report ------------------------------------------------------------------


def _mean_present(rows, key):
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class MetricReport:
    per_frame: list = field(default_factory=list)
    fid: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ssim(self):
        return _mean_present(self.per_frame, "ssim")

    @property
    def hand_ssim(self):
        return _mean_present(self.per_frame, "hand_ssim")

    @property
    def hand_pose(self):
        return _mean_present(self.per_frame, "hand_pose")

    def summary(self) -> dict:
        out = {"ssim": self.ssim, "hand_ssim": self.hand_ssim, "hand_pose": self.hand_pose}
        if self.fid is not None:
            out["fid"] = self.fid
        return out

    def to_json(self) -> str:
        doc = dict(self.summary(), per_frame=self.per_frame, meta=self.meta)
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        cols = ["sequence", "frame", "ssim", "hand_ssim", "hand_pose"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.per_frame:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
        return buf.getvalue()


def evaluate_frames(
    produced: Sequence[np.ndarray],
    target: Sequence[np.ndarray],
    poses: Sequence[PoseFrame],
    h: Callable | None = None,
    layout: JointLayout | None = None,
    background=(0.0, 0.0, 0.0),
    feat: Callable | None = None,
    with_fid: bool = True,
    sequence_ids: Sequence[str] | None = None,
) -> MetricReport:
    layout = layout or default_layout()
    if not (len(produced) == len(target) == len(poses)):
        raise ValueError("produced, target and poses differ in length")
    rows = []
    for i, (p, t, pose) in enumerate(zip(produced, target, poses)):
        row = {
            "sequence": sequence_ids[i] if sequence_ids is not None else "",
            "frame": i,
            "ssim": ssim(p, t),
            "hand_ssim": hand_ssim(p, t, pose, layout, background),
            "hand_pose": hand_pose_distance(p, t, pose, h, layout, background) if h is not None else None,
        }
        rows.append(row)
    report = MetricReport(rows, meta={"hand_pose_norm": "euclidean per keypoint, crop pixels", "n_frames": len(rows)})
    if with_fid and len(produced) >= 2:
        report.fid = fid(np.stack(produced), np.stack(target), feat)
        report.meta["fid_features"] = getattr(feat, "__name__", type(feat).__name__) if feat else "pooled_pixel_features"
    return report
