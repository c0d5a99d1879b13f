"""Procedural multi-style signer corpus.

A cartoon upper-body signer is driven by motion primitives (one per
vocabulary token) and rendered in several appearance styles.  Hand glyph
geometry and finger colours are style-invariant; torso, sleeves, skin,
hair, head size and arm width are style-dependent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .pose import (
    HAND_JOINTS,
    HAND_PATCH,
    JointLayout,
    PoseFrame,
    PoseSequence,
    default_layout,
    ground_truth_counters,
    serialize_pose_json,
    to_pixels,
)

log = logging.getLogger(__name__)

BACKGROUND = (128, 128, 128)
# fixed per-finger colours (thumb, index, middle, ring, pinky)
FINGER_COLORS = np.array(
    [[255, 230, 0], [255, 60, 0], [0, 200, 60], [0, 110, 255], [160, 0, 255]], dtype=np.uint8
)
TORSO_PALETTE = [
    (200, 40, 40),
    (40, 160, 60),
    (40, 70, 200),
    (220, 200, 40),
    (190, 50, 170),
    (40, 190, 200),
    (240, 130, 30),
    (40, 40, 40),
    (235, 230, 210),  # kept for an unseen style
]
SLEEVE_PALETTE = [
    (120, 20, 20),
    (20, 90, 30),
    (20, 30, 110),
    (150, 130, 20),
    (110, 20, 100),
    (20, 110, 120),
    (150, 70, 10),
    (90, 90, 90),
    (160, 150, 120),
]
SKIN_TONES = [(240, 200, 170), (200, 150, 110), (150, 100, 70), (100, 65, 45)]
HAIR_COLORS = [(30, 20, 10), (120, 70, 20), (220, 190, 100), (90, 90, 90)]

# rest-pose anchors in canvas units
NECK = np.array([0.5, 0.33])
NOSE = np.array([0.5, 0.20])
SHOULDER_HALF = 0.17
SHOULDER_Y = 0.37
HIP_HALF = 0.12
HIP_Y = 0.98
UPPER_ARM = 0.17
FOREARM = 0.16
PALM = 0.1
# per finger: base offset angle (deg, relative to palm axis) and three segment lengths
FINGERS = (
    (-60.0, (0.047, 0.04, 0.034)),  # thumb: from wrist
    (-22.0, (0.047, 0.034, 0.027)),
    (-5.0, (0.054, 0.038, 0.03)),
    (12.0, (0.049, 0.034, 0.027)),
    (30.0, (0.038, 0.027, 0.023)),
)
FINGER_BASE_SPREAD = (0.0, -0.03, -0.0095, 0.011, 0.028)  # lateral MCP offsets on the palm


@dataclass(frozen=True)
class StyleSpec:
    style_id: int
    torso_color: tuple[int, int, int]
    sleeve_color: tuple[int, int, int]
    skin_color: tuple[int, int, int]
    hair_color: tuple[int, int, int]
    background_color: tuple[int, int, int] = BACKGROUND
    head_radius: float = 6.0  # pixels at 64x64, scaled with resolution
    limb_width: float = 3.0


def make_styles(n: int, seed: int = 0) -> list[StyleSpec]:
    """``n`` styles with pairwise-distinct torso colours (palette order)."""
    if n > len(TORSO_PALETTE):
        raise ValueError(f"at most {len(TORSO_PALETTE)} styles available")
    rng = np.random.default_rng([seed, 7919])
    styles = []
    for i in range(n):
        styles.append(
            StyleSpec(
                style_id=i,
                torso_color=TORSO_PALETTE[i],
                sleeve_color=SLEEVE_PALETTE[i],
                skin_color=SKIN_TONES[i % len(SKIN_TONES)],
                hair_color=HAIR_COLORS[(i // 2) % len(HAIR_COLORS)],
                head_radius=float(np.round(rng.uniform(5.0, 6.5), 2)),
                limb_width=float(np.round(rng.uniform(2.5, 3.5), 2)),
            )
        )
    return styles


def color_to_unit(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) / 127.5 - 1.0


def to_frame(img: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    return (img.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def from_frame(frame: np.ndarray) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3)."""
    x = np.clip((np.asarray(frame, dtype=np.float64).transpose(1, 2, 0) + 1.0) * 127.5, 0, 255)
    return np.floor(x + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

# primitive parameter vector
N_PARAMS = 16
# 0 r_shoulder angle, 1 r_elbow angle, 2 l_shoulder angle, 3 l_elbow angle,
# 4 r_wrist bend, 5 l_wrist bend, 6..10 r curls, 11..15 l curls
REST_PARAMS = np.array([0.15, 0.3, 0.15, 0.3, 0.0, 0.0] + [0.1] * 10)


def _rot(v, ang):
    c, s = np.cos(ang), np.sin(ang)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _hand_joints(wrist, axis_angle, curls, mirror):
    """21 hand joints from wrist position, palm direction and finger curls."""
    pts = np.zeros((HAND_JOINTS, 2))
    pts[0] = wrist
    u = np.array([np.cos(axis_angle), np.sin(axis_angle)])
    v = np.array([-u[1], u[0]]) * mirror
    for f, ((base_deg, segs), spread) in enumerate(zip(FINGERS, FINGER_BASE_SPREAD)):
        base_ang = np.deg2rad(base_deg) * mirror
        if f == 0:
            start = wrist
        else:
            start = wrist + PALM * u + spread * v
        d = _rot(u, base_ang if f == 0 else base_ang * 0.3)
        # first joint of the finger: thumb CMC->MCP stays on the palm; fingers start at the MCP
        joint = start + (segs[0] * d if f == 0 else 0.0)
        pts[1 + 4 * f] = joint
        bend = 1.3 * curls[f] * mirror * (1.0 if f else -0.6)
        for k in range(3):
            d = _rot(d, bend)
            joint = joint + segs[k] * d * (0.9 if f == 0 and k == 0 else 1.0)
            pts[2 + 4 * f + k] = joint
    return pts


def pose_from_params(params: np.ndarray, layout: JointLayout, clip: bool = True) -> np.ndarray:
    """Joint coordinates (J, 2) for one primitive parameter vector."""
    coords = np.zeros((layout.n_joints, 2))
    idx = layout.index
    coords[idx("nose")] = NOSE
    coords[idx("neck")] = NECK
    rs = np.array([0.5 - SHOULDER_HALF, SHOULDER_Y])
    ls = np.array([0.5 + SHOULDER_HALF, SHOULDER_Y])
    coords[idx("r_shoulder")] = rs
    coords[idx("l_shoulder")] = ls
    coords[idx("r_hip")] = (0.5 - HIP_HALF, HIP_Y)
    coords[idx("l_hip")] = (0.5 + HIP_HALF, HIP_Y)
    if "r_eye" in layout.joint_names:
        for name, off in (("r_eye", (-0.03, -0.02)), ("l_eye", (0.03, -0.02)), ("r_ear", (-0.07, 0.0)),
                          ("l_ear", (0.07, 0.0)), ("mouth", (0.0, 0.04))):
            coords[idx(name)] = NOSE + np.array(off)

    for side, sh, base, mirror in (("r", rs, 0, -1.0), ("l", ls, 2, 1.0)):
        a_sh = params[base]
        a_el = params[base + 1]
        # angles measured from straight down, positive raises the arm outward
        down = np.array([0.0, 1.0])
        d1 = _rot(down, -a_sh * mirror)
        elbow = sh + UPPER_ARM * d1
        d2 = _rot(d1, a_el * mirror)
        wrist = elbow + FOREARM * d2
        coords[idx(f"{side}_elbow")] = elbow
        coords[idx(f"{side}_wrist")] = wrist
        bend = params[4 if side == "r" else 5]
        axis = np.arctan2(d2[1], d2[0]) + bend * mirror
        curls = params[6:11] if side == "r" else params[11:16]
        hand = _hand_joints(wrist, axis, curls, -mirror)
        start = idx(("rh_" if side == "r" else "lh_") + "wrist")
        coords[start : start + HAND_JOINTS] = hand
    return np.clip(coords, 0.0, 1.0) if clip else coords


# ---------------------------------------------------------------------------
# motion primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionPrimitive:
    """Key pose parameters reached by the end of the token plus a small wrist oscillation."""

    token_id: int
    key_params: tuple[float, ...]
    osc_amp: float
    osc_phase: float
    duration: int = 6

    def trajectory(self, start_params: np.ndarray) -> np.ndarray:
        """(duration, N_PARAMS) parameter trajectory starting near ``start_params``."""
        key = np.asarray(self.key_params)
        s = (np.arange(1, self.duration + 1) / self.duration)[:, None]
        ease = 0.5 - 0.5 * np.cos(np.pi * s)
        traj = start_params[None, :] * (1 - ease) + key[None, :] * ease
        wob = self.osc_amp * np.sin(2 * np.pi * s[:, 0] + self.osc_phase) * np.sin(np.pi * s[:, 0])
        traj[:, 1] += wob
        traj[:, 3] -= wob
        return traj


def make_vocabulary(vocab_size: int, seed: int, layout: JointLayout | None = None, duration: int = 6) -> list[MotionPrimitive]:
    layout = layout or default_layout()
    rng = np.random.default_rng([seed, 104729])
    prims = []
    for tok in range(vocab_size):
        while True:
            p = np.empty(N_PARAMS)
            p[0] = rng.uniform(-0.3, 1.1)  # right shoulder
            p[1] = rng.uniform(0.3, 2.3)  # right elbow (bends across the body)
            p[2] = rng.uniform(-0.3, 1.1)
            p[3] = rng.uniform(0.3, 2.3)
            p[4:6] = rng.uniform(-0.6, 0.6, size=2)
            p[6:16] = rng.uniform(0.0, 1.0, size=10)
            if _inside(p, layout):
                break
        prims.append(
            MotionPrimitive(
                token_id=tok,
                key_params=tuple(float(v) for v in p),
                osc_amp=float(rng.uniform(0.05, 0.25)),
                osc_phase=float(rng.uniform(0, 2 * np.pi)),
                duration=duration,
            )
        )
    return prims


def _inside(params, layout, margin=0.04):
    coords = pose_from_params(params, layout, clip=False)
    moving = [layout.index(f"{s}_{j}") for s in "rl" for j in ("elbow", "wrist")]
    moving += list(range(layout.hand_slice("left").start, layout.hand_slice("left").stop))
    moving += list(range(layout.hand_slice("right").start, layout.hand_slice("right").stop))
    c = coords[moving]
    return bool(np.all(c > margin) and np.all(c < 1 - margin))


def params_for_tokens(tokens, vocab: list[MotionPrimitive]) -> np.ndarray:
    state = REST_PARAMS.copy()
    out = []
    for tok in tokens:
        traj = vocab[int(tok)].trajectory(state)
        out.append(traj)
        state = np.asarray(vocab[int(tok)].key_params)
    return np.concatenate(out, axis=0)


def sequence_from_tokens(tokens, vocab: list[MotionPrimitive], layout: JointLayout | None = None, fps: float = 25.0) -> PoseSequence:
    """Deterministic token -> pose sequence decoding through the primitive programs."""
    layout = layout or default_layout()
    params = params_for_tokens(tokens, vocab)
    coords = np.stack([pose_from_params(p, layout) for p in params])
    n = len(coords)
    return PoseSequence(coords, np.ones((n, layout.n_joints)), ground_truth_counters(n), layout, fps)


def rest_frame(layout: JointLayout | None = None) -> PoseFrame:
    layout = layout or default_layout()
    return PoseFrame(pose_from_params(REST_PARAMS, layout), np.ones(layout.n_joints), 0.0)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _rc(xy, size):
    h, w = size
    return xy[1] * (h - 1), xy[0] * (w - 1)


def render_signer_rgb(
    frame: PoseFrame, style: StyleSpec, size: tuple[int, int] = (64, 64), layout: JointLayout | None = None
) -> np.ndarray:
    """Deterministic cartoon render, uint8 (H, W, 3)."""
    layout = layout or default_layout()
    h, w = size
    px = w / 64.0
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = style.background_color
    c = frame.coords
    vis = frame.confidence > 0
    idx = layout.index

    def P(name):
        return _rc(c[idx(name)], size)

    def ok(*names):
        return all(vis[idx(n)] for n in names)

    torso = np.array(style.torso_color, dtype=np.uint8)
    sleeve = np.array(style.sleeve_color, dtype=np.uint8)
    skin = np.array(style.skin_color, dtype=np.uint8)
    hair = np.array(style.hair_color, dtype=np.uint8)

    if ok("r_shoulder", "l_shoulder", "l_hip", "r_hip"):
        verts = np.array([P("r_shoulder"), P("l_shoulder"), P("l_hip"), P("r_hip")])
        _kernels.fill_convex_polygon(img, verts, torso)
        _kernels.draw_capsule(img, *P("r_shoulder"), *P("l_shoulder"), style.limb_width * px / 2, torso)
    if ok("neck", "nose"):
        _kernels.draw_capsule(img, *P("neck"), *P("nose"), 1.6 * px, skin)
        hr = style.head_radius * px
        nr, nc = P("nose")
        _kernels.draw_capsule(img, nr - 0.3 * hr, nc, nr - 0.3 * hr, nc, hr, hair)
        _kernels.draw_capsule(img, nr + 0.1 * hr, nc, nr + 0.1 * hr, nc, 0.8 * hr, skin)

    for side in ("r", "l"):
        for a, b in (("shoulder", "elbow"), ("elbow", "wrist")):
            na, nb = f"{side}_{a}", f"{side}_{b}"
            if ok(na, nb):
                _kernels.draw_capsule(img, *P(na), *P(nb), style.limb_width * px / 2, sleeve)
    # hands last, so their glyphs never depend on style geometry
    for side in ("r", "l"):
        hand = c[layout.hand_slice("right" if side == "r" else "left")]
        hvis = vis[layout.hand_slice("right" if side == "r" else "left")]
        _draw_hand(img, hand, hvis, size, skin, px)
    return img


def _draw_hand(img, hand, hvis, size, skin, px):
    pts = [_rc(p, size) for p in hand]
    for f in range(5):
        base = 1 + 4 * f
        if hvis[0] and hvis[base]:
            _kernels.draw_capsule(img, *pts[0], *pts[base], 0.9 * px, skin)
    for f in range(5):
        base = 1 + 4 * f
        col = FINGER_COLORS[f]
        for k in range(3):
            a, b = base + k, base + k + 1
            if hvis[a] and hvis[b]:
                _kernels.draw_capsule(img, *pts[a], *pts[b], 0.55 * px, col)
        if hvis[base + 3]:
            _kernels.draw_capsule(img, *pts[base + 3], *pts[base + 3], 0.9 * px, col)


def render_signer(
    frame: PoseFrame, style: StyleSpec, size: tuple[int, int] = (64, 64), layout: JointLayout | None = None
) -> np.ndarray:
    """Render as a Frame: float32 (3, H, W) in [-1, 1]."""
    return to_frame(render_signer_rgb(frame, style, size, layout))


def render_motion_blurred(
    seq: PoseSequence, t: int, style: StyleSpec, size=(64, 64), samples: int = 5, span: float = 0.8
) -> np.ndarray:
    """Average of renders at sub-frame poses around frame ``t`` (uint8)."""
    n = len(seq)
    acc = np.zeros((size[0], size[1], 3))
    for tau in np.linspace(-span / 2, span / 2, samples):
        x = float(np.clip(t + tau, 0, n - 1))
        lo = int(np.floor(x))
        hi = min(lo + 1, n - 1)
        a = x - lo
        coords = (1 - a) * seq.coords[lo] + a * seq.coords[hi]
        acc += render_signer_rgb(PoseFrame(coords, seq.confidence[t]), style, size, seq.layout)
    return np.floor(acc / samples + 0.5).astype(np.uint8)


def hand_speed_px(seq: PoseSequence, t: int, size=(64, 64)) -> float:
    """Largest per-frame displacement of any hand joint around ``t``, in pixels."""
    lay = seq.layout
    idx = np.r_[lay.hand_slice("left"), lay.hand_slice("right")]
    lo, hi = max(t - 1, 0), min(t + 1, len(seq) - 1)
    if hi == lo:
        return 0.0
    d = (seq.coords[hi, idx] - seq.coords[lo, idx]) / (hi - lo)
    d = d * np.array([size[1] - 1, size[0] - 1])
    return float(np.max(np.linalg.norm(d, axis=1)))


def style_image(style: StyleSpec, size=(64, 64), layout: JointLayout | None = None) -> np.ndarray:
    """Canonical reference render (rest pose) of a style, as a Frame."""
    return render_signer(rest_frame(layout), style, size, layout)


def hand_keypoints_in_patch(frame: PoseFrame, layout: JointLayout, side: str, size=(64, 64)):
    """Return (anchor (row, col), (21, 2) patch-normalised (x, y) keypoints)."""
    h, w = size
    anchor = to_pixels(frame.coords[layout.anchor(side)], size)
    hand = frame.coords[layout.hand_slice(side)]
    half = HAND_PATCH // 2
    x = (hand[:, 0] * (w - 1) - (anchor[1] - half)) / (HAND_PATCH - 1)
    y = (hand[:, 1] * (h - 1) - (anchor[0] - half)) / (HAND_PATCH - 1)
    return (int(anchor[0]), int(anchor[1])), np.stack([x, y], axis=1)


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


@dataclass
class CorpusConfig:
    n_sequences: int = 200
    n_styles: int = 8
    vocab_size: int = 20
    seed: int = 0
    resolution: int = 64
    min_tokens: int = 3
    max_tokens: int = 8
    frames_per_token: int = 6
    n_unseen_styles: int = 1
    motion_blur: bool = True
    blur_speed_px: float = 5.0
    fps: float = 25.0


class CorpusError(RuntimeError):
    pass


def _split_ids(n: int, seed: int) -> dict[str, list[int]]:
    order = np.random.default_rng([seed, 31337]).permutation(n)
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val :]),
    }


def _save_png(img: np.ndarray, path: Path) -> None:
    from PIL import Image

    Image.fromarray(img).save(path, format="PNG", optimize=False, compress_level=6)


def generate_corpus(config: CorpusConfig, out_dir: str | Path) -> dict:
    """Write the corpus to ``out_dir`` and return a summary."""
    if config.n_styles < 2:
        raise ValueError("controllable generation needs at least 2 styles")
    if not 1 <= config.min_tokens <= config.max_tokens:
        raise ValueError("token length bounds are inconsistent")
    out = Path(out_dir)
    layout = default_layout()
    size = (config.resolution, config.resolution)
    try:
        for sub in ("poses", "frames", "hands", "styles"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusError(f"cannot create corpus directories under {out}: {e}") from e

    vocab = make_vocabulary(config.vocab_size, config.seed, layout, config.frames_per_token)
    styles = make_styles(config.n_styles + config.n_unseen_styles, config.seed)
    splits = _split_ids(config.n_sequences, config.seed)
    split_of = {i: name for name, ids in splits.items() for i in ids}

    try:
        (out / "vocab.txt").write_text("".join(f"w{t:02d}\n" for t in range(config.vocab_size)))
        for st in styles:
            _save_png(render_signer_rgb(rest_frame(layout), st, size, layout), out / "styles" / f"style{st.style_id}.png")
        style_doc = {
            "n_seen": config.n_styles,
            "styles": [dict(asdict(st), seen=st.style_id < config.n_styles) for st in styles],
        }
        (out / "styles" / "styles.json").write_text(json.dumps(style_doc, indent=1))

        records = []
        for i in range(config.n_sequences):
            rng = np.random.default_rng([config.seed, i])
            n_tok = int(rng.integers(config.min_tokens, config.max_tokens + 1))
            tokens = [int(t) for t in rng.integers(0, config.vocab_size, size=n_tok)]
            seq = sequence_from_tokens(tokens, vocab, layout, config.fps)
            sid = f"seq{i:04d}"
            (out / "poses" / f"{sid}.json").write_bytes(serialize_pose_json(seq, (config.resolution, config.resolution)))

            blurred = []
            for t in range(len(seq)):
                blurred.append(
                    bool(config.motion_blur and split_of[i] == "train" and hand_speed_px(seq, t, size) > config.blur_speed_px)
                )
            for st in styles[: config.n_styles]:
                fdir = out / "frames" / sid / f"style{st.style_id}"
                fdir.mkdir(parents=True, exist_ok=True)
                for t in range(len(seq)):
                    if blurred[t]:
                        img = render_motion_blurred(seq, t, st, size)
                    else:
                        img = render_signer_rgb(seq[t], st, size, layout)
                    _save_png(img, fdir / f"frame{t:05d}.png")

            hand_frames = []
            for t in range(len(seq)):
                entry = {"blurred": blurred[t]}
                for side in ("left", "right"):
                    anchor, kp = hand_keypoints_in_patch(seq[t], layout, side, size)
                    entry[side] = {"anchor": list(anchor), "keypoints": np.round(kp, 8).tolist()}
                hand_frames.append(entry)
            hdir = out / "hands" / sid
            hdir.mkdir(parents=True, exist_ok=True)
            (hdir / "keypoints.json").write_text(json.dumps({"frames": hand_frames}, separators=(",", ":")))

            records.append(
                {
                    "id": sid,
                    "text_tokens": tokens,
                    "pose_file": f"poses/{sid}.json",
                    "split": split_of[i],
                    "n_frames": len(seq),
                }
            )
        with open(out / "manifest.jsonl", "w") as fh:
            for r in records:
                fh.write(json.dumps(r) + "\n")
        summary = {
            "config": asdict(config),
            "counts": {k: len(v) for k, v in splits.items()},
            "n_frames": {k: sum(r["n_frames"] for r in records if r["split"] == k) for k in splits},
            "styles": config.n_styles,
        }
        (out / "corpus.json").write_text(json.dumps(summary, indent=1))
    except OSError as e:
        raise CorpusError(f"failed writing corpus under {out}: {e}") from e
    return summary
