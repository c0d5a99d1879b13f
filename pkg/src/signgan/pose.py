"""Skeleton data model shared by both stages.

Joint layout, pose sequences, OpenPose-style JSON ingestion, normalisation
between datasets, per-limb heat-map rasterization, hand cropping and
curation of the "good hands" set.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from . import _kernels

HAND_PATCH = 60
HAND_JOINTS = 21
# index of the middle-finger MCP joint inside a 21-point hand
MIDDLE_KNUCKLE = 9

BODY_JOINTS = (
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "l_hip",
)
BODY_LIMBS = (
    ("neck", "nose"),
    ("neck", "r_shoulder"),
    ("r_shoulder", "r_elbow"),
    ("r_elbow", "r_wrist"),
    ("neck", "l_shoulder"),
    ("l_shoulder", "l_elbow"),
    ("l_elbow", "l_wrist"),
    ("neck", "r_hip"),
    ("neck", "l_hip"),
)
FACE_JOINTS = ("r_eye", "l_eye", "r_ear", "l_ear", "mouth")
FACE_LIMBS = (
    ("nose", "r_eye"),
    ("nose", "l_eye"),
    ("r_eye", "r_ear"),
    ("l_eye", "l_ear"),
    ("nose", "mouth"),
)
HAND_JOINT_NAMES = ("wrist",) + tuple(
    f"{finger}_{j}" for finger in ("thumb", "index", "middle", "ring", "pinky") for j in range(1, 5)
)
HAND_LIMBS = tuple(
    pair
    for base in (1, 5, 9, 13, 17)
    for pair in ((0, base), (base, base + 1), (base + 1, base + 2), (base + 2, base + 3))
)


class PoseFormatError(ValueError):
    """Malformed pose file or schema mismatch."""


class InsufficientLandmarksError(ValueError):
    pass


class NoHandError(ValueError):
    """Requested hand is not visible in the frame."""


class OutOfFrameWarning(UserWarning):
    pass


class EmptyGoodHandSetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class JointLayout:
    """Ordered joints, limb table and the two middle-knuckle anchors.

    ``json_groups`` maps OpenPose JSON keys to contiguous joint ranges.
    """

    joint_names: tuple[str, ...]
    limbs: tuple[tuple[int, int], ...]
    hand_anchor_indices: tuple[int, int]
    json_groups: tuple[tuple[str, int, int], ...] = ()

    def __post_init__(self):
        n = len(self.joint_names)
        seen = set()
        for a, b in self.limbs:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"limb ({a}, {b}) references a joint outside 0..{n - 1}")
            if a == b:
                raise ValueError(f"limb ({a}, {b}) is a self-loop")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValueError(f"duplicate limb ({a}, {b})")
            seen.add(key)
        for idx in self.hand_anchor_indices:
            if not 0 <= idx < n:
                raise ValueError(f"hand anchor {idx} is not a joint index")
        if not self.json_groups:
            object.__setattr__(self, "json_groups", (("pose_keypoints_2d", 0, n),))

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def n_limbs(self) -> int:
        return len(self.limbs)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def hand_slice(self, side: str) -> slice:
        start = self.index(f"{_side_prefix(side)}wrist")
        return slice(start, start + HAND_JOINTS)

    def anchor(self, side: str) -> int:
        return self.hand_anchor_indices[0 if side == "left" else 1]

    def limb_array(self) -> np.ndarray:
        return np.asarray(self.limbs, dtype=np.int64).reshape(-1, 2)


def _side_prefix(side: str) -> str:
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return "lh_" if side == "left" else "rh_"


def default_layout(face: bool = False) -> JointLayout:
    """Upper body (10 joints) + two 21-joint hands, optionally 5 face anchors."""
    names = list(BODY_JOINTS)
    if face:
        names += FACE_JOINTS
    body_n = len(names)
    names += ["lh_" + n for n in HAND_JOINT_NAMES]
    names += ["rh_" + n for n in HAND_JOINT_NAMES]
    idx = {n: i for i, n in enumerate(names)}
    limbs = [(idx[a], idx[b]) for a, b in BODY_LIMBS]
    if face:
        limbs += [(idx[a], idx[b]) for a, b in FACE_LIMBS]
    lh0 = idx["lh_wrist"]
    rh0 = idx["rh_wrist"]
    limbs += [(lh0 + a, lh0 + b) for a, b in HAND_LIMBS]
    limbs += [(rh0 + a, rh0 + b) for a, b in HAND_LIMBS]
    groups = [("pose_keypoints_2d", 0, len(BODY_JOINTS))]
    if face:
        groups.append(("face_keypoints_2d", len(BODY_JOINTS), body_n))
    groups += [
        ("hand_left_keypoints_2d", lh0, lh0 + HAND_JOINTS),
        ("hand_right_keypoints_2d", rh0, rh0 + HAND_JOINTS),
    ]
    return JointLayout(
        joint_names=tuple(names),
        limbs=tuple(limbs),
        hand_anchor_indices=(lh0 + MIDDLE_KNUCKLE, rh0 + MIDDLE_KNUCKLE),
        json_groups=tuple(groups),
    )


@dataclass
class PoseFrame:
    coords: np.ndarray  # (J, 2) x, y in canvas units
    confidence: np.ndarray  # (J,)
    counter: float = 0.0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError(f"coords must be (J, 2), got {self.coords.shape}")
        if self.confidence.shape != (self.coords.shape[0],):
            raise ValueError("confidence length must equal joint count")
        if not 0.0 <= self.counter <= 1.0:
            raise ValueError(f"counter {self.counter} outside [0, 1]")


def ground_truth_counters(n: int) -> np.ndarray:
    """Progress values t / (T - 1); a single frame gets 1.0."""
    if n == 1:
        return np.ones(1)
    return np.arange(n, dtype=np.float64) / (n - 1)


@dataclass
class PoseSequence:
    """T frames of one layout, stored as stacked arrays."""

    coords: np.ndarray  # (T, J, 2)
    confidence: np.ndarray  # (T, J)
    counters: np.ndarray  # (T,)
    layout: JointLayout
    fps: float = 25.0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        self.counters = np.asarray(self.counters, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[0] == 0:
            raise ValueError("a pose sequence needs at least one frame")
        t, j, _ = self.coords.shape
        if j != self.layout.n_joints:
            raise ValueError(f"sequence has {j} joints, layout has {self.layout.n_joints}")
        if self.confidence.shape != (t, j) or self.counters.shape != (t,):
            raise ValueError("confidence/counter shapes do not match coords")

    @classmethod
    def from_frames(cls, frames: Sequence[PoseFrame], layout: JointLayout, fps: float = 25.0) -> "PoseSequence":
        return cls(
            coords=np.stack([f.coords for f in frames]),
            confidence=np.stack([f.confidence for f in frames]),
            counters=np.array([f.counter for f in frames]),
            layout=layout,
            fps=fps,
        )

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __getitem__(self, t: int) -> PoseFrame:
        return PoseFrame(self.coords[t], self.confidence[t], float(self.counters[t]))

    def __iter__(self) -> Iterator[PoseFrame]:
        for t in range(len(self)):
            yield self[t]

    @property
    def frames(self) -> list[PoseFrame]:
        return list(self)

    def flat(self) -> np.ndarray:
        """(T, 2J) pose vectors as consumed by the text-to-pose model."""
        return self.coords.reshape(len(self), -1)


# ---------------------------------------------------------------------------
# OpenPose-style JSON
# ---------------------------------------------------------------------------


def serialize_pose_json(seq: PoseSequence, canvas: tuple[int, int] = (256, 256)) -> bytes:
    """Inverse of :func:`parse_pose_json`; ``canvas`` is (width, height)."""
    width, height = canvas
    scale = np.array([width, height], dtype=np.float64)
    frames = []
    for t in range(len(seq)):
        person = {}
        for key, a, b in seq.layout.json_groups:
            xy = seq.coords[t, a:b] * scale
            c = seq.confidence[t, a:b]
            xy = np.where(c[:, None] > 0, xy, 0.0)
            trip = np.concatenate([xy, c[:, None]], axis=1).reshape(-1)
            person[key] = [float(v) for v in trip]
        frames.append({"people": [person], "counter": float(seq.counters[t])})
    doc = {"canvas": {"width": int(width), "height": int(height)}, "fps": float(seq.fps), "frames": frames}
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def parse_pose_json(data: bytes | str, layout: JointLayout) -> PoseSequence:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise PoseFormatError(f"invalid UTF-8 at byte offset {e.start}") from e
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise PoseFormatError(f"malformed JSON at byte offset {offset}: {e.msg}") from e

    try:
        width = float(doc["canvas"]["width"])
        height = float(doc["canvas"]["height"])
        raw_frames = doc["frames"]
    except (KeyError, TypeError) as e:
        raise PoseFormatError(f"missing top-level field: {e}") from e
    if not raw_frames:
        raise PoseFormatError("pose file has no frames")

    n = len(raw_frames)
    coords = np.zeros((n, layout.n_joints, 2))
    conf = np.zeros((n, layout.n_joints))
    counters = np.empty(n)
    has_counter = True
    for t, fr in enumerate(raw_frames):
        people = fr.get("people") or []
        if not people:
            raise PoseFormatError(f"frame {t}: no person entry")
        person = people[0]
        for key, a, b in layout.json_groups:
            vals = person.get(key)
            if vals is None or len(vals) != 3 * (b - a):
                got = "missing" if vals is None else f"{len(vals) // 3} joints"
                raise PoseFormatError(f"frame {t}: {key} has {got}, layout expects {b - a}")
            trip = np.asarray(vals, dtype=np.float64).reshape(-1, 3)
            c = trip[:, 2]
            xy = np.stack([trip[:, 0] / width, trip[:, 1] / height], axis=1)
            coords[t, a:b] = np.where(c[:, None] > 0, xy, 0.0)
            conf[t, a:b] = c
        if "counter" in fr:
            counters[t] = float(fr["counter"])
        else:
            has_counter = False
    if not has_counter:
        counters = ground_truth_counters(n)
    return PoseSequence(coords, conf, counters, layout, fps=float(doc.get("fps", 25.0)))


def load_pose_file(path: str | Path, layout: JointLayout) -> PoseSequence:
    return parse_pose_json(Path(path).read_bytes(), layout)


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormParams:
    scale: float
    translation: tuple[float, float]

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be finite and positive, got {self.scale}")

    def inverse(self) -> "NormParams":
        tx, ty = self.translation
        return NormParams(1.0 / self.scale, (-tx / self.scale, -ty / self.scale))


def normalize_pose(seq: PoseSequence, params: NormParams) -> PoseSequence:
    """Apply p' = scale * p + translation to every joint."""
    coords = params.scale * seq.coords + np.asarray(params.translation, dtype=np.float64)
    if np.any(coords < -0.5) or np.any(coords > 1.5):
        warnings.warn("normalised pose leaves the [-0.5, 1.5] canvas band", OutOfFrameWarning, stacklevel=2)
    return PoseSequence(coords, seq.confidence.copy(), seq.counters.copy(), seq.layout, seq.fps)


def compute_norm_params(
    source: PoseSequence, target_shoulder_width: float, target_neck: tuple[float, float]
) -> NormParams:
    lay = source.layout
    rs, ls, neck = lay.index("r_shoulder"), lay.index("l_shoulder"), lay.index("neck")
    both = (source.confidence[:, rs] > 0) & (source.confidence[:, ls] > 0)
    if not both.any():
        raise InsufficientLandmarksError("no frame has both shoulders visible")
    widths = np.linalg.norm(source.coords[both, rs] - source.coords[both, ls], axis=1)
    width = float(np.median(widths))
    if width <= 0:
        raise InsufficientLandmarksError("shoulders coincide in every visible frame")
    neck_vis = source.confidence[:, neck] > 0
    if not neck_vis.any():
        raise InsufficientLandmarksError("neck never visible")
    neck_med = np.median(source.coords[neck_vis, neck], axis=0)
    scale = target_shoulder_width / width
    tx, ty = np.asarray(target_neck, dtype=np.float64) - scale * neck_med
    return NormParams(scale, (float(tx), float(ty)))


# ---------------------------------------------------------------------------
# Heat-maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineConfig:
    thickness: int = 1
    blur_sigma: float = 0.0


def to_pixels(coords: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Canvas (x, y) in [0, 1] -> integer (row, col), clamped first."""
    h, w = size
    c = np.clip(coords, 0.0, 1.0)
    rows = np.floor(c[..., 1] * (h - 1) + 0.5).astype(np.int64)
    cols = np.floor(c[..., 0] * (w - 1) + 0.5).astype(np.int64)
    return np.stack([rows, cols], axis=-1)


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def _apply_line_config(maps: np.ndarray, cfg: LineConfig) -> np.ndarray:
    if cfg.thickness > 1:
        fp = _disk(cfg.thickness // 2)
        for k in range(maps.shape[0]):
            if maps[k].any():
                maps[k] = ndimage.grey_dilation(maps[k], footprint=fp)
    if cfg.blur_sigma > 0:
        support = 3.0 * cfg.blur_sigma
        for k in range(maps.shape[0]):
            if maps[k].any():
                d = ndimage.distance_transform_edt(maps[k] < 1.0)
                fall = np.exp(-(d**2) / (2.0 * cfg.blur_sigma**2))
                fall[d > support] = 0.0
                maps[k] = np.maximum(maps[k], fall)
    return maps


def rasterize_heatmap(
    frame: PoseFrame,
    layout: JointLayout,
    size: tuple[int, int] = (64, 64),
    line_config: LineConfig | None = None,
) -> np.ndarray:
    """Per-limb channels (L, H, W): value 1 on the limb's line segment."""
    h, w = size
    if h < 8 or w < 8:
        raise ValueError("heat-map size must be at least 8x8")
    maps = np.zeros((layout.n_limbs, h, w), dtype=np.float32)
    pix = to_pixels(frame.coords, size)
    _kernels.draw_limb_lines(maps, pix, frame.confidence > 0, layout.limb_array())
    if line_config is not None and line_config != LineConfig():
        maps = _apply_line_config(maps, line_config)
    return maps


def rasterize_batch(
    coords: np.ndarray, confidence: np.ndarray, layout: JointLayout, size: tuple[int, int] = (64, 64)
) -> np.ndarray:
    """Thickness-1 heat-maps for a stack of frames: (B, J, 2) -> (B, L, H, W)."""
    b = coords.shape[0]
    out = np.zeros((b, layout.n_limbs, size[0], size[1]), dtype=np.float32)
    limbs = layout.limb_array()
    pix = to_pixels(coords, size)
    for i in range(b):
        _kernels.draw_limb_lines(out[i], pix[i], confidence[i] > 0, limbs)
    return out


def dump_heatmaps(maps_seq: Sequence[np.ndarray], out_dir: str | Path) -> list[Path]:
    """Write one grayscale PNG per channel: frame{t:05d}_limb{c:02d}.png."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, maps in enumerate(maps_seq):
        for c, ch in enumerate(maps):
            p = out_dir / f"frame{t:05d}_limb{c:02d}.png"
            Image.fromarray(np.round(np.clip(ch, 0, 1) * 255).astype(np.uint8), mode="L").save(p)
            paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Hands
# ---------------------------------------------------------------------------


@dataclass
class HandCrop:
    patch: np.ndarray  # (3, 60, 60), Frame convention
    side: str
    source_frame_index: int
    anchor: tuple[int, int]  # (row, col) of the middle knuckle in the source image

    def __post_init__(self):
        if self.patch.shape[-2:] != (HAND_PATCH, HAND_PATCH):
            raise ValueError(f"hand patch must be {HAND_PATCH}x{HAND_PATCH}, got {self.patch.shape}")


def hand_anchor(frame: PoseFrame, layout: JointLayout, side: str, size: tuple[int, int]) -> tuple[int, int]:
    idx = layout.anchor(side)
    if frame.confidence[idx] <= 0:
        raise NoHandError(f"{side} middle knuckle not visible")
    r, c = to_pixels(frame.coords[idx], size)
    return int(r), int(c)


def crop_patch(image: np.ndarray, anchor: tuple[int, int], background, size: int = HAND_PATCH) -> np.ndarray:
    """size x size window with rows anchor-size//2 .. anchor+size//2-1, padded with ``background``."""
    ch, h, w = image.shape
    half = size // 2
    r0, c0 = anchor[0] - half, anchor[1] - half
    out = np.empty((ch, size, size), dtype=image.dtype)
    out[:] = np.asarray(background, dtype=image.dtype).reshape(ch, 1, 1)
    sr0, sr1 = max(r0, 0), min(r0 + size, h)
    sc0, sc1 = max(c0, 0), min(c0 + size, w)
    if sr0 < sr1 and sc0 < sc1:
        out[:, sr0 - r0 : sr1 - r0, sc0 - c0 : sc1 - c0] = image[:, sr0:sr1, sc0:sc1]
    return out


def crop_hand(
    image: np.ndarray,
    frame: PoseFrame,
    side: str,
    layout: JointLayout,
    background=(0.0, 0.0, 0.0),
    frame_index: int = 0,
) -> HandCrop:
    """60x60 patch of a (3, H, W) image centred on the side's middle knuckle."""
    anchor = hand_anchor(frame, layout, side, image.shape[-2:])
    return HandCrop(crop_patch(image, anchor, background), side, frame_index, anchor)


def blur_score(patch: np.ndarray, window: int | None = None) -> float:
    """Variance of the Laplacian of the grayscale patch, in 8-bit gray levels.

    ``window`` restricts the score to the central window x window pixels,
    where the hand sits in an anchor-centred crop.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if window is not None:
        h, w = patch.shape[-2:]
        r0, c0 = (h - window) // 2, (w - window) // 2
        patch = patch[..., r0 : r0 + window, c0 : c0 + window]
    gray = (patch.mean(axis=0) + 1.0) * 127.5
    return _kernels.laplacian_variance(gray)


@dataclass
class GoodHandSet:
    keypoints: list[np.ndarray] = field(default_factory=list)  # each (21, 2)
    sources: list[tuple[int, str]] = field(default_factory=list)
    blur_scores: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.keypoints)

    def as_array(self) -> np.ndarray:
        if not self.keypoints:
            return np.zeros((0, HAND_JOINTS, 2), dtype=np.float32)
        return np.stack(self.keypoints).astype(np.float32)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        arr = self.as_array()
        return arr[rng.integers(0, len(arr), size=n)]


def select_good_hands(
    crops: Sequence[HandCrop],
    extractor: Callable[[np.ndarray], np.ndarray],
    blur_threshold: float,
    window: int | None = None,
) -> GoodHandSet:
    """Keep sharp crops whose extracted keypoints all lie inside the patch."""
    good = GoodHandSet()
    for crop in crops:
        score = blur_score(crop.patch, window)
        if score < blur_threshold:
            continue
        kp = np.asarray(extractor(crop.patch), dtype=np.float64)
        if np.any(kp < 0.0) or np.any(kp > 1.0):
            continue
        good.keypoints.append(kp)
        good.sources.append((crop.source_frame_index, crop.side))
        good.blur_scores.append(score)
    if not good.keypoints:
        warnings.warn(
            "no hand crop passed the good-hands filter; the keypoint loss will use per-batch real hands",
            EmptyGoodHandSetWarning,
            stacklevel=2,
        )
    return good
