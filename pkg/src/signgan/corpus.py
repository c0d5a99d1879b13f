"""Read-side access to a corpus directory written by :func:`synthdata.generate_corpus`."""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import numpy as np

from .pose import JointLayout, PoseSequence, default_layout, load_pose_file
from .synthdata import StyleSpec, color_to_unit, to_frame


class Corpus:
    def __init__(self, root: str | Path, layout: JointLayout | None = None):
        self.root = Path(root)
        manifest = self.root / "manifest.jsonl"
        if not manifest.exists():
            raise FileNotFoundError(f"no corpus manifest at {manifest}")
        self.layout = layout or default_layout()
        self.records = [json.loads(line) for line in manifest.read_text().splitlines() if line.strip()]
        self.by_id = {r["id"]: r for r in self.records}
        self.vocab = (self.root / "vocab.txt").read_text().split()
        doc = json.loads((self.root / "styles" / "styles.json").read_text())
        self.n_styles = int(doc["n_seen"])
        self.styles = [
            StyleSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in s.items() if k != "seen"})
            for s in doc["styles"]
        ]
        info = json.loads((self.root / "corpus.json").read_text())
        self.config = info["config"]
        self.resolution = int(self.config["resolution"])
        self._pose = lru_cache(maxsize=None)(self._load_pose)
        self._frames = lru_cache(maxsize=64)(self._load_frames)
        self._hands = lru_cache(maxsize=None)(self._load_hands)

    @property
    def size(self) -> tuple[int, int]:
        return (self.resolution, self.resolution)

    @property
    def background(self) -> np.ndarray:
        return color_to_unit(self.styles[0].background_color)

    def split(self, name: str) -> list[dict]:
        return [r for r in self.records if r["split"] == name]

    def pose(self, seq_id: str) -> PoseSequence:
        return self._pose(seq_id)

    def _load_pose(self, seq_id: str) -> PoseSequence:
        return load_pose_file(self.root / self.by_id[seq_id]["pose_file"], self.layout)

    def frame_path(self, seq_id: str, style: int, t: int) -> Path:
        return self.root / "frames" / seq_id / f"style{style}" / f"frame{t:05d}.png"

    def frames_rgb(self, seq_id: str, style: int) -> np.ndarray:
        """uint8 (T, H, W, 3)."""
        return self._frames(seq_id, style)

    def _load_frames(self, seq_id: str, style: int) -> np.ndarray:
        from PIL import Image

        n = self.by_id[seq_id]["n_frames"]
        out = []
        for t in range(n):
            p = self.frame_path(seq_id, style, t)
            if not p.exists():
                raise FileNotFoundError(f"missing frame {p}")
            out.append(np.asarray(Image.open(p).convert("RGB")))
        return np.stack(out)

    def frame(self, seq_id: str, style: int, t: int) -> np.ndarray:
        return to_frame(self.frames_rgb(seq_id, style)[t])

    def style_image(self, style: int) -> np.ndarray:
        from PIL import Image

        return to_frame(np.asarray(Image.open(self.root / "styles" / f"style{style}.png").convert("RGB")))

    def hands(self, seq_id: str) -> dict:
        return self._hands(seq_id)

    def _load_hands(self, seq_id: str) -> dict:
        return json.loads((self.root / "hands" / seq_id / "keypoints.json").read_text())

    def pairs(self, split: str) -> list[tuple[list[int], PoseSequence]]:
        return [(r["text_tokens"], self.pose(r["id"])) for r in self.split(split)]
