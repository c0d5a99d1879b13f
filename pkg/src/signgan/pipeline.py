"""Glue between an on-disk corpus and the training / evaluation entry points."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import Corpus
from .pose import HAND_PATCH, HandCrop, PoseFrame, crop_patch
from .pose2video import SIDES, Clip, ClipDataset, uint8_to_unit
from .synthdata import hand_keypoints_in_patch, render_signer_rgb, style_image


def style_images(corpus: Corpus, ids: Sequence[int] | None = None) -> np.ndarray:
    ids = range(corpus.n_styles) if ids is None else ids
    return np.stack([corpus.style_image(m) for m in ids]).astype(np.float32)


def corpus_clips(corpus: Corpus, split: str, styles: Sequence[int] | None = None) -> list[Clip]:
    styles = range(corpus.n_styles) if styles is None else styles
    clips = []
    for rec in corpus.split(split):
        for m in styles:
            clips.append(Clip(corpus.pose(rec["id"]), _loader(corpus, rec["id"], m), m))
    return clips


def _loader(corpus, seq_id, style):
    return lambda: corpus.frames_rgb(seq_id, style)


def corpus_dataset(corpus: Corpus, split: str = "train", styles: Sequence[int] | None = None, **kw) -> ClipDataset:
    return ClipDataset(corpus_clips(corpus, split, styles), style_images(corpus), corpus.layout, **kw)


def hand_samples(corpus: Corpus, split: str, styles: Sequence[int], stride: int = 1, skip_blurred: bool = False):
    """Crops, labels and blur flags for every visible hand of ``split``.

    Returns (crops (N, 3, 60, 60) float32, keypoints (N, 21, 2), blurred (N,), HandCrop list).
    The HandCrop patches are views into ``crops``.
    """
    recs = corpus.split(split)
    labels = {r["id"]: corpus.hands(r["id"])["frames"] for r in recs}
    index = [(r["id"], m, t, side) for r in recs for m in styles for t in range(0, r["n_frames"], stride)
             for side in SIDES if not (skip_blurred and labels[r["id"]][t]["blurred"])]
    crops = np.empty((len(index), 3, HAND_PATCH, HAND_PATCH), np.float32)
    kps = np.empty((len(index), 21, 2))
    blurred = np.empty(len(index), bool)
    bg = corpus.background
    for i, (seq_id, m, t, side) in enumerate(index):
        lab = labels[seq_id][t]
        crops[i] = crop_patch(uint8_to_unit(corpus.frames_rgb(seq_id, m)[t]), tuple(lab[side]["anchor"]), bg)
        kps[i] = lab[side]["keypoints"]
        blurred[i] = lab["blurred"]
    meta = [HandCrop(crops[i], side, t, tuple(labels[seq_id][t][side]["anchor"]))
            for i, (seq_id, m, t, side) in enumerate(index)]
    return crops, kps, blurred, meta


def render_examples(corpus: Corpus, style_id: int, frames: Sequence[PoseFrame]) -> np.ndarray:
    """uint8 renders of ``frames`` in any corpus style (including unseen ones)."""
    st = corpus.styles[style_id]
    return np.stack([render_signer_rgb(f, st, corpus.size, corpus.layout) for f in frames])


def unseen_style_image(corpus: Corpus, style_id: int) -> np.ndarray:
    return style_image(corpus.styles[style_id], corpus.size, corpus.layout)


def gt_keypoints(frame: PoseFrame, corpus: Corpus, side: str):
    return hand_keypoints_in_patch(frame, corpus.layout, side, corpus.size)
