"""Run configuration and the per-stage drivers shared by the command line and the test suite.

A run directory holds one sub-directory per stage::

    run/config.txt                resolved configuration
    run/<stage>/inputs.json       content hashes of everything the stage read
    run/<stage>/ckpt_XXXXXX.sgck  checkpoints, the highest step is the latest
    run/<stage>/log.csv           training log
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import fields
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus
from .networks import FeatureNet, HandKeypointNet
from .pipeline import corpus_dataset, hand_samples
from .pose import blur_score
from .pose2video import (
    FeatureNetConfig,
    HandNetConfig,
    Pose2VideoConfig,
    Pose2VideoTrainer,
    PreconditionError,
    build_good_hands,
    build_models,
    load_handnet,
    pretrain_feature_net,
    save_handnet,
    save_pose2video,
    train_handnet,
    uint8_to_unit,
    write_log_csv,
)
from .synthdata import CorpusConfig
from .text2pose import Text2PoseConfig, Text2PoseModel, Text2PoseTrainConfig, checkpoint_meta, train_text2pose

log = logging.getLogger(__name__)

STAGES = ("handnet", "text2pose", "pose2video")


class ConfigError(ValueError):
    pass


def _section(prefix: str, cls, skip=()) -> dict:
    return {f"{prefix}.{f.name}": f.default for f in fields(cls) if f.name not in skip}


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "corpus": "corpus",
    "run_dir": "run",
    "checkpoint_every": 500,
    **_section("data", CorpusConfig, skip=("seed",)),
    **_section("t2p", Text2PoseConfig, skip=("vocab_size", "pose_dim")),
    **_section("t2p_train", Text2PoseTrainConfig, skip=("seed",)),
    **_section("p2v", Pose2VideoConfig, skip=("seed", "resolution")),
    **_section("hand", HandNetConfig, skip=("seed",)),
    "hand.stride": 3,
    **_section("feat", FeatureNetConfig, skip=("seed",)),
    "feat.n_frames": 2000,
    "good.stride": 6,
    "good.window": 16,
    "good.quantile": 0.25,
    "eval.styles": "",
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None
    return raw


class RunConfig:
    """Flat key=value configuration; unknown keys are rejected."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value) if isinstance(value, str) else value

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            cfg.set(k.strip(), v)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def dump(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in sorted(self.values))

    def section(self, prefix: str) -> dict:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(seed=self["seed"], **self.section("data"))

    def text2pose(self, corpus: Corpus) -> tuple[Text2PoseConfig, Text2PoseTrainConfig]:
        model = Text2PoseConfig(vocab_size=len(corpus.vocab), pose_dim=2 * corpus.layout.n_joints, **self.section("t2p"))
        return model, Text2PoseTrainConfig(seed=self["seed"], **self.section("t2p_train"))

    def pose2video(self, corpus: Corpus) -> Pose2VideoConfig:
        return Pose2VideoConfig(seed=self["seed"], resolution=corpus.resolution, **self.section("p2v"))

    def handnet(self) -> HandNetConfig:
        sec = self.section("hand")
        sec.pop("stride")
        return HandNetConfig(seed=self["seed"], **sec)

    def feature_net(self) -> FeatureNetConfig:
        sec = self.section("feat")
        sec.pop("n_frames")
        return FeatureNetConfig(seed=self["seed"], **sec)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# run directory bookkeeping
# ---------------------------------------------------------------------------


def git_hash(data: bytes) -> str:
    """Content hash in git's blob format."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def corpus_hash(corpus: Corpus) -> str:
    return git_hash((corpus.root / "manifest.jsonl").read_bytes() + (corpus.root / "corpus.json").read_bytes())


def stage_dir(run_dir: str | Path, stage: str) -> Path:
    return Path(run_dir) / stage


def checkpoint_path(run_dir, stage: str, step: int) -> Path:
    return stage_dir(run_dir, stage) / f"ckpt_{step:06d}.sgck"


def latest_checkpoint(run_dir, stage: str) -> Path | None:
    d = stage_dir(run_dir, stage)
    found = sorted(d.glob("ckpt_*.sgck")) if d.exists() else []
    return found[-1] if found else None


def require_checkpoint(run_dir, stage: str, needed_by: str) -> Path:
    path = latest_checkpoint(run_dir, stage)
    if path is None:
        raise PreconditionError(
            f"{needed_by} needs a {stage} checkpoint in {stage_dir(run_dir, stage)}; run `signgan train --stage {stage}` first"
        )
    return path


def _prepare(cfg: RunConfig, stage: str, inputs: dict) -> Path:
    run = Path(cfg["run_dir"])
    d = stage_dir(run, stage)
    d.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(cfg.dump())
    doc = {"config": git_hash(cfg.dump().encode()), **inputs}
    (d / "inputs.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return d


def _rows_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _file_hash(path: Path) -> str:
    return git_hash(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def run_handnet(cfg: RunConfig, max_steps: int | None = None) -> Path:
    """Train the hand keypoint network on sharp train-split crops of every seen style."""
    corpus = Corpus(cfg["corpus"])
    hcfg = cfg.handnet()
    if max_steps is not None:
        hcfg.steps = min(hcfg.steps, max_steps)
    d = _prepare(cfg, "handnet", {"corpus": corpus_hash(corpus)})
    final = checkpoint_path(cfg["run_dir"], "handnet", hcfg.steps)
    if final.exists():
        log.info("handnet already trained: %s", final)
        return final
    crops, kps, _, _ = hand_samples(corpus, "train", range(corpus.n_styles), cfg["hand.stride"], skip_blurred=True)
    net, curve = train_handnet(crops, kps, hcfg)
    del crops
    save_handnet(final, net, hcfg, {"step": hcfg.steps})
    _rows_csv([{"step": i, "loss": v} for i, v in enumerate(curve)], ["step", "loss"], d / "log.csv")
    return final


def run_text2pose(cfg: RunConfig, max_steps: int | None = None) -> Path:
    corpus = Corpus(cfg["corpus"])
    mcfg, tcfg = cfg.text2pose(corpus)
    steps = tcfg.steps if max_steps is None else min(tcfg.steps, max_steps)
    d = _prepare(cfg, "text2pose", {"corpus": corpus_hash(corpus)})
    torch.manual_seed(cfg["seed"])
    model = Text2PoseModel(mcfg)
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr)
    rows: list[dict] = []
    start = 0
    latest = latest_checkpoint(cfg["run_dir"], "text2pose")
    if latest is not None:
        meta, state = load_checkpoint(latest)
        model.load_state_dict(state["model"])
        opt.load_state_dict(state["opt"])
        start = int(meta["step"])
        rows = _read_rows(d / "log.csv", start)

    def save(step, m, o):
        save_checkpoint(checkpoint_path(cfg["run_dir"], "text2pose", step), dict(checkpoint_meta(m, cfg["seed"]), step=step),
                        {"model": m.state_dict(), "opt": o.state_dict()})

    if start == 0 and latest is None:
        save(0, model, opt)
    if start < steps:
        tcfg.steps = steps
        report = train_text2pose(model, corpus.pairs("train"), tcfg, opt, start, save, cfg["checkpoint_every"])
        rows += [dict(zip(("step", "loss", "nll", "counter"), r)) for r in zip(*report.values())]
        if not checkpoint_path(cfg["run_dir"], "text2pose", steps).exists():
            save(steps, model, opt)
    _rows_csv(rows, ["step", "loss", "nll", "counter"], d / "log.csv")
    return checkpoint_path(cfg["run_dir"], "text2pose", max(start, steps))


def _read_rows(path: Path, below: int) -> list[dict]:
    if not path.exists():
        return []
    with open(path) as fh:
        out = []
        for r in csv.DictReader(fh):
            if int(r["step"]) < below:
                out.append({k: (int(v) if k == "step" else float(v)) for k, v in r.items()})
        return out


def load_text2pose(path) -> Text2PoseModel:
    meta, state = load_checkpoint(path)
    if meta.get("kind") != "text2pose":
        raise ValueError(f"{path} is not a text2pose checkpoint")
    model = Text2PoseModel(Text2PoseConfig(**meta["config"]))
    model.load_state_dict(state["model"])
    return model.eval()


def calibrate_blur_threshold(scores: np.ndarray, blurred: np.ndarray, quantile: float) -> float:
    """``quantile`` of the sharp crops' scores; falls back to all crops when none are flagged sharp."""
    ref = scores[~blurred] if np.any(~blurred) else scores
    return float(np.quantile(ref, quantile))


def good_hand_keypoints(cfg: RunConfig, corpus: Corpus, handnet: HandKeypointNet) -> tuple[np.ndarray, dict]:
    crops, _, blurred, meta = hand_samples(corpus, "train", range(corpus.n_styles), cfg["good.stride"])
    del crops
    window = cfg["good.window"] or None
    scores = np.array([blur_score(c.patch, window) for c in meta])
    threshold = calibrate_blur_threshold(scores, blurred, cfg["good.quantile"])
    good = build_good_hands(handnet, meta, threshold, window)
    info = {"threshold": threshold, "candidates": len(meta), "kept": len(good)}
    return good.as_array(), info


def _feature_frames(cfg: RunConfig, corpus: Corpus) -> np.ndarray:
    data = corpus_dataset(corpus, "train")
    rng = np.random.default_rng([cfg["seed"], 4242])
    n = cfg["feat.n_frames"]
    out = []
    for _ in range(n):
        ci = int(rng.integers(len(data.clips)))
        clip = data.clips[ci]
        out.append(uint8_to_unit(clip.rgb()[int(rng.integers(len(clip.poses)))]))
    return np.stack(out)


def run_pose2video(cfg: RunConfig, max_steps: int | None = None) -> Path:
    corpus = Corpus(cfg["corpus"])
    pcfg = cfg.pose2video(corpus)
    steps = pcfg.steps if max_steps is None else min(pcfg.steps, max_steps)
    needs_h = pcfg.hand_loss == "keypoint" and pcfg.lambda_Key > 0
    inputs = {"corpus": corpus_hash(corpus)}
    handnet = None
    if needs_h:
        hpath = require_checkpoint(cfg["run_dir"], "handnet", "pose2video with the keypoint hand loss")
        handnet = load_handnet(hpath)
        inputs["handnet"] = _file_hash(hpath)
    d = _prepare(cfg, "pose2video", inputs)

    latest = latest_checkpoint(cfg["run_dir"], "pose2video")
    state = None
    if latest is not None:
        meta, state = load_checkpoint(latest)
        fcfg = meta["feat"]
        feat = FeatureNet(fcfg["width"], fcfg["n_layers"], fcfg["include_input"])
        feat.load_state_dict(state["models"]["feat"])
    else:
        feat, _ = pretrain_feature_net(_feature_frames(cfg, corpus), cfg.feature_net())
    good, good_info = None, {}
    if needs_h and pcfg.good_hands:
        good, good_info = good_hand_keypoints(cfg, corpus, handnet)
    models = build_models(pcfg, corpus.layout.n_limbs, handnet, feat, corpus.n_styles)
    data = corpus_dataset(corpus, "train")
    trainer = Pose2VideoTrainer(models, data, pcfg, corpus.background, good)
    rows: list[dict] = []
    if state is not None:
        trainer.load_state(state)
        rows = _read_rows(d / "log.csv", trainer.step_index)
    extra = {"good_hands": good_info}

    def save(tr):
        save_pose2video(checkpoint_path(cfg["run_dir"], "pose2video", tr.step_index), tr, corpus.n_styles,
                        dict(extra, step=tr.step_index))

    if state is None:
        save(trainer)
    if trainer.step_index < steps:
        rows += trainer.train(steps, save, cfg["checkpoint_every"])
        if not checkpoint_path(cfg["run_dir"], "pose2video", trainer.step_index).exists():
            save(trainer)
    write_log_csv(rows, d / "log.csv")
    return checkpoint_path(cfg["run_dir"], "pose2video", trainer.step_index)


def run_stage(cfg: RunConfig, stage: str, max_steps: int | None = None) -> Path:
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    return {"handnet": run_handnet, "text2pose": run_text2pose, "pose2video": run_pose2video}[stage](cfg, max_steps)

