"""Command line: make-data, train, generate, evaluate.

Exit codes: 0 on success, 2 on precondition or configuration errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .metrics import MetricReport, evaluate_frames
from .pose import load_pose_file, serialize_pose_json
from .pose2video import PreconditionError, frame_to_uint8, generate_video, load_generator, load_handnet
from .runs import STAGES, ConfigError, RunConfig, latest_checkpoint, load_text2pose, require_checkpoint, run_stage
from .synthdata import CorpusError, generate_corpus, to_frame
from .text2pose import CapacityError, produce_sequence

log = logging.getLogger("signgan")


def _save_png(img: np.ndarray, path: Path) -> None:
    from PIL import Image

    Image.fromarray(img).save(path, format="PNG", optimize=False, compress_level=6)


def _load_png(path: Path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"))


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    run_cfg = Path(getattr(args, "run", "") or "") / "config.txt"
    if not args.config and getattr(args, "run", None) and run_cfg.exists():
        cfg = RunConfig.load(run_cfg)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "corpus", None):
        cfg.set("corpus", args.corpus)
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_data(args) -> int:
    cfg = resolve_config(args)
    for flag, key in (("styles", "data.n_styles"), ("sequences", "data.n_sequences"), ("vocab", "data.vocab_size"),
                      ("resolution", "data.resolution")):
        if getattr(args, flag) is not None:
            cfg.set(key, getattr(args, flag))
    out = Path(args.out or cfg["corpus"])
    ccfg = cfg.corpus_config()
    if ccfg.n_styles < 2:
        raise PreconditionError("controllable generation needs at least 2 styles (--styles >= 2)")
    summary = generate_corpus(ccfg, out)
    print(f"corpus written to {out}")
    for split, n in summary["counts"].items():
        print(f"  {split:5s} {n:4d} sequences {summary['n_frames'][split]:6d} frames per style")
    print(f"  styles {summary['styles']} seen + {ccfg.n_unseen_styles} unseen")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if args.out:
        cfg.set("run_dir", args.out)
    if args.no_key_loss:
        cfg.set("p2v.hand_loss", "none")
    path = run_stage(cfg, args.stage, args.max_steps)
    print(f"{args.stage} checkpoint: {path}")
    return 0


def _style_input(args, cfg: RunConfig, meta: dict) -> tuple[np.ndarray, str]:
    if args.style_image:
        img = _load_png(Path(args.style_image))
        return to_frame(img), str(args.style_image)
    valid = list(range(int(meta["N_S"])))
    if args.style_id not in valid:
        raise PreconditionError(f"unknown style id {args.style_id}; valid ids are {valid}")
    return Corpus(cfg["corpus"]).style_image(args.style_id), f"style{args.style_id}"


def _parse_text(text: str, vocab: list[str]) -> list[int]:
    out = []
    for tok in text.split():
        if tok.lstrip("-").isdigit():
            out.append(int(tok))
        elif tok in vocab:
            out.append(vocab.index(tok))
        else:
            raise PreconditionError(f"unknown token {tok!r}")
    return out


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    run = Path(args.run or cfg["run_dir"])
    gen, meta = load_generator(require_checkpoint(run, "pose2video", "generate"))
    out = Path(args.out or run / "generated")
    if args.split:
        return _generate_split(args, cfg, gen, meta, out)
    if bool(args.text) == bool(args.pose):
        raise PreconditionError("give exactly one of --text or --pose")
    style, style_name = _style_input(args, cfg, meta)
    corpus = Corpus(cfg["corpus"])
    if args.text:
        model = load_text2pose(require_checkpoint(run, "text2pose", "generate --text"))
        tokens = _parse_text(args.text, corpus.vocab)
        max_len = args.max_len or model.config.max_target_length
        rng = np.random.default_rng([cfg["seed"], 17])
        poses = produce_sequence(model, tokens, max_len, args.temperature, rng=rng, layout=corpus.layout)
        source = {"text": tokens, "max_len": max_len, "temperature": args.temperature,
                  "terminated": bool(len(poses) < max_len or poses.counters[-1] >= 0.99)}
    else:
        poses = load_pose_file(args.pose, corpus.layout)
        source = {"pose": str(args.pose)}
    frames = generate_video(gen, poses, style, corpus.layout)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for t, f in enumerate(frames):
        name = f"frame{t:05d}.png"
        _save_png(frame_to_uint8(f), out / name)
        names.append(name)
    (out / "pose.json").write_bytes(serialize_pose_json(poses, corpus.size))
    manifest = {"frames": names, "n_frames": len(names), "style": style_name, "seed": cfg["seed"], "source": source}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(names)} frames to {out}")
    return 0


def _eval_styles(cfg: RunConfig, corpus: Corpus) -> list[int]:
    spec = str(cfg["eval.styles"]).strip()
    return [int(s) for s in spec.split(",")] if spec else list(range(corpus.n_styles))


def _generate_split(args, cfg, gen, meta, out: Path) -> int:
    corpus = Corpus(cfg["corpus"])
    styles = _eval_styles(cfg, corpus)
    n = 0
    for rec in corpus.split(args.split):
        poses = corpus.pose(rec["id"])
        for m in styles:
            frames = generate_video(gen, poses, corpus.style_image(m), corpus.layout)
            d = out / args.split / rec["id"] / f"style{m}"
            d.mkdir(parents=True, exist_ok=True)
            for t, f in enumerate(frames):
                _save_png(frame_to_uint8(f), d / f"frame{t:05d}.png")
            n += len(frames)
    manifest = {"split": args.split, "styles": styles, "n_frames": n, "seed": cfg["seed"]}
    (out / args.split / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {n} frames under {out / args.split}")
    return 0


def evaluate_run(cfg: RunConfig, run: Path, split: str, frames_root: Path) -> MetricReport:
    corpus = Corpus(cfg["corpus"])
    styles = _eval_styles(cfg, corpus)
    hpath = latest_checkpoint(run, "handnet")
    h = load_handnet(hpath) if hpath is not None else None
    produced, target, poses, ids = [], [], [], []
    for rec in corpus.split(split):
        seq = corpus.pose(rec["id"])
        for m in styles:
            gt = corpus.frames_rgb(rec["id"], m)
            for t in range(rec["n_frames"]):
                p = frames_root / rec["id"] / f"style{m}" / f"frame{t:05d}.png"
                if not p.exists():
                    raise PreconditionError(f"missing generated frame {p}")
                produced.append(to_frame(_load_png(p)))
                target.append(to_frame(gt[t]))
                poses.append(seq[t])
                ids.append(f"{rec['id']}/style{m}")
    if not produced:
        raise PreconditionError(f"split {split!r} has no sequences")
    report = evaluate_frames(produced, target, poses, h, corpus.layout, corpus.background, sequence_ids=ids)
    report.meta.update({"split": split, "styles": styles, "frames_root": str(frames_root)})
    return report


def _table(rows: list[tuple[str, dict]]) -> str:
    keys = ["ssim", "hand_ssim", "hand_pose", "fid"]
    lines = ["run".ljust(24) + "".join(k.rjust(12) for k in keys)]
    for name, summ in rows:
        cells = "".join((f"{summ[k]:12.4f}" if summ.get(k) is not None else "-".rjust(12)) for k in keys)
        lines.append(name[-24:].ljust(24) + cells)
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    run = Path(args.run or cfg["run_dir"])
    frames_root = Path(args.frames_root) if args.frames_root else run / "generated" / args.split
    report = evaluate_run(cfg, run, args.split, frames_root)
    out = run / f"eval_{args.split}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    rows = [(str(run), report.summary())]
    if args.compare:
        other = Path(args.compare) / f"eval_{args.split}" / "report.json"
        if not other.exists():
            raise PreconditionError(f"no report to compare at {other}; evaluate that run first")
        doc = json.loads(other.read_text())
        rows.append((str(args.compare), {k: doc.get(k) for k in ("ssim", "hand_ssim", "hand_pose", "fid")}))
    print(_table(rows))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--corpus", help="corpus directory (overrides the config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="signgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("make-data", parents=[common], help="write the synthetic corpus")
    m.add_argument("--styles", type=int)
    m.add_argument("--sequences", type=int)
    m.add_argument("--vocab", type=int)
    m.add_argument("--resolution", type=int)
    m.set_defaults(func=cmd_make_data)

    t = sub.add_parser("train", parents=[common], help="train one stage")
    t.add_argument("--stage", required=True, choices=STAGES)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--no-key-loss", action="store_true", help="pose2video without a hand loss")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", parents=[common], help="render frames from text or poses")
    g.add_argument("--run", help="run directory holding the checkpoints")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--text", help="token ids or vocabulary words, space separated")
    src.add_argument("--pose", help="pose JSON file")
    src.add_argument("--split", help="render every sequence of a corpus split from its ground-truth poses")
    sty = g.add_mutually_exclusive_group()
    sty.add_argument("--style-id", type=int, default=0)
    sty.add_argument("--style-image", help="PNG style reference")
    g.add_argument("--max-len", type=int)
    g.add_argument("--temperature", type=float, default=1.0)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", parents=[common], help="score generated frames against ground truth")
    e.add_argument("--run", help="run directory")
    e.add_argument("--split", default="test")
    e.add_argument("--frames-root", help="directory laid out as <id>/style<m>/frameXXXXX.png")
    e.add_argument("--compare", help="second run directory for a comparison table")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (PreconditionError, ConfigError, CapacityError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CorpusError, Exception) as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
