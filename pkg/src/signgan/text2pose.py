"""Token sequence -> continuous pose sequence.

A small encoder-decoder transformer whose decoder emits, for every frame,
the parameters of an isotropic (or diagonal) Gaussian mixture over the
flattened pose vector, plus a separate progress-counter regression head.
Sequences are sampled autoregressively until the counter crosses a
threshold.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .pose import JointLayout, PoseSequence, default_layout

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class CapacityError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, msg, last_good_state=None, step=None):
        super().__init__(msg)
        self.last_good_state = last_good_state
        self.step = step


# ---------------------------------------------------------------------------
# mixture maths
# ---------------------------------------------------------------------------


@dataclass
class MixtureParams:
    """One frame's mixture: weights (M,), means (M, D), scales (M,) or (M, D)."""

    alphas: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        m = self.alphas.shape[0]
        if self.means.ndim != 2 or self.means.shape[0] != m:
            raise ValueError("means must be (M, D)")
        if self.sigmas.shape not in ((m,), self.means.shape):
            raise ValueError("sigmas must be (M,) or (M, D)")

    @property
    def n_components(self) -> int:
        return self.alphas.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self, sigma_floor: float = 0.0, atol: float = 1e-6) -> None:
        if np.any(self.alphas < 0) or abs(self.alphas.sum() - 1.0) > atol:
            raise ValueError("mixture weights are not on the simplex")
        if np.any(self.sigmas <= 0) or np.any(self.sigmas < sigma_floor):
            raise ValueError("mixture scales below the floor")


def _component_log_pdf(means, sigmas, pose):
    """log N(pose; mu_i, diag(sigma_i^2)) per component, float64 numpy."""
    d = means.shape[-1]
    diff2 = (pose[None, :] - means) ** 2
    if sigmas.ndim == 1:
        return -0.5 * d * LOG_2PI - d * np.log(sigmas) - diff2.sum(axis=1) / (2.0 * sigmas**2)
    return -0.5 * d * LOG_2PI - np.log(sigmas).sum(axis=1) - (diff2 / (2.0 * sigmas**2)).sum(axis=1)


def mdn_log_density(params: MixtureParams, pose) -> float:
    pose = np.asarray(pose, dtype=np.float64)
    if not (np.all(np.isfinite(pose)) and np.all(np.isfinite(params.means)) and np.all(np.isfinite(params.sigmas))
            and np.all(np.isfinite(params.alphas))):
        raise FloatingPointError("non-finite input to mixture density")
    with np.errstate(divide="ignore"):
        terms = np.log(params.alphas) + _component_log_pdf(params.means, params.sigmas, pose)
    top = terms.max()
    if not np.isfinite(top):
        return -math.inf
    return float(top + np.log(np.exp(terms - top).sum()))


def mdn_density(params: MixtureParams, pose) -> float:
    """Mixture density sum_i alpha_i N(pose; mu_i, sigma_i^2 I)."""
    return math.exp(mdn_log_density(params, pose))


def mixture_log_likelihood(logits_or_alphas, means, sigmas, targets, alphas_are_logits=True):
    """Per-position log p(target) for batched torch mixture parameters.

    Shapes: weights (..., M), means (..., M, D), sigmas (..., M) or (..., M, D),
    targets (..., D).
    """
    if alphas_are_logits:
        log_alpha = F.log_softmax(logits_or_alphas, dim=-1)
    else:
        log_alpha = torch.log(logits_or_alphas)
    d = means.shape[-1]
    diff2 = (targets.unsqueeze(-2) - means) ** 2
    if sigmas.dim() == means.dim():
        comp = -0.5 * d * LOG_2PI - torch.log(sigmas).sum(-1) - (diff2 / (2.0 * sigmas**2)).sum(-1)
    else:
        comp = -0.5 * d * LOG_2PI - d * torch.log(sigmas) - diff2.sum(-1) / (2.0 * sigmas**2)
    return torch.logsumexp(log_alpha + comp, dim=-1)


def mdn_nll(params_seq: Sequence[MixtureParams], targets: PoseSequence | np.ndarray) -> float:
    """Mean over frames of -log p(y_t), evaluated with log-sum-exp."""
    y = targets.flat() if isinstance(targets, PoseSequence) else np.asarray(targets, dtype=np.float64)
    if len(params_seq) != len(y):
        raise ValueError(f"{len(params_seq)} mixtures for {len(y)} target frames")
    total = 0.0
    for t, (p, yt) in enumerate(zip(params_seq, y)):
        lp = mdn_log_density(p, yt)
        if not np.isfinite(lp):
            raise FloatingPointError(f"mixture density underflow at frame {t}")
        total -= lp
    return total / len(y)


def mdn_sample(params: MixtureParams, rng: np.random.Generator, temperature: float = 1.0) -> np.ndarray:
    """Draw a component by weight, then a Gaussian sample scaled by ``temperature``.

    ``temperature == 0`` returns the mean of the heaviest component (lowest index on ties).
    """
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0:
        return params.means[int(np.argmax(params.alphas))].copy()
    p = params.alphas / params.alphas.sum()
    i = int(rng.choice(params.n_components, p=p))
    noise = rng.standard_normal(params.dim)
    return params.means[i] + temperature * params.sigmas[i] * noise


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class Text2PoseConfig:
    vocab_size: int = 20
    pose_dim: int = 104
    n_mixtures: int = 5
    width: int = 128
    layers: int = 2
    heads: int = 4
    ff: int = 256
    max_source_length: int = 32
    max_target_length: int = 64
    sigma_floor: float = 1e-4
    diagonal: bool = False
    dropout: float = 0.0


def _sinusoid(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float32)
    ang = pos / torch.pow(10000.0, i / d)
    pe = torch.zeros(n, d)
    pe[:, 0::2] = torch.sin(ang)
    pe[:, 1::2] = torch.cos(ang)
    return pe


class Text2PoseModel(nn.Module):
    def __init__(self, config: Text2PoseConfig):
        super().__init__()
        if config.n_mixtures < 1:
            raise ValueError("need at least one mixture component")
        self.config = config
        c = config
        self.pad_id = c.vocab_size
        self.src_embed = nn.Embedding(c.vocab_size + 1, c.width, padding_idx=self.pad_id)
        self.register_buffer("pe", _sinusoid(max(c.max_source_length, c.max_target_length) + 1, c.width), persistent=False)
        self.frame_in = nn.Linear(c.pose_dim + 1, c.width)
        self.bos = nn.Parameter(torch.zeros(c.width))
        # source length, so the counter can scale progress to the expected duration
        self.len_embed = nn.Embedding(c.max_source_length + 1, c.width)
        enc_layer = nn.TransformerEncoderLayer(c.width, c.heads, c.ff, c.dropout, batch_first=True)
        dec_layer = nn.TransformerDecoderLayer(c.width, c.heads, c.ff, c.dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, c.layers, enable_nested_tensor=False)
        self.decoder = nn.TransformerDecoder(dec_layer, c.layers)
        m, d = c.n_mixtures, c.pose_dim
        self.n_sigma = m * d if c.diagonal else m
        self.mdn_head = nn.Linear(c.width, m + m * d + self.n_sigma)
        self.counter_head = nn.Linear(c.width, 1)

    def encode(self, src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pad = src == self.pad_id
        x = self.src_embed(src) * math.sqrt(self.config.width) + self.pe[: src.shape[1]]
        return self.encoder(x, src_key_padding_mask=pad), pad

    def decode(self, memory, src_pad, prev: torch.Tensor):
        """``prev`` (B, T, D+1) are the frames already produced; returns T+1 outputs."""
        b, t, _ = prev.shape
        start = self.bos.expand(b, 1, -1)
        n_src = (~src_pad).sum(1)
        x = torch.cat([start, self.frame_in(prev)], dim=1) + self.pe[: t + 1] + self.len_embed(n_src)[:, None]
        mask = torch.triu(torch.full((t + 1, t + 1), float("-inf")), diagonal=1)
        h = self.decoder(x, memory, tgt_mask=mask, memory_key_padding_mask=src_pad)
        return self._heads(h)

    def _heads(self, h):
        c = self.config
        m, d = c.n_mixtures, c.pose_dim
        out = self.mdn_head(h)
        logits = out[..., :m]
        means = out[..., m : m + m * d].reshape(*h.shape[:-1], m, d)
        raw = out[..., m + m * d :]
        if c.diagonal:
            raw = raw.reshape(*h.shape[:-1], m, d)
        sigmas = F.softplus(raw) + c.sigma_floor
        counter = F.hardsigmoid(self.counter_head(h)).squeeze(-1)
        return logits, means, sigmas, counter

    def forward(self, src, prev):
        memory, pad = self.encode(src)
        return self.decode(memory, pad, prev)


def pad_tokens(batch: Sequence[Sequence[int]], pad_id: int) -> torch.Tensor:
    n = max(len(t) for t in batch)
    out = torch.full((len(batch), n), pad_id, dtype=torch.long)
    for i, toks in enumerate(batch):
        out[i, : len(toks)] = torch.as_tensor(list(toks), dtype=torch.long)
    return out


def _check_text(model: Text2PoseModel, text: Sequence[int]) -> None:
    c = model.config
    if not 1 <= len(text) <= c.max_source_length:
        raise CapacityError(f"source length {len(text)} outside 1..{c.max_source_length}")
    if any(not 0 <= int(t) < c.vocab_size for t in text):
        raise ValueError("token id outside the vocabulary")


def _history_tensor(history) -> torch.Tensor:
    if history is None or len(history) == 0:
        return torch.zeros(1, 0, 0)
    if isinstance(history, PoseSequence):
        arr = np.concatenate([history.flat(), history.counters[:, None]], axis=1)
    else:
        arr = np.asarray(history, dtype=np.float64)
    return torch.as_tensor(arr, dtype=torch.float32)[None]


@torch.no_grad()
def decode_step(model: Text2PoseModel, text: Sequence[int], history=None) -> tuple[MixtureParams, float]:
    """Mixture for the next frame and the predicted progress counter.

    ``history`` is a PoseSequence prefix or a (T, D+1) array of
    [pose, counter] rows.
    """
    _check_text(model, text)
    prev = _history_tensor(history)
    if prev.shape[1] >= model.config.max_target_length:
        raise CapacityError(f"history of {prev.shape[1]} frames reaches max_target_length")
    if prev.shape[1] == 0:
        prev = torch.zeros(1, 0, model.config.pose_dim + 1)
    was_training = model.training
    model.eval()
    try:
        logits, means, sigmas, counter = model(pad_tokens([text], model.pad_id), prev)
    finally:
        model.train(was_training)
    alphas = torch.softmax(logits[0, -1].double(), dim=-1)
    params = MixtureParams(alphas.numpy(), means[0, -1].double().numpy(), sigmas[0, -1].double().numpy())
    return params, float(counter[0, -1])


@torch.no_grad()
def produce_sequence(
    model: Text2PoseModel,
    text: Sequence[int],
    max_len: int = 64,
    temperature: float = 1.0,
    counter_threshold: float = 0.99,
    rng: np.random.Generator | None = None,
    layout: JointLayout | None = None,
    fps: float = 25.0,
) -> PoseSequence:
    """Autoregressive sampling until the counter reaches the threshold or ``max_len`` frames."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    layout = layout or default_layout()
    rng = rng if rng is not None else np.random.default_rng(0)
    max_len = min(max_len, model.config.max_target_length)
    rows = []
    for _ in range(max_len):
        params, counter = decode_step(model, text, np.asarray(rows) if rows else None)
        pose = mdn_sample(params, rng, temperature)
        rows.append(np.concatenate([pose, [counter]]))
        if counter >= counter_threshold:
            break
    arr = np.asarray(rows)
    coords = arr[:, :-1].reshape(len(rows), -1, 2)
    counters = np.clip(arr[:, -1], 0.0, 1.0)
    return PoseSequence(coords, np.ones(coords.shape[:2]), counters, layout, fps)


@torch.no_grad()
def teacher_forced_counters(model: Text2PoseModel, text: Sequence[int], target: PoseSequence) -> np.ndarray:
    prev = _history_tensor(target)[:, :-1]
    model.eval()
    _, _, _, counter = model(pad_tokens([text], model.pad_id), prev)
    return counter[0].double().numpy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class Text2PoseTrainConfig:
    steps: int = 3000
    batch_size: int = 16
    lr: float = 5e-4
    counter_weight: float = 1000.0
    counter_tail: int = 4
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 50


def _batch_tensors(pairs, pad_id, pose_dim, tail=0, max_len=None):
    """Padded tensors; ``tail`` extra positions repeat the last pose with counter 1 (counter loss only)."""
    src = pad_tokens([p[0] for p in pairs], pad_id)
    lens = [min(len(p[1]) + tail, max_len or len(p[1]) + tail) for p in pairs]
    tmax = max(lens)
    tgt = torch.zeros(len(pairs), tmax, pose_dim)
    cnt = torch.zeros(len(pairs), tmax)
    mask = torch.zeros(len(pairs), tmax, dtype=torch.bool)
    cmask = torch.zeros(len(pairs), tmax, dtype=torch.bool)
    for i, (_, seq) in enumerate(pairs):
        n = len(seq)
        tgt[i, :n] = torch.as_tensor(seq.flat(), dtype=torch.float32)
        tgt[i, n : lens[i]] = tgt[i, n - 1]
        cnt[i, :n] = torch.as_tensor(seq.counters, dtype=torch.float32)
        cnt[i, n : lens[i]] = 1.0
        mask[i, :n] = True
        cmask[i, : lens[i]] = True
    return src, tgt, cnt, mask, cmask


def text2pose_losses(model, src, tgt, cnt, mask, cmask=None):
    cmask = mask if cmask is None else cmask
    prev = torch.cat([tgt, cnt.unsqueeze(-1)], dim=-1)[:, :-1]
    logits, means, sigmas, counter = model(src, prev)
    ll = mixture_log_likelihood(logits, means, sigmas, tgt)
    m = mask.float()
    nll = -(ll * m).sum() / m.sum()
    cm = cmask.float()
    cmse = (((counter - cnt) ** 2) * cm).sum() / cm.sum()
    return nll, cmse


def train_text2pose(model: Text2PoseModel, pairs, config: Text2PoseTrainConfig, optimizer=None, start_step: int = 0,
                    on_checkpoint=None, checkpoint_every: int = 0) -> dict:
    """Teacher-forced NLL + weighted counter regression, Adam.

    ``pairs`` is a list of (token ids, PoseSequence).  Batches are drawn
    with a generator seeded from ``config.seed`` and the step index, so a
    resumed run follows the same batch sequence.
    """
    model.train()
    opt = optimizer or torch.optim.Adam(model.parameters(), lr=config.lr)
    src_all, tgt_all, cnt_all, mask_all, cmask_all = _batch_tensors(
        pairs, model.pad_id, model.config.pose_dim, config.counter_tail, model.config.max_target_length)
    n = len(pairs)
    report = {"step": [], "loss": [], "nll": [], "counter": []}
    last_good = copy.deepcopy(model.state_dict())
    for step in range(start_step, config.steps):
        g = torch.Generator().manual_seed(config.seed * 1_000_003 + step)
        idx = torch.randperm(n, generator=g)[: config.batch_size] if n > config.batch_size else torch.arange(n)
        tmax = int(cmask_all[idx].sum(1).max())
        umax = int((src_all[idx] != model.pad_id).sum(1).max())
        nll, cmse = text2pose_losses(model, src_all[idx, :umax], tgt_all[idx, :tmax], cnt_all[idx, :tmax],
                                     mask_all[idx, :tmax], cmask_all[idx, :tmax])
        loss = nll + config.counter_weight * cmse
        if not torch.isfinite(loss):
            model.load_state_dict(last_good)
            raise TrainingDivergedError(f"non-finite text2pose loss at step {step}", last_good, step)
        opt.zero_grad()
        loss.backward()
        if config.grad_clip > 0:
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        report["step"].append(step)
        report["loss"].append(loss.item())
        report["nll"].append(nll.item())
        report["counter"].append(cmse.item())
        if config.log_every and step % config.log_every == 0:
            log.info("text2pose step %d loss %.4f nll %.4f counter %.5f", step, loss.item(), nll.item(), cmse.item())
            last_good = copy.deepcopy(model.state_dict())
        if on_checkpoint and checkpoint_every and (step + 1) % checkpoint_every == 0:
            on_checkpoint(step + 1, model, opt)
    return report


def checkpoint_meta(model: Text2PoseModel, seed: int) -> dict:
    c = model.config
    return {
        "kind": "text2pose",
        "M": c.n_mixtures,
        "D": c.pose_dim,
        "layers": c.layers,
        "width": c.width,
        "heads": c.heads,
        "seed": seed,
        "config": asdict(c),
    }
