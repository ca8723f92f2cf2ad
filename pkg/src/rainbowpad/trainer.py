"""Training loop: AdamW over the masked-CE objective, with the padding-region
loss tracked separately from the content region."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .denoiser import (Denoiser, DenoiserError, _backward_from_dlogits,
                       _forward_with_cache)
from .masking import log_softmax
from .padding import PaddedExample
from .vocab import Vocab


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 64
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 1.0     # global gradient-norm clip; 0 disables
    max_steps: int = 0         # stop after this many optimizer steps; 0 = all
    warmup_steps: int = 0
    seed: int = 0
    log_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "total", "content", "padding", "lambda_mean"])
            for r in self.records:
                w.writerow([r["step"], r["total_loss"], r["content_loss"],
                            r["padding_loss"], r["lambda_mean"]])


class AdamW:
    """Decoupled weight decay; the update is checked against a hand computation
    in the tests."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_scale: float = 1.0) -> None:
        c = self.cfg
        self.t += 1
        lr = c.learning_rate * lr_scale
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p -= lr * (m_hat / (np.sqrt(v_hat) + c.eps) + c.weight_decay * p)


def _clip_grads(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is at most
    clip_norm; returns the scale applied. The 1/lambda weights make per-batch
    gradients heavy-tailed, and without the clip rare low-lambda spikes
    dominate the optimizer state."""
    gsq = sum(float((g * g).sum()) for g in grads.values())
    scale = min(1.0, clip_norm / (np.sqrt(gsq) + 1e-12))
    if scale < 1.0:
        for g in grads.values():
            g *= scale
    return scale


def _corpus_arrays(corpus: list[PaddedExample]):
    L = len(corpus[0])
    scheme = corpus[0].scheme
    for ex in corpus:
        if len(ex) != L or ex.scheme is not scheme:
            raise ValueError("corpus examples must share L and scheme")
    tokens = np.array([ex.tokens for ex in corpus], dtype=np.int64)
    maskable_from = np.array([ex.maskable_from for ex in corpus])
    eos_pos = np.array([ex.eos_pos for ex in corpus])
    return tokens, maskable_from, eos_pos


def _sample_batch_masks(rng, L, maskable_from):
    """Per-sequence lambda ~ U(0,1), stratified within the batch so each batch
    sees the full corruption range (the 1/lambda weight makes iid draws very
    heavy-tailed); Bernoulli masks with an all-false resample guard, prompts
    never touched."""
    B = len(maskable_from)
    lams = rng.permutation((np.arange(B) + rng.uniform(size=B)) / B)
    lams[lams == 0.0] = 0.5
    mask = rng.random((B, L)) < lams[:, None]
    mask[np.arange(L)[None, :] < maskable_from[:, None]] = False
    for b in range(B):
        while not mask[b].any():
            mask[b, maskable_from[b]:] = rng.random(L - maskable_from[b]) < lams[b]
    return mask, lams


def _split_losses(logp, targets, mask, lams, eos_pos, maskable_from):
    """Decompose the weighted masked-CE into content (positions in
    [maskable_from, eos_pos]) and padding (positions after eos_pos) parts.
    Sums to the total exactly. Also returns per-token padding nats."""
    B, L = targets.shape
    pos = np.arange(L)[None, :]
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    w = mask / (lams[:, None] * B)
    pad_region = pos > eos_pos[:, None]
    content_region = (pos >= maskable_from[:, None]) & ~pad_region
    content = float((nll * w * content_region).sum())
    padding = float((nll * w * pad_region).sum())
    pad_tok = mask & pad_region
    pad_per_token = float((nll * pad_tok).sum() / max(pad_tok.sum(), 1))
    return content, padding, pad_per_token


def train(
    model: Denoiser, corpus: list[PaddedExample], cfg: TrainConfig, v: Vocab
) -> tuple[Denoiser, TrainLog]:
    """Optimize in place and return (model, log). Deterministic given cfg.seed."""
    if not corpus:
        raise ValueError("corpus is empty")
    tokens_all, maskable_all, eos_all = _corpus_arrays(corpus)
    n, L = tokens_all.shape
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params, cfg)
    log = TrainLog()

    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps and step >= cfg.max_steps:
                return model, log
            idx = order[start:start + cfg.batch_size]
            targets = tokens_all[idx]
            maskable_from = maskable_all[idx]
            eos_pos = eos_all[idx]
            mask, lams = _sample_batch_masks(rng, L, maskable_from)
            corrupted = targets.copy()
            corrupted[mask] = v.mask_id

            try:
                logits, cache, _ = _forward_with_cache(model, corrupted)
            except DenoiserError as e:
                raise TrainingDiverged(step) from e
            logp = log_softmax(logits)
            w = mask / (lams[:, None] * len(idx))
            nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
            total = float((nll * w).sum())
            if not np.isfinite(total):
                raise TrainingDiverged(step)
            content, padding, pad_per_token = _split_losses(
                logp, targets, mask, lams, eos_pos, maskable_from
            )

            dlogits = np.exp(logp)
            np.put_along_axis(
                dlogits, targets[..., None],
                np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1,
            )
            dlogits *= w[..., None]
            grads = _backward_from_dlogits(model, dlogits.astype(logits.dtype), cache)
            if cfg.clip_norm > 0:
                _clip_grads(grads, cfg.clip_norm)
            warm = min(1.0, (step + 1) / cfg.warmup_steps) if cfg.warmup_steps else 1.0
            opt.step(model.params, grads, lr_scale=warm)

            if step % cfg.log_every == 0 or start + cfg.batch_size >= n:
                log.append(
                    step=step,
                    total_loss=total,
                    content_loss=content,
                    padding_loss=padding,
                    padding_loss_per_token=pad_per_token,
                    lambda_mean=float(lams.mean()),
                )
            step += 1
    return model, log


def eval_loss(
    model: Denoiser,
    corpus: list[PaddedExample],
    n_mask_draws: int,
    rng: np.random.Generator,
    v: Vocab,
    batch_size: int = 64,
) -> dict[str, float]:
    """Mean {total, content, padding} losses over n_mask_draws mask samples per
    example. Read-only on parameters."""
    tokens_all, maskable_all, eos_all = _corpus_arrays(corpus)
    n, L = tokens_all.shape
    totals = np.zeros(3)
    draws = 0
    for _ in range(n_mask_draws):
        for start in range(0, n, batch_size):
            sl = slice(start, start + batch_size)
            targets = tokens_all[sl]
            mask, lams = _sample_batch_masks(rng, L, maskable_all[sl])
            corrupted = targets.copy()
            corrupted[mask] = v.mask_id
            from .denoiser import forward
            logp = log_softmax(forward(model, corrupted))
            w = mask / (lams[:, None] * len(targets))
            nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
            content, padding, _ = _split_losses(
                logp, targets, mask, lams, eos_all[sl], maskable_all[sl]
            )
            totals += (float((nll * w).sum()), content, padding)
        draws += 1
    totals /= draws
    return {"total": totals[0], "content": totals[1], "padding": totals[2]}
