"""Absorbing-state forward process and the 1/lambda-weighted masked cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .padding import PaddedExample
from .vocab import Vocab


class MaskingError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    lam: float                 # corruption rate in (0, 1]
    mask: np.ndarray           # bool, True = replaced by MASK
    maskable_from: int

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise MaskingError(f"lambda must lie in (0,1], got {self.lam}")
        if self.mask[: self.maskable_from].any():
            raise MaskingError("mask touches the prompt region")


def sample_mask(example: PaddedExample, rng: np.random.Generator) -> MaskSpec:
    """Draw lambda ~ U(0,1), then mask each maskable position Bern(lambda).
    All-false draws are resampled with the same lambda so the 1/lambda weight
    stays finite."""
    L = len(example)
    start = example.maskable_from
    if start >= L:
        raise MaskingError("example has an empty maskable region; nothing to train on")
    lam = float(rng.uniform(0.0, 1.0))
    while lam == 0.0:
        lam = float(rng.uniform(0.0, 1.0))
    mask = np.zeros(L, dtype=bool)
    while True:
        mask[start:] = rng.random(L - start) < lam
        if mask.any():
            break
    return MaskSpec(lam=lam, mask=mask, maskable_from=start)


def apply_mask(example: PaddedExample, spec: MaskSpec, v: Vocab) -> np.ndarray:
    if len(spec.mask) != len(example):
        raise MaskingError(
            f"mask length {len(spec.mask)} != example length {len(example)}"
        )
    out = np.array(example.tokens, dtype=np.int64)
    out[spec.mask] = v.mask_id
    return out


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def masked_ce_loss(logits: np.ndarray, targets: np.ndarray, spec: MaskSpec) -> float:
    """(1/lambda) * sum over masked positions of -log p(target).

    ``logits``: (L, V) for one sequence. Batch averaging (mean of per-sequence
    sums) is done by the caller over per-example values.
    """
    if not spec.mask.any():
        raise MaskingError("no masked positions; loss is undefined")
    logp = log_softmax(logits[spec.mask])
    tgt = np.asarray(targets)[spec.mask]
    nll = -logp[np.arange(len(tgt)), tgt].sum()
    return float(nll / spec.lam)
