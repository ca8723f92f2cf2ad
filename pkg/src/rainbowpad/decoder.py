"""Any-order iterative unmasking.

Each step scores the still-masked candidate positions from the model's
per-position distributions and reveals the highest-scoring ones. Blocks
restrict candidates to the earliest contiguous block that still contains a
mask. With gumbel_temperature = 0 and sampling_temperature = 0 the whole
procedure is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .denoiser import Denoiser
from .masking import log_softmax
from .padding import res_length
from .vocab import Vocab


class Strategy(str, Enum):
    CONFIDENCE = "CONFIDENCE"  # highest top-1 probability first
    MARGIN = "MARGIN"          # largest top1 - top2 gap first
    ENTROPY = "ENTROPY"        # lowest predictive entropy first


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class DecodePolicy:
    strategy: Strategy = Strategy.CONFIDENCE
    steps: int | None = None                      # None: one token per step
    tokens_per_step: tuple[int, ...] | None = None
    n_blocks: int = 1
    eos_penalty: float = 1.0                      # multiplies p(eos); 1 = off
    gumbel_temperature: float = 0.0               # 0 = no logit noise
    top_p: float = 1.0
    top_k: int = 0                                # 0 = off
    sampling_temperature: float = 0.0             # 0 = argmax token choice

    def __post_init__(self):
        if self.n_blocks < 1:
            raise DecodeError("n_blocks must be >= 1")
        if not 0.0 <= self.eos_penalty <= 1.0:
            raise DecodeError("eos_penalty must lie in [0,1]")
        if not 0.0 < self.top_p <= 1.0:
            raise DecodeError("top_p must lie in (0,1]")

    def schedule(self, n_masked: int) -> list[int]:
        if self.tokens_per_step is not None:
            if sum(self.tokens_per_step) != n_masked:
                raise DecodeError(
                    f"tokens_per_step sums to {sum(self.tokens_per_step)}, "
                    f"need {n_masked}"
                )
            return list(self.tokens_per_step)
        if self.steps is None:
            return [1] * n_masked
        T = min(self.steps, n_masked)
        base, extra = divmod(n_masked, T)
        return [base + (1 if t < extra else 0) for t in range(T)]


@dataclass
class DecodeStep:
    step: int
    positions: list[int]
    tokens: list[int]
    scores: list[float]


@dataclass
class DecodeTrace:
    steps: list[DecodeStep]
    final_tokens: list[int]
    prompt_len: int
    res_length: int
    initial_top1: list[float] = field(default_factory=list)  # step-0 snapshot

    def reveal_step(self) -> dict[int, int]:
        """position -> step index at which it was revealed."""
        return {pos: s.step for s in self.steps for pos in s.positions}

    def revealed_in_order(self) -> list[tuple[int, int]]:
        """(position, token) pairs in reveal order."""
        return [(p, t) for s in self.steps for p, t in zip(s.positions, s.tokens)]

    def to_json(self) -> str:
        return json.dumps({
            "steps": [
                {"step": s.step, "positions": s.positions,
                 "tokens": s.tokens, "scores": s.scores}
                for s in self.steps
            ],
            "final": self.final_tokens,
            "res_length": self.res_length,
            "prompt_len": self.prompt_len,
            "initial_top1": self.initial_top1,
        })

    @classmethod
    def from_json(cls, text: str) -> "DecodeTrace":
        obj = json.loads(text)
        return cls(
            steps=[DecodeStep(s["step"], s["positions"], s["tokens"], s["scores"])
                   for s in obj["steps"]],
            final_tokens=obj["final"],
            prompt_len=obj["prompt_len"],
            res_length=obj["res_length"],
            initial_top1=obj.get("initial_top1", []),
        )


def score_positions(probs: np.ndarray, strategy: Strategy) -> np.ndarray:
    """Scalar score per row distribution; higher means decode sooner."""
    probs = np.asarray(probs)
    if strategy is Strategy.CONFIDENCE:
        return probs.max(-1)
    if strategy is Strategy.MARGIN:
        top2 = np.partition(probs, -2, axis=-1)[..., -2:]
        return top2[..., 1] - top2[..., 0]
    if strategy is Strategy.ENTROPY:
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
        return plogp.sum(-1)  # = -H, so lowest entropy scores highest
    raise DecodeError(f"unknown strategy {strategy}")


def _block_bounds(prompt_len: int, L: int, n_blocks: int) -> list[tuple[int, int]]:
    gen = L - prompt_len
    if n_blocks > gen:
        raise DecodeError(f"n_blocks={n_blocks} exceeds generation length {gen}")
    size = gen // n_blocks
    bounds = []
    for b in range(n_blocks):
        lo = prompt_len + b * size
        hi = prompt_len + (b + 1) * size if b < n_blocks - 1 else L
        bounds.append((lo, hi))
    return bounds


def _choose_token(row_probs: np.ndarray, policy: DecodePolicy,
                  rng: np.random.Generator | None) -> int:
    if policy.sampling_temperature <= 0.0:
        return int(row_probs.argmax())
    p = row_probs.copy()
    if policy.top_k > 0:
        kth = np.partition(p, -policy.top_k)[-policy.top_k]
        p[p < kth] = 0.0
    if policy.top_p < 1.0:
        order = np.argsort(-p)
        csum = np.cumsum(p[order])
        cutoff = np.searchsorted(csum, policy.top_p * p.sum()) + 1
        keep = order[:cutoff]
        trunc = np.zeros_like(p)
        trunc[keep] = p[keep]
        p = trunc
    logp = np.full_like(p, -np.inf)
    nz = p > 0
    logp[nz] = np.log(p[nz]) / policy.sampling_temperature
    p = np.exp(logp - logp.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def decode_batch(
    model: Denoiser,
    prompts: list[list[int]],
    L: int,
    policy: DecodePolicy,
    v: Vocab,
    rng: np.random.Generator | None = None,
) -> list[DecodeTrace]:
    """Decode several prompts against one checkpoint, sharing forward passes.
    Each sequence follows its own schedule; shorter ones idle once finished."""
    if rng is None:
        rng = np.random.default_rng(0)
    n = len(prompts)
    canvases = np.full((n, L), v.mask_id, dtype=np.int64)
    prompt_lens = []
    schedules = []
    blocks = []
    for b, prompt in enumerate(prompts):
        pl = len(prompt)
        if not pl < L:
            raise DecodeError(f"prompt_len {pl} must be < L={L}")
        if L > model.config.max_len:
            raise DecodeError(f"L={L} exceeds model max_len {model.config.max_len}")
        canvases[b, :pl] = prompt
        prompt_lens.append(pl)
        schedules.append(policy.schedule(L - pl))
        blocks.append(_block_bounds(pl, L, policy.n_blocks))

    traces: list[DecodeTrace | None] = [None] * n
    step_records: list[list[DecodeStep]] = [[] for _ in range(n)]
    initial_top1: list[list[float]] = [[] for _ in range(n)]
    max_steps = max(len(s) for s in schedules)

    for t in range(max_steps):
        active = [b for b in range(n) if t < len(schedules[b])]
        if not active:
            break
        logits = model.forward(canvases[active])
        if policy.gumbel_temperature > 0.0:
            logits = logits + policy.gumbel_temperature * rng.gumbel(size=logits.shape)
        probs = np.exp(log_softmax(logits))
        if v.mask_id < probs.shape[-1]:
            # the mask symbol is never a legal output token
            probs[:, :, v.mask_id] = 0.0
            probs /= probs.sum(-1, keepdims=True)
        if policy.eos_penalty < 1.0 and v.eos_id < probs.shape[-1]:
            probs[:, :, v.eos_id] *= policy.eos_penalty
            probs /= probs.sum(-1, keepdims=True)

        for j, b in enumerate(active):
            row_probs = probs[j]
            if t == 0:
                initial_top1[b] = row_probs.max(-1).tolist()
            masked = canvases[b] == v.mask_id
            quota = schedules[b][t]
            chosen_list: list[int] = []
            score_list: list[float] = []
            # earliest unfinished block first; a multi-token step may spill
            # into the next block once the current one is exhausted
            for lo, hi in blocks[b]:
                if quota <= 0:
                    break
                cand = np.flatnonzero(masked[lo:hi]) + lo
                if len(cand) == 0:
                    continue
                scores = score_positions(row_probs[cand], policy.strategy)
                # ties broken by lowest position index
                order = np.lexsort((cand, -scores))[:quota]
                chosen_list.extend(int(p) for p in cand[order])
                score_list.extend(float(s) for s in scores[order])
                quota -= len(order)
            chosen = np.array(chosen_list, dtype=np.int64)
            chosen_scores = np.array(score_list)
            chosen_tokens = [
                _choose_token(row_probs[pos], policy, rng) for pos in chosen
            ]
            canvases[b, chosen] = chosen_tokens
            step_records[b].append(DecodeStep(
                step=t,
                positions=[int(p) for p in chosen],
                tokens=[int(x) for x in chosen_tokens],
                scores=[float(s) for s in chosen_scores],
            ))

    for b in range(n):
        final = canvases[b].tolist()
        if v.mask_id in final:
            raise DecodeError("decode finished with masks remaining")
        traces[b] = DecodeTrace(
            steps=step_records[b],
            final_tokens=final,
            prompt_len=prompt_lens[b],
            res_length=res_length(final, prompt_lens[b], v),
            initial_top1=initial_top1[b],
        )
    return traces  # type: ignore[return-value]


def decode(
    model: Denoiser,
    prompt: list[int],
    L: int,
    policy: DecodePolicy,
    v: Vocab,
    rng: np.random.Generator | None = None,
) -> DecodeTrace:
    return decode_batch(model, [prompt], L, policy, v, rng)[0]


def cascade_probe(
    model: Denoiser, prompt: list[int], L: int, i: int, k: int, v: Vocab
) -> dict[str, float]:
    """How much does clamping position i+k to <eos> raise p(eos) at position i?

    p_base: all non-prompt positions masked. p_conditioned: same canvas with
    position i+k revealed as <eos>. Single forward pass each.
    """
    pl = len(prompt)
    if not (pl <= i and i + k < L):
        raise DecodeError(f"need prompt_len <= i and i+k < L (i={i}, k={k}, L={L})")
    canvas = np.full(L, v.mask_id, dtype=np.int64)
    canvas[:pl] = prompt
    probs = np.exp(log_softmax(model.forward(canvas)))
    p_base = float(probs[i, v.eos_id])
    canvas[i + k] = v.eos_id
    probs = np.exp(log_softmax(model.forward(canvas)))
    p_cond = float(probs[i, v.eos_id])
    return {"p_base": p_base, "p_conditioned": p_cond}
