"""Fixed-length layout of (prompt, response) pairs under the four padding schemes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .vocab import Vocab


class Scheme(str, Enum):
    EOS_PAD = "EOS_PAD"        # tail filled with <eos> (the status-quo convention)
    SINGLE_PAD = "SINGLE_PAD"  # one eos, tail all pad_0
    RANDOM_PAD = "RANDOM_PAD"  # one eos, tail i.i.d. uniform over the pad palette
    RAINBOW = "RAINBOW"        # one eos, tail cycles pad_0..pad_{K-1}


class LayoutError(ValueError):
    def __init__(self, msg: str, required_length: int | None = None):
        super().__init__(msg)
        self.required_length = required_length


@dataclass(frozen=True)
class PaddedExample:
    tokens: tuple[int, ...]
    prompt_len: int
    response_len: int
    scheme: Scheme

    @property
    def eos_pos(self) -> int:
        return self.prompt_len + self.response_len

    @property
    def maskable_from(self) -> int:
        # prompts are never corrupted
        return self.prompt_len

    def __len__(self) -> int:
        return len(self.tokens)


def layout(
    prompt: list[int],
    response: list[int],
    L: int,
    scheme: Scheme,
    v: Vocab,
    rng: np.random.Generator | None = None,
    k: int | None = None,
) -> PaddedExample:
    """Place prompt + response + terminator into a length-L canvas and fill the
    tail per the scheme. The rainbow cycle restarts at pad_0 right after the
    terminator, so pad identity encodes distance past termination.

    ``k`` restricts the cycle to the first k pad tokens of the palette (so
    palette-size ablations can share one vocab); default uses the whole
    palette."""
    for t in prompt:
        if v.is_special(t) and t != v.bos_id:
            raise LayoutError(f"prompt contains special id {t} ({v.token_of(t)})")
    for t in response:
        if v.is_special(t):
            raise LayoutError(f"response contains special id {t} ({v.token_of(t)})")
    need = len(prompt) + len(response) + 1
    if need > L:
        raise LayoutError(
            f"response too long for L={L}: needs {need} positions", required_length=need
        )

    if k is None:
        k = v.k
    if not 1 <= k <= v.k:
        raise LayoutError(f"k={k} outside the palette (1..{v.k})")
    eos_pos = len(prompt) + len(response)
    tail_len = L - eos_pos - 1
    if scheme is Scheme.EOS_PAD:
        tail = [v.eos_id] * tail_len
    elif scheme is Scheme.SINGLE_PAD:
        tail = [v.pad_ids[0]] * tail_len
    elif scheme is Scheme.RAINBOW:
        tail = [v.pad_ids[d % k] for d in range(tail_len)]
    elif scheme is Scheme.RANDOM_PAD:
        if rng is None:
            raise LayoutError("RANDOM_PAD requires an rng")
        tail = [v.pad_ids[i] for i in rng.integers(0, k, size=tail_len)]
    else:  # pragma: no cover
        raise LayoutError(f"unknown scheme {scheme}")

    tokens = tuple(prompt) + tuple(response) + (v.eos_id,) + tuple(tail)
    return PaddedExample(
        tokens=tokens,
        prompt_len=len(prompt),
        response_len=len(response),
        scheme=scheme,
    )


def res_length(tokens, prompt_len: int, v: Vocab) -> int:
    """Generated tokens before the first <eos>; if none occurs, the full
    generated length."""
    n = len(tokens)
    if n < prompt_len:
        raise ValueError(f"tokens shorter than prompt_len ({n} < {prompt_len})")
    for j in range(prompt_len, n):
        if tokens[j] == v.eos_id:
            return j - prompt_len
    return n - prompt_len


def dump_jsonl(examples: list[PaddedExample], path) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "tokens": list(ex.tokens),
                "prompt_len": ex.prompt_len,
                "response_len": ex.response_len,
                "scheme": ex.scheme.value,
            }) + "\n")


def load_jsonl(path) -> list[PaddedExample]:
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(PaddedExample(
                tokens=tuple(rec["tokens"]),
                prompt_len=rec["prompt_len"],
                response_len=rec["response_len"],
                scheme=Scheme(rec["scheme"]),
            ))
    return out
