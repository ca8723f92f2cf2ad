"""Synthetic instruction/response tasks with exact answer checkers.

Three families with controllable response length: REPEAT (repeat a token n
times), COPY (echo a random string), ADD_CHAIN (running sums of a digit
chain). Desk-scale stand-ins for length-sensitive reasoning benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .vocab import Vocab, build_vocab

LETTERS = tuple("abcdefghij")
DIGITS = tuple("0123456789")
SYMBOLS = ("+", "=", "?", ";", "repeat", "copy")


def task_content_tokens() -> list[str]:
    return list(LETTERS) + list(DIGITS) + list(SYMBOLS)


def task_vocab(k: int) -> Vocab:
    return build_vocab(task_content_tokens(), k)


class TaskKind(str, Enum):
    REPEAT = "REPEAT"
    COPY = "COPY"
    ADD_CHAIN = "ADD_CHAIN"


@dataclass(frozen=True)
class TaskInstance:
    kind: TaskKind
    prompt: tuple[int, ...]   # includes a leading <bos>
    gold: tuple[int, ...]

    def check(self, generated: list[int], v: Vocab) -> bool:
        return check(self, generated, v)


def _digits_of(n: int, v: Vocab) -> list[int]:
    return [v.id_of(c) for c in str(n)]


def uniform_lengths(lo: int, hi: int, step: int = 1) -> Callable[[np.random.Generator], int]:
    """Uniform over {lo, lo+step, ...} up to hi (a comb when step > 1)."""
    values = list(range(lo, hi + 1, step))
    def sample(rng: np.random.Generator) -> int:
        return int(values[rng.integers(len(values))])
    return sample


def _make_repeat(target_len: int, rng, v: Vocab) -> TaskInstance:
    tok = v.id_of(str(rng.choice(LETTERS)))
    # fixed-width count so the digits sit at fixed positions and the prompt
    # length is constant; tiny models pick up the count far faster this way
    count = [v.id_of(c) for c in f"{target_len:02d}"]
    prompt = [v.bos_id, v.id_of("repeat"), tok] + count
    return TaskInstance(TaskKind.REPEAT, tuple(prompt), (tok,) * target_len)


def _make_repeat_unknown(target_len: int, rng, v: Vocab) -> TaskInstance:
    """REPEAT with the count replaced by '?': the response length is not
    inferable from the prompt, the way it is not for natural instructions."""
    tok = v.id_of(str(rng.choice(LETTERS)))
    prompt = [v.bos_id, v.id_of("repeat"), tok, v.id_of("?")]
    return TaskInstance(TaskKind.REPEAT, tuple(prompt), (tok,) * target_len)


def _make_copy(target_len: int, rng, v: Vocab) -> TaskInstance:
    body = [v.id_of(str(c)) for c in rng.choice(LETTERS, size=target_len)]
    prompt = [v.bos_id, v.id_of("copy")] + body
    return TaskInstance(TaskKind.COPY, tuple(prompt), tuple(body))


def _make_add_chain(target_len: int, rng, v: Vocab) -> TaskInstance:
    """Running sums of single-digit operands, separated by ';'. The chain is
    grown until the response reaches the target length (approximately)."""
    sep = v.id_of(";")
    operands = [int(rng.integers(1, 10))]
    total = operands[0]
    gold: list[int] = []
    while True:
        nxt = int(rng.integers(0, 10))
        operands.append(nxt)
        total += nxt
        piece = _digits_of(total, v)
        extend = piece if not gold else [sep] + piece
        if gold and len(gold) + len(extend) > target_len:
            break
        gold.extend(extend)
        if len(gold) >= target_len:
            break
        if len(operands) > 64:  # safety bound for tiny targets
            break
    # prompt reflects the operands actually folded into the gold response
    n_sums = gold.count(sep) + 1
    used = operands[: n_sums + 1]
    prompt = [v.bos_id]
    for j, a in enumerate(used):
        if j:
            prompt.append(v.id_of("+"))
        prompt.append(v.id_of(str(a)))
    prompt += [v.id_of("="), v.id_of("?")]
    return TaskInstance(TaskKind.ADD_CHAIN, tuple(prompt), tuple(gold))


_MAKERS = {
    TaskKind.REPEAT: _make_repeat,
    TaskKind.COPY: _make_copy,
    TaskKind.ADD_CHAIN: _make_add_chain,
}


def generate_corpus(
    kind: TaskKind,
    n: int,
    length_distribution: Callable[[np.random.Generator], int],
    rng: np.random.Generator,
    v: Vocab,
    repeat_unknown_share: float = 0.0,
) -> list[TaskInstance]:
    """repeat_unknown_share: fraction of REPEAT instances that use the '?'
    (unknown count) prompt form; ignored for the other tasks."""
    out = []
    for _ in range(n):
        target = length_distribution(rng)
        if target < 1:
            raise ValueError("length distribution produced a length < 1")
        if kind is TaskKind.REPEAT and rng.random() < repeat_unknown_share:
            out.append(_make_repeat_unknown(target, rng, v))
        else:
            out.append(_MAKERS[kind](target, rng, v))
    return out


def _parse_number(ids: list[int], v: Vocab) -> int | None:
    try:
        text = "".join(v.token_of(i) for i in ids)
    except Exception:
        return None
    return int(text) if text.isdigit() else None


def check(instance: TaskInstance, generated: list[int], v: Vocab) -> bool:
    """Exact token match for REPEAT/COPY; value match on the final running sum
    for ADD_CHAIN. ``generated`` is the response up to (excluding) the first
    <eos>; empty or truncated generations fail."""
    if not generated:
        return False
    if instance.kind in (TaskKind.REPEAT, TaskKind.COPY):
        return tuple(generated) == instance.gold
    sep = v.id_of(";")
    gold_groups = _split(list(instance.gold), sep)
    gen_groups = _split(generated, sep)
    if not gen_groups:
        return False
    gold_total = _parse_number(gold_groups[-1], v)
    gen_total = _parse_number(gen_groups[-1], v)
    return gen_total is not None and gen_total == gold_total


def _split(ids: list[int], sep: int) -> list[list[int]]:
    groups: list[list[int]] = [[]]
    for i in ids:
        if i == sep:
            groups.append([])
        else:
            groups[-1].append(i)
    return groups
