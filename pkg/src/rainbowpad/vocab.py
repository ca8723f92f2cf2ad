"""Token universe: content tokens plus MASK / EOS / BOS and the K-token pad palette."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

MASK_SURFACE = "[M]"
EOS_SURFACE = "<eos>"
BOS_SURFACE = "<bos>"


def pad_surface(k: int) -> str:
    return f"<pad_{k}>"


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    """Immutable token registry. Content ids come first, then the special block.

    ``pad_ids`` ordering defines the cycle order used by rainbow layouts.
    """

    content_tokens: tuple[str, ...]
    mask_id: int
    eos_id: int
    bos_id: int
    pad_ids: tuple[int, ...]
    _str_to_id: dict[str, int] = field(repr=False, compare=False, default_factory=dict)
    _id_to_str: tuple[str, ...] = field(repr=False, compare=False, default_factory=tuple)

    @property
    def size(self) -> int:
        return len(self._id_to_str)

    @property
    def k(self) -> int:
        return len(self.pad_ids)

    def id_of(self, token: str) -> int:
        try:
            return self._str_to_id[token]
        except KeyError:
            raise VocabError(f"unknown token: {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise VocabError(f"unknown token id: {token_id}")
        return self._id_to_str[token_id]

    @property
    def content_ids(self) -> range:
        return range(len(self.content_tokens))

    def is_special(self, token_id: int) -> bool:
        return token_id >= len(self.content_tokens)

    def to_json(self) -> str:
        return json.dumps({"content": list(self.content_tokens), "k": self.k})

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        obj = json.loads(text)
        return build_vocab(obj["content"], obj["k"])


def build_vocab(content_tokens: list[str], k: int) -> Vocab:
    """Assign ids deterministically: content tokens in order, then
    MASK, EOS, BOS, then the K pad tokens contiguously."""
    if not content_tokens:
        raise VocabError("content_tokens must be non-empty")
    if k < 1:
        raise VocabError(f"need at least one pad token, got k={k}")
    seen: set[str] = set()
    for tok in content_tokens:
        if tok in seen:
            raise VocabError(f"duplicate content token: {tok!r}")
        seen.add(tok)
    reserved = {MASK_SURFACE, EOS_SURFACE, BOS_SURFACE} | {pad_surface(i) for i in range(k)}
    clash = seen & reserved
    if clash:
        raise VocabError(f"content token collides with a reserved surface form: {sorted(clash)}")

    surfaces = list(content_tokens) + [MASK_SURFACE, EOS_SURFACE, BOS_SURFACE]
    surfaces += [pad_surface(i) for i in range(k)]
    n = len(content_tokens)
    str_to_id = {s: i for i, s in enumerate(surfaces)}
    return Vocab(
        content_tokens=tuple(content_tokens),
        mask_id=n,
        eos_id=n + 1,
        bos_id=n + 2,
        pad_ids=tuple(range(n + 3, n + 3 + k)),
        _str_to_id=str_to_id,
        _id_to_str=tuple(surfaces),
    )


def encode(v: Vocab, text: list[str]) -> list[int]:
    return [v.id_of(t) for t in text]


def decode(v: Vocab, ids: list[int]) -> list[str]:
    return [v.token_of(i) for i in ids]
