"""Word-level vocabulary built deterministically from the template bank."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..datagen.templates import TemplateBank, default_bank

SPECIALS = ("[PAD]", "[BOS]", "[EOS]", "[SEG]", "[ROUND]", "[USER]", "[ASSISTANT]", "[NULLREF]", "[UNK]")

_SPECIAL_RE = re.compile(r"(\[[A-Z]+\])")
_WORD_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*|[.,;?]")
_SLOT_RE = re.compile(r"\{[A-Z_]+\}")


def tokenize(text: str) -> list[str]:
    """Lowercased word-level tokens; bracketed specials pass through verbatim."""
    out: list[str] = []
    for part in _SPECIAL_RE.split(text):
        if not part:
            continue
        if _SPECIAL_RE.fullmatch(part):
            out.append(part)
        else:
            out.extend(_WORD_RE.findall(part.lower()))
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        assert self.tokens[: len(SPECIALS)] == SPECIALS, "specials must lead the vocabulary"
        assert self.tokens.count("[SEG]") == 1

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            return self.tokens.index("[UNK]")

    def encode(self, text: str) -> list[int]:
        index = _index_cache(self.tokens)
        unk = index["[UNK]"]
        return [index.get(t, unk) for t in tokenize(text)]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)


_INDEX_CACHE: dict[tuple[str, ...], dict[str, int]] = {}


def _index_cache(tokens: tuple[str, ...]) -> dict[str, int]:
    got = _INDEX_CACHE.get(tokens)
    if got is None:
        got = {t: i for i, t in enumerate(tokens)}
        _INDEX_CACHE[tokens] = got
    return got


def build_vocabulary(bank: TemplateBank | None = None) -> Vocabulary:
    """Specials first, then every sorted word the bank can ever emit."""
    bank = bank or default_bank()
    words: set[str] = set()
    for s in bank.all_surface_strings():
        words.update(tokenize(_SLOT_RE.sub(" ", s)))
    words.discard("")
    words -= set(SPECIALS)
    return Vocabulary(tokens=SPECIALS + tuple(sorted(words)))
