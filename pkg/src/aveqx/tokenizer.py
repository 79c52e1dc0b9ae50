"""Whitespace/punctuation tokenizer and the special-token vocabulary."""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD, CLS, SEP, SEEN, UNSEEN, UNK = "[PAD]", "[CLS]", "[SEP]", "[SEEN]", "[UNSEEN]", "[UNK]"
SPECIALS = (PAD, CLS, SEP, SEEN, UNSEEN)
PAD_ID, CLS_ID, SEP_ID, SEEN_ID, UNSEEN_ID, UNK_ID = range(6)

# alphanumeric runs may contain inner '-' or '.' ("3.2v", "a-b"); any other
# non-space character is a token of its own
_TOKEN_RE = re.compile(r"[^\W_]+(?:[.\-][^\W_]+)*|\S")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Dense token ids. Ids 0-4 are the specials, 5 is UNK."""

    def __init__(self, surfaces: Sequence[str]):
        if tuple(surfaces[: len(SPECIALS) + 1]) != SPECIALS + (UNK,):
            raise ValueError("vocabulary must start with the reserved specials and UNK")
        self.surfaces = tuple(surfaces)
        self.ids = {s: i for i, s in enumerate(self.surfaces)}
        if len(self.ids) != len(self.surfaces):
            raise ValueError("duplicate surface in vocabulary")
        self._cache: dict[tuple[str, ...], list[int]] = {}

    def __len__(self) -> int:
        return len(self.surfaces)

    def __contains__(self, surface: str) -> bool:
        return surface in self.ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.surfaces == other.surfaces

    def id(self, surface: str) -> int:
        return self.ids.get(surface, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.ids.get(t, UNK_ID) for t in tokens]

    def encode_cached(self, tokens: tuple[str, ...]) -> list[int]:
        hit = self._cache.get(tokens)
        if hit is None:
            hit = self._cache[tokens] = self.encode(tokens)
        return hit

    def surface(self, idx: int) -> str:
        return self.surfaces[idx]

    def dumps(self) -> str:
        return "".join(f"{i}\t{s}\n" for i, s in enumerate(self.surfaces))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        surfaces = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            idx, surface = line.split("\t", 1)
            if int(idx) != lineno:
                raise ValueError(f"{path}: ids must be dense, line {lineno} has id {idx}")
            surfaces.append(surface)
        return cls(surfaces)


def build_vocab(counts: Mapping[str, int] | Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from token counts or from an iterable of token lists.

    Tokens are ordered by count (descending) then lexicographically so the
    id assignment is stable across rebuilds.
    """
    if not isinstance(counts, Mapping):
        counter: Counter = Counter()
        for toks in counts:
            counter.update(toks)
        counts = counter
    reserved = set(SPECIALS) | {UNK}
    kept = sorted(
        ((s, c) for s, c in counts.items() if c >= min_count and s not in reserved),
        key=lambda sc: (-sc[1], sc[0]),
    )
    return Vocabulary(list(SPECIALS) + [UNK] + [s for s, _ in kept])
