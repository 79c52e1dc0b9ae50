"""Attribute -> seen-value knowledge base, knowledge dropout and KB merging."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CleanTuple
from .tokenizer import PAD, tokenize

DEFAULT_DROPOUT_RATE = 0.2

ValueList = tuple[tuple[tuple[str, ...], int], ...]


def _order(counts: Mapping[tuple[str, ...], int]) -> ValueList:
    return tuple(sorted(counts.items(), key=lambda vc: (-vc[1], " ".join(vc[0]))))


@dataclass(frozen=True)
class DropoutConfig:
    r: float = DEFAULT_DROPOUT_RATE
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"dropout rate must be in [0, 1], got {self.r}")


class KnowledgeBase:
    """Frequency-ordered seen values per attribute.

    Each entry is a tuple of ``(value_tokens, count)`` sorted by count
    descending, ties broken by the joined surface.
    """

    def __init__(self, entries: Mapping[str, ValueList], source: str = "train"):
        self.entries: dict[str, ValueList] = dict(entries)
        self.source = source

    def __contains__(self, attribute: str) -> bool:
        return bool(self.entries.get(attribute))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, KnowledgeBase)
            and self.source == other.source
            and self.entries == other.entries
        )

    def __len__(self) -> int:
        return len(self.entries)

    def values(self, attribute: str) -> ValueList:
        return self.entries.get(attribute, ())

    def value_set(self, attribute: str) -> set[tuple[str, ...]]:
        return {v for v, _ in self.values(attribute)}

    def attributes(self) -> list[str]:
        return sorted(self.entries)

    def pair_count(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def dumps(self) -> str:
        lines = [json.dumps({"source": self.source})]
        for attr in sorted(self.entries):
            lines.append(
                json.dumps(
                    {
                        "attribute": attr,
                        "values": [{"surface": " ".join(v), "count": c} for v, c in self.entries[attr]],
                    },
                    ensure_ascii=False,
                )
            )
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "KnowledgeBase":
        lines = text.splitlines()
        source = json.loads(lines[0])["source"]
        entries = {}
        for line in lines[1:]:
            rec = json.loads(line)
            entries[rec["attribute"]] = tuple(
                (tuple(v["surface"].split(" ")), int(v["count"])) for v in rec["values"]
            )
        return cls(entries, source)

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _count(tuples: Iterable[CleanTuple]) -> dict[str, Counter]:
    counts: dict[str, Counter] = defaultdict(Counter)
    for t in tuples:
        if t.value is None:
            counts.setdefault(t.attribute, Counter())
            continue
        toks = tuple(tokenize(t.value))
        if toks:
            counts[t.attribute][toks] += 1
    return counts


def build_kb(train: Iterable[CleanTuple]) -> KnowledgeBase:
    """Collect non-NULL values per attribute; attributes seen only with NULL get an empty entry."""
    return KnowledgeBase({a: _order(c) for a, c in _count(train).items()}, source="train")


def merge(kb: KnowledgeBase, extra: Iterable[CleanTuple], tag: str = "dev") -> KnowledgeBase:
    extra = list(extra)
    if not extra:
        return KnowledgeBase(kb.entries, kb.source)
    counts = {a: Counter(dict(vals)) for a, vals in kb.entries.items()}
    for a, c in _count(extra).items():
        counts.setdefault(a, Counter()).update(c)
    return KnowledgeBase({a: _order(c) for a, c in counts.items()}, source=f"{kb.source}+{tag}")


def drop_probabilities(counts: Sequence[int], r: float) -> np.ndarray:
    return np.power(float(r), np.asarray(counts, dtype=float))


def apply_dropout(
    values: Sequence[tuple[Sequence[str], int]], r: float, rng: np.random.Generator
) -> list[tuple[str, ...]]:
    """Replace each value by PAD tokens with probability ``r ** count``.

    One Bernoulli draw per value per call; lengths and order are preserved.
    """
    if not values:
        return []
    probs = drop_probabilities([c for _, c in values], r)
    hits = rng.random(len(values)) < probs
    return [
        (PAD,) * len(toks) if hit else tuple(toks)
        for (toks, _), hit in zip(values, hits)
    ]
