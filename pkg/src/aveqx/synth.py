"""Synthetic product-title corpus with a long-tailed attribute distribution.

Two disjoint alphabets keep ambiguous attribute names apart from their
values: values (and the names of non-ambiguous attributes) are built from
``VALUE_CONSONANTS`` while ambiguous names only use ``NAME_CONSONANTS`` and
always start and end with one of them, so they share no character n-gram
(n >= 2) and no token with any value.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

VALUE_CONSONANTS = "bdfgklmnprstvz"
NAME_CONSONANTS = "chjqwxy"
VOWELS = "aeiou"
GENERIC_POOL = 14


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_attributes: int = 200
    n_tuples: int = 20000
    value_vocab_size: int = 6000
    title_min: int = 6
    title_max: int = 18
    skew: float = 1.1
    value_skew: float = 1.0
    ambiguous_fraction: float = 0.4
    null_fraction: float = 0.2
    max_distractors: int = 2
    filler_vocab_size: int = 1000

    def __post_init__(self):
        for name in ("ambiguous_fraction", "null_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("n_attributes", "n_tuples", "value_vocab_size", "title_min", "filler_vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.title_max < self.title_min:
            raise ValueError("title_max must be >= title_min")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthAttribute:
    name: str
    ambiguous: bool
    weight: float
    values: list[tuple[str, ...]]
    value_probs: np.ndarray


class _Words:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()

    def syllables(self, consonants: str, k: int) -> str:
        cs = self.rng.choice(list(consonants), size=k)
        vs = self.rng.choice(list(VOWELS), size=k)
        return "".join(c + v for c, v in zip(cs, vs))

    def fresh(self, make) -> str:
        for _ in range(10000):
            w = make()
            if w not in self.used:
                self.used.add(w)
                return w
        raise RuntimeError("word space exhausted; lower the vocabulary sizes")


def zipf_probs(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -exponent
    return w / w.sum()


def build_schema(spec: SynthSpec, rng: np.random.Generator) -> tuple[list[SynthAttribute], list[str]]:
    words = _Words(rng)
    filler = [words.fresh(lambda: words.syllables(VALUE_CONSONANTS, int(rng.integers(2, 4)))) for _ in range(spec.filler_vocab_size)]
    generic = [
        words.fresh(lambda: words.syllables(NAME_CONSONANTS, int(rng.integers(1, 3))) + str(rng.choice(list(NAME_CONSONANTS))))
        for _ in range(GENERIC_POOL)
    ]

    weights = zipf_probs(spec.n_attributes, spec.skew)
    n_amb = int(round(spec.ambiguous_fraction * spec.n_attributes))
    ambiguous = np.zeros(spec.n_attributes, dtype=bool)
    ambiguous[rng.permutation(spec.n_attributes)[:n_amb]] = True

    share = np.sqrt(weights)
    n_values = np.maximum(2, np.round(spec.value_vocab_size * share / share.sum())).astype(int)

    names: set[str] = set()
    attrs = []
    for a in range(spec.n_attributes):
        stem = words.fresh(lambda: words.syllables(VALUE_CONSONANTS, 2))
        if ambiguous[a]:
            name = ""
            while not name or name in names:
                k = int(rng.integers(1, 3))
                name = " ".join(rng.choice(generic, size=k, replace=False))
                if rng.random() < 0.5:
                    name += f" {int(rng.integers(1, 10))}"
        else:
            name = stem
        names.add(name)
        values = []
        for _ in range(n_values[a]):
            head = words.fresh(lambda: words.syllables(VALUE_CONSONANTS, int(rng.integers(1, 3))) + stem)
            if rng.random() < 0.3:
                values.append((head, words.fresh(lambda: words.syllables(VALUE_CONSONANTS, 2))))
            else:
                values.append((head,))
        probs = zipf_probs(len(values), spec.value_skew)
        attrs.append(SynthAttribute(name, bool(ambiguous[a]), float(weights[a]), values, probs))
    return attrs, filler


def generate(spec: SynthSpec) -> Iterator[tuple[str, str, str]]:
    """Yield raw ``(title, attribute, value)`` triples; value is "NULL" when absent."""
    rng = np.random.default_rng(spec.seed)
    attrs, filler = build_schema(spec, rng)
    weights = np.array([a.weight for a in attrs])
    filler_probs = zipf_probs(len(filler), 1.0)

    def sample_value(a: SynthAttribute) -> tuple[str, ...]:
        return a.values[int(rng.choice(len(a.values), p=a.value_probs))]

    attr_draws = rng.choice(len(attrs), size=spec.n_tuples, p=weights)
    for ai in attr_draws:
        attr = attrs[ai]
        length = int(rng.integers(spec.title_min, spec.title_max + 1))
        chunks: list[tuple[str, ...]] = [(filler[i],) for i in rng.choice(len(filler), size=length, p=filler_probs)]
        inserts = []
        is_null = rng.random() < spec.null_fraction
        gold = None if is_null else sample_value(attr)
        if gold is not None:
            inserts.append(gold)
        for _ in range(int(rng.integers(0, spec.max_distractors + 1))):
            other = int(rng.choice(len(attrs), p=weights))
            if other != ai:
                inserts.append(sample_value(attrs[other]))
        for ins in inserts:
            chunks.insert(int(rng.integers(0, len(chunks) + 1)), ins)
        title = " ".join(tok for chunk in chunks for tok in chunk)
        yield title, attr.name, "NULL" if gold is None else " ".join(gold)


def write_tsv(spec: SynthSpec, path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as f:
        f.write("title\tattribute\tvalue\n")
        for title, attr, value in generate(spec):
            f.write(f"{title}\t{attr}\t{value}\n")
            n += 1
    return n
