"""Raw tuple parsing, cleaning, deduplication and train/dev/test splitting."""
from __future__ import annotations

import html
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import DataError

NULL_LITERAL = "NULL"

_WS_RE = re.compile(r"\s+")
_LETTER_DIGIT_RE = re.compile(r"(?<=[^\W\d_])(?=\d)|(?<=\d)(?=[^\W\d_])")
_MAX_UNESCAPE_ROUNDS = 16


@dataclass(frozen=True)
class RawTuple:
    title: str
    attribute: str
    value: str


@dataclass(frozen=True)
class CleanTuple:
    """A normalized tuple. ``value is None`` is the NULL sentinel."""

    title: str
    attribute: str
    value: Optional[str]

    @property
    def is_null(self) -> bool:
        return self.value is None

    def to_json(self) -> str:
        return json.dumps(
            {"title": self.title, "attribute": self.attribute, "value": self.value},
            ensure_ascii=False,
        )


@dataclass
class SplitDataset:
    train: list[CleanTuple]
    dev: list[CleanTuple]
    test: list[CleanTuple]
    seed: int
    stratified: bool = False

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.dev), len(self.test)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "stratified": self.stratified,
            "counts": {"train": len(self.train), "dev": len(self.dev), "test": len(self.test)},
        }


# ---------------------------------------------------------------- cleaning


def clean_text(raw: str) -> str:
    """Decode HTML entities and normalize whitespace.

    Entities are decoded until a fixpoint so double-escaped input such as
    ``&amp;quot;`` ends up as ``"`` and the function stays idempotent.
    Unknown entity names are left as they are.
    """
    text = raw
    for _ in range(_MAX_UNESCAPE_ROUNDS):
        decoded = html.unescape(text)
        if decoded == text:
            break
        text = decoded
    return _WS_RE.sub(" ", text).strip()


def normalize_attribute(attr: str) -> str:
    """Lower-case, split letter/digit boundaries and drop trailing colons.

    >>> normalize_attribute("feature1:")
    'feature 1'
    """
    text = attr.lower()
    while True:
        stripped = text.rstrip().rstrip(":").rstrip()
        if stripped == text:
            break
        text = stripped
    text = _LETTER_DIGIT_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def clean_tuple(raw: RawTuple) -> CleanTuple:
    value = clean_text(raw.value)
    return CleanTuple(
        title=clean_text(raw.title),
        attribute=normalize_attribute(clean_text(raw.attribute)),
        value=None if value == NULL_LITERAL else value,
    )


def dedup(tuples: Iterable[CleanTuple]) -> list[CleanTuple]:
    seen: set[CleanTuple] = set()
    out = []
    for t in tuples:
        if t in seen:
            continue
        seen.add(t)
        out.append(t)
    return out


@dataclass
class CleanStats:
    """Counts reported by the cleaning step, laid out like a dataset table."""

    input_tuples: int = 0
    duplicates_removed: int = 0
    changed_titles: int = 0
    changed_attributes: int = 0
    changed_values: int = 0
    skipped_lines: int = 0
    table: dict = field(default_factory=dict)

    @property
    def changes(self) -> int:
        return (
            self.duplicates_removed
            + self.changed_titles
            + self.changed_attributes
            + self.changed_values
        )

    def to_dict(self) -> dict:
        return {
            "input_tuples": self.input_tuples,
            "duplicates_removed": self.duplicates_removed,
            "changed_titles": self.changed_titles,
            "changed_attributes": self.changed_attributes,
            "changed_values": self.changed_values,
            "skipped_lines": self.skipped_lines,
            "total_changes": self.changes,
            **self.table,
        }


def dataset_stats(tuples: Sequence[CleanTuple]) -> dict:
    """Tuple/NULL/pair/attribute/value counts in the row order of Table-1 style reports."""
    values = {t.value for t in tuples if t.value is not None}
    pairs = {(t.attribute, t.value) for t in tuples if t.value is not None}
    return {
        "tuples": len(tuples),
        "null_tuples": sum(1 for t in tuples if t.value is None),
        "unique_attribute_value_pairs": len(pairs),
        "unique_attributes": len({t.attribute for t in tuples}),
        "unique_values": len(values),
    }


def clean_corpus(raw: Iterable[RawTuple]) -> tuple[list[CleanTuple], CleanStats]:
    stats = CleanStats()
    cleaned = []
    for r in raw:
        stats.input_tuples += 1
        c = clean_tuple(r)
        stats.changed_titles += c.title != r.title
        stats.changed_attributes += c.attribute != r.attribute
        stats.changed_values += (c.value if c.value is not None else NULL_LITERAL) != r.value
        cleaned.append(c)
    out = dedup(cleaned)
    stats.duplicates_removed = len(cleaned) - len(out)
    stats.table = dataset_stats(out)
    return out, stats


# ---------------------------------------------------------------- splitting


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014).

    Chosen because it is a few lines in any language, which keeps the
    split reproducible outside Python.
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        # modulo bias is < 2**-40 for bound < 2**24
        return self.next() % bound


def fisher_yates(items: Sequence, seed: int) -> list:
    out = list(items)
    rng = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_sizes(n: int) -> tuple[int, int, int]:
    """7:1:2 sizes: dev and test rounded half-up, train takes the rest."""
    dev = math.floor(n / 10 + 0.5)
    test = math.floor(n / 5 + 0.5)
    return n - dev - test, dev, test


def _spread(n: int, sizes: tuple[int, int, int]) -> list[int]:
    # largest-deficit apportionment: every prefix stays within one item of its quota
    assigned = [0, 0, 0]
    labels = []
    for i in range(1, n + 1):
        deficits = [i * s / n - a for s, a in zip(sizes, assigned)]
        k = max(range(3), key=lambda j: (deficits[j], -j))
        assigned[k] += 1
        labels.append(k)
    return labels


def split(tuples: Sequence[CleanTuple], seed: int, stratified: bool = False) -> SplitDataset:
    """Seeded shuffle followed by a 70/10/20 partition.

    With ``stratified`` the shuffled tuples are grouped by attribute and dealt
    out proportionally, so every attribute is spread across the three parts.
    """
    n = len(tuples)
    if n < 10:
        raise DataError(f"need at least 10 tuples to split 7:1:2, got {n}")
    order = fisher_yates(tuples, seed)
    sizes = split_sizes(n)
    parts: list[list[CleanTuple]] = [[], [], []]
    if not stratified:
        a, b, _ = sizes
        parts = [order[:a], order[a : a + b], order[a + b :]]
    else:
        order = sorted(order, key=lambda t: t.attribute)  # stable: keeps shuffle within groups
        for t, k in zip(order, _spread(n, sizes)):
            parts[k].append(t)
    return SplitDataset(*parts, seed=seed, stratified=stratified)


# ---------------------------------------------------------------- I/O


def _sniff_delimiter(line: str) -> str:
    return "\x01" if "\x01" in line else "\t"


def read_raw(path: str | Path) -> Iterator[RawTuple]:
    """Read TSV (tab or \\x01 separated) or JSONL raw tuples.

    Lines that cannot be parsed into three non-empty fields raise DataError.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.lstrip().startswith("{"):
                try:
                    rec = json.loads(line)
                    fields = [rec["title"], rec["attribute"], rec["value"]]
                except (ValueError, KeyError) as exc:
                    raise DataError(f"{path}:{lineno}: bad JSONL record: {exc}") from exc
                if fields[2] is None:
                    fields[2] = NULL_LITERAL
            else:
                fields = line.split(_sniff_delimiter(line))
                if lineno == 1 and [x.strip().lower() for x in fields] == ["title", "attribute", "value"]:
                    continue
            if len(fields) != 3 or not all(isinstance(x, str) and x.strip() for x in fields):
                raise DataError(f"{path}:{lineno}: expected 3 non-empty fields, got {fields!r}")
            yield RawTuple(*fields)


def write_clean(tuples: Iterable[CleanTuple], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for t in tuples:
            f.write(t.to_json() + "\n")


def read_clean(path: str | Path) -> list[CleanTuple]:
    out = []
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(CleanTuple(rec["title"], rec["attribute"], rec["value"]))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: bad cleaned record: {exc}") from exc
    return out
