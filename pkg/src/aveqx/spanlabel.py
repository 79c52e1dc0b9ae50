"""Convert cleaned tuples into begin/end position labels over title tokens.

Position 0 is the CLS slot; title tokens occupy positions 1..n.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .corpus import CleanTuple
from .tokenizer import tokenize

MAX_TITLE_TOKENS = 64


@dataclass(frozen=True)
class LabeledExample:
    title_tokens: tuple[str, ...]
    attribute_tokens: tuple[str, ...]
    gold_begin: int
    gold_end: int
    is_null: bool
    attribute: str = ""
    value_tokens: Optional[tuple[str, ...]] = None
    uid: str = ""

    def __post_init__(self):
        n = len(self.title_tokens)
        if not 0 <= self.gold_begin <= self.gold_end <= n:
            raise ValueError(f"bad span ({self.gold_begin}, {self.gold_end}) for title of {n} tokens")
        if self.is_null != ((self.gold_begin, self.gold_end) == (0, 0)):
            raise ValueError("is_null must coincide with the (0, 0) span")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["title_tokens"] = list(self.title_tokens)
        d["attribute_tokens"] = list(self.attribute_tokens)
        d["value_tokens"] = None if self.value_tokens is None else list(self.value_tokens)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledExample":
        vt = d.get("value_tokens")
        return cls(
            title_tokens=tuple(d["title_tokens"]),
            attribute_tokens=tuple(d["attribute_tokens"]),
            gold_begin=d["gold_begin"],
            gold_end=d["gold_end"],
            is_null=d["is_null"],
            attribute=d.get("attribute", ""),
            value_tokens=None if vt is None else tuple(vt),
            uid=d.get("uid", ""),
        )


@dataclass(frozen=True)
class EvalExample:
    """A test-time example: what the extractor sees plus the gold value.

    Unlike LabeledExample it exists for every tuple, including values that
    never occur in the title.
    """

    uid: str
    attribute: str
    title_tokens: tuple[str, ...]
    attribute_tokens: tuple[str, ...]
    value_tokens: Optional[tuple[str, ...]]

    @property
    def is_null(self) -> bool:
        return self.value_tokens is None


def find_span(title_tokens: Sequence[str], value_tokens: Sequence[str]) -> Optional[tuple[int, int]]:
    """Earliest exact token-sequence match of the value in the title, 1-indexed."""
    m = len(value_tokens)
    if m == 0:
        raise ValueError("empty value cannot be matched")
    first = value_tokens[0]
    for i in range(len(title_tokens) - m + 1):
        if title_tokens[i] == first and tuple(title_tokens[i : i + m]) == tuple(value_tokens):
            return i + 1, i + m
    return None


@dataclass
class DropReport:
    emitted: int = 0
    null: int = 0
    dropped: Counter = field(default_factory=Counter)

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def to_dict(self) -> dict:
        return {
            "emitted": self.emitted,
            "null": self.null,
            "dropped": dict(sorted(self.dropped.items())),
            "dropped_total": self.dropped_total,
        }


def to_labeled(
    t: CleanTuple,
    max_title: int = MAX_TITLE_TOKENS,
    uid: str = "",
    report: Optional[DropReport] = None,
) -> Optional[LabeledExample]:
    title = tuple(tokenize(t.title))[:max_title]
    attr = tuple(tokenize(t.attribute))
    if t.value is None:
        ex = LabeledExample(title, attr, 0, 0, True, t.attribute, None, uid)
        if report is not None:
            report.emitted += 1
            report.null += 1
        return ex
    value = tuple(tokenize(t.value))
    reason = None
    span = None
    if not value:
        reason = "empty_value"
    else:
        span = find_span(title, value)
        if span is None:
            full = tokenize(t.title)
            reason = "beyond_truncation" if len(full) > max_title and find_span(full, value) else "no_match"
    if reason is not None:
        if report is not None:
            report.dropped[reason] += 1
        return None
    if report is not None:
        report.emitted += 1
    return LabeledExample(title, attr, span[0], span[1], False, t.attribute, value, uid)


def convert(
    tuples: Iterable[CleanTuple], max_title: int = MAX_TITLE_TOKENS, prefix: str = ""
) -> tuple[list[LabeledExample], DropReport]:
    report = DropReport()
    out = []
    for i, t in enumerate(tuples):
        ex = to_labeled(t, max_title, uid=f"{prefix}{i}", report=report)
        if ex is not None:
            out.append(ex)
    return out, report


def to_eval_examples(
    tuples: Iterable[CleanTuple], max_title: int = MAX_TITLE_TOKENS, prefix: str = ""
) -> list[EvalExample]:
    out = []
    for i, t in enumerate(tuples):
        value = None if t.value is None else tuple(tokenize(t.value))
        out.append(
            EvalExample(
                uid=f"{prefix}{i}",
                attribute=t.attribute,
                title_tokens=tuple(tokenize(t.title))[:max_title],
                attribute_tokens=tuple(tokenize(t.attribute)),
                value_tokens=value,
            )
        )
    return out


def write_labeled(examples: Iterable[LabeledExample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_dict(), ensure_ascii=False) + "\n")


def read_labeled(path: str | Path) -> list[LabeledExample]:
    with Path(path).open(encoding="utf-8") as f:
        return [LabeledExample.from_dict(json.loads(line)) for line in f if line.strip()]
