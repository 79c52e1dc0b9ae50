"""Exact-match scoring with micro/macro aggregation and stratified breakdowns."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DataError
from .knowledge import KnowledgeBase
from .spanlabel import EvalExample
from .tokenizer import tokenize

SEEN_SEEN = "seen-attr-seen-value"
SEEN_UNSEEN = "seen-attr-unseen-value"
UNSEEN_ATTR = "unseen-attr"
CATEGORIES = (SEEN_SEEN, SEEN_UNSEEN, UNSEEN_ATTR)


@dataclass(frozen=True)
class Prediction:
    uid: str
    value: Optional[tuple[str, ...]]  # None is NULL


def prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    return p, r, harmonic(p, r)


def harmonic(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class Counts:
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.n_pred + other.n_pred, self.n_gold + other.n_gold)

    @property
    def prf(self) -> tuple[float, float, float]:
        return prf(self.tp, self.n_pred, self.n_gold)


@dataclass
class EvalReport:
    micro: tuple[float, float, float]
    macro: tuple[float, float, float]
    counts: Counts
    per_attribute: dict[str, Counts]
    excluded_attributes: int
    n_examples: int
    strict: bool = False
    buckets: dict[str, "EvalReport"] = field(default_factory=dict)
    categories: dict[str, "EvalReport"] = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def macro_attributes(self) -> int:
        return sum(1 for c in self.per_attribute.values() if c.n_gold > 0)

    def to_dict(self) -> dict:
        d = {
            "n_examples": self.n_examples,
            "strict": self.strict,
            "micro": dict(zip("prf", self.micro)),
            "macro": dict(zip("prf", self.macro)),
            "counts": {"tp": self.counts.tp, "n_pred": self.counts.n_pred, "n_gold": self.counts.n_gold},
            "macro_attributes": self.macro_attributes,
            "excluded_attributes": self.excluded_attributes,
            "per_attribute": {
                a: {"tp": c.tp, "n_pred": c.n_pred, "n_gold": c.n_gold, **dict(zip("prf", c.prf))}
                for a, c in sorted(self.per_attribute.items())
            },
        }
        if self.buckets:
            d["buckets"] = {k: v.to_dict() for k, v in self.buckets.items()}
        if self.categories:
            d["categories"] = {k: v.to_dict() for k, v in self.categories.items()}
        if self.notes:
            d["notes"] = self.notes
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def aggregate(per_attribute: Mapping[str, Counts], n_examples: int, strict: bool = False) -> EvalReport:
    total = sum(per_attribute.values(), Counts())
    scored = [c.prf for c in per_attribute.values() if c.n_gold > 0]
    if scored:
        mp = sum(p for p, _, _ in scored) / len(scored)
        mr = sum(r for _, r, _ in scored) / len(scored)
    else:
        mp = mr = 0.0
    return EvalReport(
        micro=total.prf,
        macro=(mp, mr, harmonic(mp, mr)),
        counts=total,
        per_attribute=dict(per_attribute),
        excluded_attributes=len(per_attribute) - len(scored),
        n_examples=n_examples,
        strict=strict,
    )


def _check_predictions(golds: Sequence[EvalExample], predictions: Iterable[Prediction]) -> dict[str, Prediction]:
    by_uid: dict[str, Prediction] = {}
    for p in predictions:
        if p.uid in by_uid:
            raise DataError(f"duplicate prediction for example {p.uid!r}")
        by_uid[p.uid] = p
    gold_ids = {g.uid for g in golds}
    if len(gold_ids) != len(golds):
        raise DataError("duplicate gold example ids")
    missing = gold_ids - by_uid.keys()
    if missing:
        raise DataError(f"{len(missing)} examples have no prediction, e.g. {sorted(missing)[:3]}")
    extra = by_uid.keys() - gold_ids
    if extra:
        raise DataError(f"{len(extra)} predictions for unknown examples, e.g. {sorted(extra)[:3]}")
    return by_uid


def example_counts(gold: EvalExample, pred: Prediction, strict: bool = False) -> Counts:
    g, v = gold.value_tokens, pred.value
    c = Counts()
    if g is not None:
        c.n_gold = 1
    if v is not None:
        c.n_pred = 1
        c.tp = int(g is not None and tuple(v) == tuple(g))
    elif strict and g is not None:
        c.n_pred = 1
    return c


def score(
    golds: Sequence[EvalExample],
    predictions: Iterable[Prediction],
    strict: bool = False,
    subset: Optional[Callable[[EvalExample], bool]] = None,
) -> EvalReport:
    """Exact-match P/R/F1.

    A NULL prediction on a NULL gold touches neither denominator. With
    ``strict`` a NULL prediction on a non-NULL gold also counts as a
    (wrong) extraction in the precision denominator.
    """
    by_uid = _check_predictions(golds, predictions)
    return _score(golds, by_uid, strict, subset)


def _score(golds, by_uid, strict, subset=None) -> EvalReport:
    per_attr: dict[str, Counts] = defaultdict(Counts)
    n = 0
    for g in golds:
        if subset is not None and not subset(g):
            continue
        n += 1
        per_attr[g.attribute] = per_attr[g.attribute] + example_counts(g, by_uid[g.uid], strict)
    return aggregate(per_attr, n, strict)


# ---------------------------------------------------------------- ambiguity


class HashedNgramEmbedder:
    """Signed feature hashing of character n-grams.

    Each token is wrapped as ``<tok>`` and contributes its 2- to 4-grams.
    Hashing uses blake2b so vectors are identical across processes.
    """

    def __init__(self, dim: int = 128, ngram_range: tuple[int, int] = (2, 4)):
        self.dim = dim
        self.ngram_range = ngram_range
        self._cache: dict[str, tuple[int, float]] = {}

    def _slot(self, gram: str) -> tuple[int, float]:
        hit = self._cache.get(gram)
        if hit is None:
            h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "little")
            hit = (h % self.dim, 1.0 if (h >> 63) & 1 else -1.0)
            self._cache[gram] = hit
        return hit

    def __call__(self, tokens: Sequence[str] | str) -> np.ndarray:
        if isinstance(tokens, str):
            tokens = tokenize(tokens)
        vec = np.zeros(self.dim)
        lo, hi = self.ngram_range
        for tok in tokens:
            w = f"<{tok}>"
            for n in range(lo, hi + 1):
                for i in range(len(w) - n + 1):
                    idx, sign = self._slot(w[i : i + n])
                    vec[idx] += sign
        return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def ambiguity_score(attribute: str, kb: KnowledgeBase, embedder: Callable) -> Optional[float]:
    """Cosine between the attribute-name vector and the mean of its value vectors.

    Returns None when the attribute has no seen value.
    """
    values = kb.values(attribute)
    if not values:
        return None
    mean = np.mean([embedder(list(v)) for v, _ in values], axis=0)
    return cosine(embedder(attribute), mean)


@dataclass
class AttributeProfile:
    attribute: str
    train_count: int
    ambiguity: float
    freq_bucket: str = ""
    sim_bucket: str = ""


def bucketize(profiles: Sequence[AttributeProfile]) -> dict[str, tuple[str, str]]:
    """Median split on training count and on ambiguity score; values at the median go high."""
    if not profiles:
        return {}
    count_median = statistics.median(p.train_count for p in profiles)
    sim_median = statistics.median(p.ambiguity for p in profiles)
    out = {}
    for p in profiles:
        p.freq_bucket = "lo" if p.train_count < count_median else "hi"
        p.sim_bucket = "lo" if p.ambiguity < sim_median else "hi"
        out[p.attribute] = (p.freq_bucket, p.sim_bucket)
    return out


def bucket_medians(profiles: Sequence[AttributeProfile]) -> dict[str, float]:
    return {
        "train_count_median": float(statistics.median(p.train_count for p in profiles)),
        "similarity_median": float(statistics.median(p.ambiguity for p in profiles)),
        "similarity_min": float(min(p.ambiguity for p in profiles)),
        "similarity_max": float(max(p.ambiguity for p in profiles)),
    }


def profile_attributes(
    attributes: Iterable[str],
    kb: KnowledgeBase,
    train_counts: Mapping[str, int],
    embedder: Optional[Callable] = None,
) -> list[AttributeProfile]:
    embedder = embedder or HashedNgramEmbedder()
    out = []
    for a in sorted(set(attributes)):
        amb = ambiguity_score(a, kb, embedder)
        if amb is not None:
            out.append(AttributeProfile(a, int(train_counts.get(a, 0)), amb))
    return out


# ---------------------------------------------------------------- categories


def categorize_example(example: EvalExample, train_kb: KnowledgeBase) -> str:
    """Seen/unseen attribute, then seen/unseen value for seen attributes.

    ``train_kb`` must be built from the training split alone. NULL golds on
    seen attributes count as seen-value.
    """
    if example.attribute not in train_kb.entries:
        return UNSEEN_ATTR
    if example.value_tokens is None or tuple(example.value_tokens) in train_kb.value_set(example.attribute):
        return SEEN_SEEN
    return SEEN_UNSEEN


def analyze(
    golds: Sequence[EvalExample],
    predictions: Iterable[Prediction],
    train_kb: KnowledgeBase,
    train_counts: Mapping[str, int],
    embedder: Optional[Callable] = None,
    strict: bool = False,
) -> EvalReport:
    """Overall report plus per-category and frequency x similarity bucket sub-reports."""
    by_uid = _check_predictions(golds, predictions)
    report = _score(golds, by_uid, strict)

    cats = {g.uid: categorize_example(g, train_kb) for g in golds}
    for cat in CATEGORIES:
        report.categories[cat] = _score(golds, by_uid, strict, lambda g, c=cat: cats[g.uid] == c)

    profiles = profile_attributes({g.attribute for g in golds}, train_kb, train_counts, embedder)
    assign = bucketize(profiles)
    analyzed = {g.uid for g in golds if g.attribute in assign}
    for fb in ("lo", "hi", "all"):
        for sb in ("lo", "hi", "all"):
            def keep(g, fb=fb, sb=sb):
                if g.uid not in analyzed:
                    return False
                f, s = assign[g.attribute]
                return fb in ("all", f) and sb in ("all", s)

            report.buckets[f"freq-{fb}/sim-{sb}"] = _score(golds, by_uid, strict, keep)

    report.notes = {
        "null_gold_on_seen_attribute": SEEN_SEEN,
        "category_counts": {c: sum(1 for v in cats.values() if v == c) for c in CATEGORIES},
        "analyzed_attributes": len(profiles),
        **(bucket_medians(profiles) if profiles else {}),
    }
    return report


# ---------------------------------------------------------------- comparison / output

METRIC_KEYS = ("macro_p", "macro_r", "macro_f1", "micro_p", "micro_r", "micro_f1")


def _metrics(r: EvalReport) -> dict[str, float]:
    return dict(zip(METRIC_KEYS, (*r.macro, *r.micro)))


def compare_kb(base: EvalReport, merged: EvalReport) -> dict[str, dict[str, float]]:
    """Per-category metric deltas (merged minus base), plus the overall row."""
    rows = {"all": (base, merged)}
    for cat in CATEGORIES:
        if cat in base.categories and cat in merged.categories:
            rows[cat] = (base.categories[cat], merged.categories[cat])
    out = {}
    for name, (b, m) in rows.items():
        mb, mm = _metrics(b), _metrics(m)
        out[name] = {k: mm[k] - mb[k] for k in METRIC_KEYS}
    return out


def format_table(rows: Mapping[str, EvalReport | Mapping[str, float]], title: str = "") -> str:
    """Aligned text table: macro P/R/F1 and micro P/R/F1 in percent."""
    header = f"{'':<34}{'macro P':>9}{'R':>8}{'F1':>8}{'micro P':>10}{'R':>8}{'F1':>8}{'n':>8}"
    lines = [title] if title else []
    lines += [header, "-" * len(header)]
    for name, r in rows.items():
        if isinstance(r, EvalReport):
            m = _metrics(r)
            n = str(r.n_examples)
        else:
            m, n = r, ""
        vals = [100 * m[k] for k in METRIC_KEYS]
        lines.append(
            f"{name:<34}{vals[0]:>9.2f}{vals[1]:>8.2f}{vals[2]:>8.2f}{vals[3]:>10.2f}{vals[4]:>8.2f}{vals[5]:>8.2f}{n:>8}"
        )
    return "\n".join(lines) + "\n"


def format_report(report: EvalReport, title: str = "") -> str:
    rows: dict[str, EvalReport] = {"all": report}
    rows.update(report.categories)
    rows.update(report.buckets)
    return format_table(rows, title)


def buckets_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bucket", "n_examples", *METRIC_KEYS])
    for name, r in report.buckets.items():
        w.writerow([name, r.n_examples, *(f"{v:.6f}" for v in _metrics(r).values())])
    return buf.getvalue()


def write_predictions(predictions: Iterable[Prediction], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for p in predictions:
            value = None if p.value is None else " ".join(p.value)
            f.write(json.dumps({"uid": p.uid, "value": value}, ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> list[Prediction]:
    out = []
    with Path(path).open(encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                v = rec["value"]
                out.append(Prediction(str(rec["uid"]), None if v is None else tuple(v.split(" "))))
    return out


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    if not values:
        return math.nan, math.nan
    return float(np.mean(values)), float(np.std(values))
