"""End-to-end experiment: split, KB, labels, training, prediction, scoring."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baseline import predict_dictionary
from .corpus import CleanTuple, SplitDataset, split
from .errors import ConfigError
from .evaluation import EvalReport, Prediction, _check_predictions, _score, analyze, summarize
from .knowledge import DEFAULT_DROPOUT_RATE, KnowledgeBase, build_kb
from .model import PointerModelParams, TrainConfig, predict_batch, train
from .querybuild import (
    PLAIN_QUERY_BUDGET,
    VALS_QUERY_BUDGET,
    EncodedInput,
    build_training_inputs,
    eval_inputs,
)
from .spanlabel import MAX_TITLE_TOKENS, DropReport, EvalExample, LabeledExample, convert, to_eval_examples
from .tokenizer import Vocabulary, build_vocab, tokenize

log = logging.getLogger(__name__)

DICTIONARY = "dictionary"


@dataclass(frozen=True)
class Variant:
    vals: bool = False
    drop: bool = False
    mixing: bool = False

    def __post_init__(self):
        if (self.drop or self.mixing) and not self.vals:
            raise ConfigError("drop and mixing require vals")

    @property
    def name(self) -> str:
        flags = [f for f in ("vals", "drop", "mixing") if getattr(self, f)]
        return "+".join(flags) if flags else "plain"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        parts = [p for p in text.replace(" ", "").split("+") if p]
        if parts == ["plain"]:
            return cls()
        unknown = set(parts) - {"vals", "drop", "mixing"}
        if unknown or not parts:
            raise ConfigError(f"unknown variant {text!r}")
        return cls(vals="vals" in parts, drop="drop" in parts, mixing="mixing" in parts)


ALL_VARIANTS = ("plain", "vals", "vals+drop", "vals+mixing", "vals+drop+mixing")


@dataclass(frozen=True)
class ExperimentConfig:
    variants: tuple[str, ...] = ("plain", "vals+drop+mixing")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    split_seed: int = 0
    stratified: bool = False
    r: float = DEFAULT_DROPOUT_RATE
    max_title: int = MAX_TITLE_TOKENS
    plain_budget: int = PLAIN_QUERY_BUDGET
    vals_budget: int = VALS_QUERY_BUDGET
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 1e-2
    d: int = 64
    min_count: int = 2
    select_on_dev: bool = True
    strict: bool = False

    def __post_init__(self):
        for v in self.variants:
            if v != DICTIONARY:
                Variant.parse(v)
        if not self.seeds:
            raise ConfigError("at least one trial seed is required")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if not 0.0 <= self.r <= 1.0:
            raise ConfigError("dropout rate must be in [0, 1]")
        if (self.max_title, self.plain_budget, self.vals_budget) != (
            MAX_TITLE_TOKENS,
            PLAIN_QUERY_BUDGET,
            VALS_QUERY_BUDGET,
        ):
            log.info("non-default budgets: title=%d plain=%d vals=%d", self.max_title, self.plain_budget, self.vals_budget)

    @property
    def trials(self) -> int:
        return len(self.seeds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = list(self.variants)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class PreparedData:
    split: SplitDataset
    kb: KnowledgeBase
    vocab: Vocabulary
    train_examples: list[LabeledExample]
    dev_examples: list[EvalExample]
    test_examples: list[EvalExample]
    train_counts: dict[str, int]
    drop_report: DropReport


def build_vocabulary(train: Sequence[CleanTuple], min_count: int = 1) -> Vocabulary:
    """Counts title and attribute tokens of the training split."""
    counts: Counter = Counter()
    for t in train:
        counts.update(tokenize(t.title))
        counts.update(tokenize(t.attribute))
    return build_vocab(counts, min_count)


def prepare(
    tuples: Sequence[CleanTuple] | SplitDataset,
    split_seed: int = 0,
    stratified: bool = False,
    min_count: int = 2,
    max_title: int = MAX_TITLE_TOKENS,
) -> PreparedData:
    ds = tuples if isinstance(tuples, SplitDataset) else split(tuples, split_seed, stratified)
    kb = build_kb(ds.train)
    train_examples, report = convert(ds.train, max_title, prefix="train-")
    return PreparedData(
        split=ds,
        kb=kb,
        vocab=build_vocabulary(ds.train, min_count),
        train_examples=train_examples,
        dev_examples=to_eval_examples(ds.dev, max_title, prefix="dev-"),
        test_examples=to_eval_examples(ds.test, max_title, prefix="test-"),
        train_counts=dict(Counter(t.attribute for t in ds.train)),
        drop_report=report,
    )


def spans_to_predictions(examples: Sequence[EvalExample], spans: Sequence[tuple[int, int]]) -> list[Prediction]:
    out = []
    for ex, (b, e) in zip(examples, spans):
        out.append(Prediction(ex.uid, None if b == 0 else tuple(ex.title_tokens[b - 1 : e])))
    return out


def predict_model(
    params: PointerModelParams,
    examples: Sequence[EvalExample],
    kb: KnowledgeBase,
    vocab: Vocabulary,
    variant: Variant,
) -> list[Prediction]:
    inputs = eval_inputs(examples, kb, vocab, vals=variant.vals, mixing=variant.mixing)
    return spans_to_predictions(examples, predict_batch(params, inputs))


def epoch_batches(
    data: PreparedData,
    variant: Variant,
    batch_size: int,
    r: float,
    epoch_rng: np.random.Generator,
) -> list[list[EncodedInput]]:
    """One epoch of encoded batches; mixing halves the number of source examples per batch."""
    per_batch = batch_size // 2 if variant.mixing else batch_size
    order = epoch_rng.permutation(len(data.train_examples))
    batches = []
    for i in range(0, len(order), per_batch):
        group = [data.train_examples[j] for j in order[i : i + per_batch]]
        batches.append(
            build_training_inputs(
                group, data.kb, data.vocab, vals=variant.vals, drop=variant.drop, mixing=variant.mixing, r=r, rng=epoch_rng
            )
        )
    return batches


def micro_f1(golds: Sequence[EvalExample], predictions: Sequence[Prediction]) -> float:
    return _score(golds, _check_predictions(golds, predictions), False).micro[2]


@dataclass
class TrialResult:
    variant: str
    seed: int
    report: EvalReport
    predictions: list[Prediction]
    losses: list[float] = field(default_factory=list)
    best_epoch: int = -1


def run_trial(data: PreparedData, variant_name: str, seed: int, config: ExperimentConfig) -> TrialResult:
    if variant_name == DICTIONARY:
        preds = predict_dictionary(data.test_examples, data.kb)
        report = analyze(data.test_examples, preds, data.kb, data.train_counts, strict=config.strict)
        return TrialResult(variant_name, seed, report, preds)

    variant = Variant.parse(variant_name)
    tc = TrainConfig(
        learning_rate=config.learning_rate, epochs=config.epochs, batch_size=config.batch_size, seed=seed, d=config.d
    )
    select = None
    if config.select_on_dev and data.dev_examples:
        def select(params):
            preds = predict_model(params, data.dev_examples, data.kb, data.vocab, variant)
            return micro_f1(data.dev_examples, preds)

    result = train(
        lambda epoch, rng: epoch_batches(data, variant, config.batch_size, config.r, rng),
        len(data.vocab),
        tc,
        select=select,
    )
    preds = predict_model(result.params, data.test_examples, data.kb, data.vocab, variant)
    report = analyze(data.test_examples, preds, data.kb, data.train_counts, strict=config.strict)
    return TrialResult(variant_name, seed, report, preds, result.losses, result.best_epoch)


def summary(results: Sequence[TrialResult]) -> dict:
    """Mean and std over trials for overall, category and bucket scores per variant."""
    return summary_from_dicts([(r.variant, r.seed, r.report.to_dict()) for r in results])


def summary_from_dicts(rows: Sequence[tuple[str, int, dict]]) -> dict:
    """Same as ``summary`` but over serialized reports, so resumed runs can be summarized."""
    by_variant: dict[str, list[tuple[int, dict]]] = {}
    for variant, seed, rep in rows:
        by_variant.setdefault(variant, []).append((seed, rep))
    out = {}
    for name, trials in by_variant.items():
        reports = [rep for _, rep in trials]
        sections = {"all": reports}
        for group in ("categories", "buckets"):
            for key in reports[0].get(group, {}):
                sections[key] = [rep[group][key] for rep in reports]
        rows_out: dict[str, dict] = {}
        for section, reps in sections.items():
            row = {}
            for label in "prf":
                for kind in ("macro", "micro"):
                    m, s = summarize([rep[kind][label] for rep in reps])
                    row[f"{kind}_{'f1' if label == 'f' else label}"] = {"mean": m, "std": s}
            rows_out[section] = row
        out[name] = {"seeds": [seed for seed, _ in trials], "sections": rows_out}
    return out


def format_summary(summ: dict) -> str:
    """Plain-text mean (std) table in percent, one block per variant."""
    lines = []
    for name, block in summ.items():
        lines.append(f"{name}  (seeds {', '.join(map(str, block['seeds']))})")
        for section, row in block["sections"].items():
            cells = [
                f"{100 * row[k]['mean']:6.2f} ({100 * row[k]['std']:.2f})"
                for k in ("macro_p", "macro_r", "macro_f1", "micro_p", "micro_r", "micro_f1")
            ]
            lines.append(f"  {section:<30}" + "  ".join(cells))
        lines.append("")
    header = f"  {'':<30}" + "  ".join(f"{h:>13}" for h in ("macro P", "macro R", "macro F1", "micro P", "micro R", "micro F1"))
    return header + "\n" + "\n".join(lines)


def manifest(config: dict, inputs: dict[str, str]) -> dict:
    import platform

    return {
        "package": "aveqx",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config,
        "inputs_sha256": inputs,
    }


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
