"""``aveqx`` command line: one subcommand per pipeline stage plus ``run``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
The work directory defaults to ``$AVEQX_WORKDIR`` (or ``./work``).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .baseline import predict_dictionary
from .corpus import SplitDataset, clean_corpus, dataset_stats, read_clean, read_raw, split, write_clean
from .errors import ConfigError, DataError, TrainingDiverged
from .evaluation import (
    analyze,
    buckets_csv,
    format_report,
    read_predictions,
    score,
    write_predictions,
)
from .knowledge import DEFAULT_DROPOUT_RATE, KnowledgeBase, build_kb, merge
from .model import TrainConfig, load_params, save_params, train
from .pipeline import (
    ALL_VARIANTS,
    DICTIONARY,
    ExperimentConfig,
    PreparedData,
    Variant,
    epoch_batches,
    format_summary,
    manifest,
    micro_f1,
    predict_model,
    prepare,
    run_trial,
    summary_from_dicts,
    write_json,
)
from .spanlabel import MAX_TITLE_TOKENS, convert, to_eval_examples, write_labeled
from .synth import SynthSpec, write_tsv
from .tokenizer import Vocabulary

log = logging.getLogger("aveqx")

WORKDIR_ENV = "AVEQX_WORKDIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def workdir(args) -> Path:
    path = Path(args.workdir or os.environ.get(WORKDIR_ENV) or "work")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _out(args, name: str) -> Path:
    path = Path(args.out) if getattr(args, "out", None) else workdir(args) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(output: Path, command: str, config: dict, inputs: Sequence[str | Path]) -> Path:
    """``<output>.manifest.json`` for files, ``<output>/manifest.json`` for directories."""
    target = output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")
    hashes = {str(p): sha256_file(p) for p in inputs}
    write_json({"command": command, **manifest(config, hashes)}, target)
    return target


def _jsonable(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "workdir", "verbose")}


# ---------------------------------------------------------------- stages


def cmd_synth(args) -> int:
    spec = SynthSpec(**{f.name: getattr(args, f.name) for f in fields(SynthSpec)})
    out = _out(args, "raw.tsv")
    n = write_tsv(spec, out)
    write_manifest(out, "synth", spec.to_dict(), [])
    print(f"wrote {n} tuples to {out}")
    return EXIT_OK


def stats_table(stats: dict) -> str:
    rows = [
        ("# tuples", stats["tuples"]),
        ("# NULL tuples", stats["null_tuples"]),
        ("# unique attributes", stats["unique_attributes"]),
        ("# unique values", stats["unique_values"]),
        ("# unique attribute-value pairs", stats["unique_attribute_value_pairs"]),
    ]
    return "".join(f"{name:<32}{value:>10}\n" for name, value in rows)


def cmd_clean(args) -> int:
    out = _out(args, "clean.jsonl")
    tuples, cstats = clean_corpus(read_raw(args.raw))
    write_clean(tuples, out)
    stats = {**dataset_stats(tuples), **cstats.to_dict()}
    write_json(stats, out.with_name(out.name + ".stats.json"))
    write_manifest(out, "clean", {}, [args.raw])
    sys.stdout.write(stats_table(stats))
    print(f"duplicates removed: {cstats.duplicates_removed}, total changes: {cstats.changes}")
    return EXIT_OK


def cmd_split(args) -> int:
    out = Path(args.out) if args.out else workdir(args) / "split"
    out.mkdir(parents=True, exist_ok=True)
    ds = split(read_clean(args.clean), args.seed, args.stratified)
    for name in ("train", "dev", "test"):
        write_clean(getattr(ds, name), out / f"{name}.jsonl")
    write_json(ds.manifest(), out / "split.json")
    write_manifest(out, "split", ds.manifest(), [args.clean])
    print("train/dev/test: {}/{}/{}".format(*ds.sizes()))
    return EXIT_OK


def cmd_build_kb(args) -> int:
    out = _out(args, "kb.jsonl")
    kb = build_kb(read_clean(args.train))
    inputs = [args.train]
    if args.extra:
        kb = merge(kb, read_clean(args.extra), tag=args.tag)
        inputs.append(args.extra)
    kb.save(out)
    write_manifest(out, "build-kb", {"tag": args.tag if args.extra else None}, inputs)
    print(f"{len(kb.attributes())} attributes, {kb.pair_count()} attribute-value pairs ({kb.source})")
    return EXIT_OK


def cmd_convert(args) -> int:
    out = _out(args, "labeled.jsonl")
    examples, report = convert(read_clean(args.input), args.max_title, prefix=args.prefix)
    write_labeled(examples, out)
    write_json(report.to_dict(), out.with_name(out.name + ".drops.json"))
    write_manifest(out, "convert", {"max_title": args.max_title, "prefix": args.prefix}, [args.input])
    print(f"emitted {report.emitted} ({report.null} NULL), dropped {report.dropped_total}")
    return EXIT_OK


def _load_split(split_dir: Path, min_count: int, max_title: int) -> PreparedData:
    parts = {name: read_clean(split_dir / f"{name}.jsonl") for name in ("train", "dev", "test")}
    meta = json.loads((split_dir / "split.json").read_text()) if (split_dir / "split.json").exists() else {}
    ds = SplitDataset(parts["train"], parts["dev"], parts["test"], meta.get("seed", -1), meta.get("stratified", False))
    return prepare(ds, min_count=min_count, max_title=max_title)


def cmd_train(args) -> int:
    split_dir = Path(args.split_dir)
    data = _load_split(split_dir, args.min_count, MAX_TITLE_TOKENS)
    if args.kb:
        data.kb = KnowledgeBase.load(args.kb)
    variant = Variant.parse(args.variant)
    tc = TrainConfig(args.lr, args.epochs, args.batch_size, args.seed, args.d)
    select = None
    if data.dev_examples and not args.no_select:
        def select(params):
            return micro_f1(data.dev_examples, predict_model(params, data.dev_examples, data.kb, data.vocab, variant))

    result = train(
        lambda epoch, rng: epoch_batches(data, variant, args.batch_size, args.r, rng), len(data.vocab), tc, select=select
    )
    out = Path(args.out) if args.out else workdir(args) / "model"
    out.mkdir(parents=True, exist_ok=True)
    data.vocab.save(out / "vocab.txt")
    data.kb.save(out / "kb.jsonl")
    save_params(result.params, data.vocab, out / "params.bin")
    log_record = {
        "variant": variant.name,
        "losses": result.losses,
        "dev_micro_f1": result.dev_scores,
        "best_epoch": result.best_epoch,
    }
    write_json(log_record, out / "train.json")
    inputs = [split_dir / "train.jsonl", split_dir / "dev.jsonl"] + ([args.kb] if args.kb else [])
    write_manifest(out, "train", _jsonable(args), inputs)
    print(f"losses: {' '.join(f'{x:.4f}' for x in result.losses)}; best epoch {result.best_epoch}")
    return EXIT_OK


def cmd_predict(args) -> int:
    examples = to_eval_examples(read_clean(args.input))
    model_dir = Path(args.model) if args.model else None
    kb_path = args.kb or (model_dir / "kb.jsonl" if model_dir else None)
    if kb_path is None:
        raise UsageError("predict needs --kb or --model")
    kb = KnowledgeBase.load(kb_path)
    inputs = [args.input, kb_path]
    if args.variant == DICTIONARY:
        preds = predict_dictionary(examples, kb)
    else:
        if model_dir is None:
            raise UsageError(f"variant {args.variant!r} needs --model")
        vocab = Vocabulary.load(model_dir / "vocab.txt")
        params = load_params(model_dir / "params.bin", vocab)
        preds = predict_model(params, examples, kb, vocab, Variant.parse(args.variant))
        inputs.append(model_dir / "params.bin")
    out = _out(args, "predictions.jsonl")
    write_predictions(preds, out)
    write_manifest(out, "predict", _jsonable(args), inputs)
    print(f"wrote {len(preds)} predictions to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    golds = to_eval_examples(read_clean(args.gold))
    report = score(golds, read_predictions(args.pred), strict=args.strict)
    out = _out(args, "report.json")
    out.write_text(report.to_json(), encoding="utf-8")
    write_manifest(out, "evaluate", {"strict": args.strict}, [args.gold, args.pred])
    sys.stdout.write(format_report(report))
    print(f"macro excludes {report.excluded_attributes} NULL-only attributes")
    return EXIT_OK


def cmd_analyze(args) -> int:
    train_tuples = read_clean(args.train)
    kb = build_kb(train_tuples)
    golds = to_eval_examples(read_clean(args.gold))
    counts = Counter(t.attribute for t in train_tuples)
    report = analyze(golds, read_predictions(args.pred), kb, counts, strict=args.strict)
    out = _out(args, "analysis.json")
    out.write_text(report.to_json(), encoding="utf-8")
    out.with_name(out.stem + ".buckets.csv").write_text(buckets_csv(report), encoding="utf-8")
    write_manifest(out, "analyze", {"strict": args.strict}, [args.gold, args.pred, args.train])
    sys.stdout.write(format_report(report))
    return EXIT_OK


# ---------------------------------------------------------------- run


def experiment_config(args) -> ExperimentConfig:
    seeds = tuple(args.seeds) if args.seeds else tuple(range(args.trials))
    return ExperimentConfig(
        variants=tuple(args.variants),
        seeds=seeds,
        split_seed=args.split_seed,
        stratified=args.stratified,
        r=args.r,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        d=args.d,
        min_count=args.min_count,
        select_on_dev=not args.no_select,
        strict=args.strict,
    )


def run_experiment(config: ExperimentConfig, data_path: Path, out: Path) -> dict:
    """Run every (variant, seed) trial that has no report yet, then summarize all of them."""
    out.mkdir(parents=True, exist_ok=True)
    data = prepare(read_clean(data_path), config.split_seed, config.stratified, config.min_count, config.max_title)
    write_json(data.split.manifest(), out / "split.json")
    write_json(data.drop_report.to_dict(), out / "train_drops.json")
    write_manifest(out, "run", config.to_dict(), [data_path])

    rows = []
    for variant in config.variants:
        for seed in config.seeds:
            trial_dir = out / variant / f"seed-{seed}"
            report_path = trial_dir / "report.json"
            if report_path.exists():
                log.info("%s seed %d: report exists, skipping", variant, seed)
            else:
                log.info("%s seed %d: training", variant, seed)
                result = run_trial(data, variant, seed, config)
                trial_dir.mkdir(parents=True, exist_ok=True)
                write_predictions(result.predictions, trial_dir / "predictions.jsonl")
                write_json({"losses": result.losses, "best_epoch": result.best_epoch}, trial_dir / "train.json")
                # the report is written last; its presence marks the trial as done
                tmp = report_path.with_suffix(".tmp")
                tmp.write_text(result.report.to_json(), encoding="utf-8")
                tmp.replace(report_path)
            rows.append((variant, seed, json.loads(report_path.read_text(encoding="utf-8"))))
    summ = summary_from_dicts(rows)
    write_json(summ, out / "summary.json")
    (out / "summary.txt").write_text(format_summary(summ), encoding="utf-8")
    return summ


def cmd_run(args) -> int:
    config = experiment_config(args)
    out = Path(args.out) if args.out else workdir(args) / "run"
    summ = run_experiment(config, Path(args.data), out)
    sys.stdout.write(format_summary(summ))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    d = ExperimentConfig()
    p.add_argument("--r", type=float, default=DEFAULT_DROPOUT_RATE, help="knowledge dropout base rate")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--d", type=int, default=d.d, help="embedding dimension")
    p.add_argument("--min-count", type=int, default=d.min_count, help="vocabulary frequency cutoff")
    p.add_argument("--no-select", action="store_true", help="keep the last epoch instead of the best dev epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aveqx", description="Knowledge-driven query expansion for attribute value extraction.")
    parser.add_argument("--version", action="version", version=f"aveqx {__version__}")
    parser.add_argument("--workdir", help=f"output directory (default ${WORKDIR_ENV} or ./work)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic raw corpus")
    s = SynthSpec()
    for f in fields(SynthSpec):
        p.add_argument("--" + f.name.replace("_", "-"), type=type(getattr(s, f.name)), default=getattr(s, f.name))
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("clean", help="clean and deduplicate raw tuples")
    p.add_argument("raw")
    p.add_argument("--out")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("split", help="seeded train/dev/test split")
    p.add_argument("clean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("build-kb", help="attribute -> (value, count) store")
    p.add_argument("train")
    p.add_argument("--extra", help="cleaned tuples to merge in (e.g. the dev split)")
    p.add_argument("--tag", default="dev")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("convert", help="span-labeled training examples")
    p.add_argument("input")
    p.add_argument("--max-title", type=int, default=MAX_TITLE_TOKENS)
    p.add_argument("--prefix", default="")
    p.add_argument("--out")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train the pointer model on a split directory")
    p.add_argument("split_dir")
    p.add_argument("--variant", default="vals+drop+mixing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kb", help="knowledge base (default: built from the training split)")
    _add_training_flags(p)
    p.add_argument("--out", help="model directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict values for cleaned tuples")
    p.add_argument("input")
    p.add_argument("--variant", default="vals+drop+mixing", help=f"a model variant or {DICTIONARY!r}")
    p.add_argument("--model", help="model directory written by train")
    p.add_argument("--kb", help="knowledge base (default: the one stored with the model)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="exact-match micro/macro scores")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--strict", action="store_true", help="count NULL predictions on non-NULL golds as predictions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="scores by value category and frequency x ambiguity bucket")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--train", required=True, help="cleaned training split")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="full experiment: every variant x seed, then a mean/std summary")
    p.add_argument("data", help="cleaned JSONL")
    p.add_argument("--variants", nargs="+", default=list(ExperimentConfig().variants),
                   help=f"any of {', '.join(ALL_VARIANTS)} or {DICTIONARY}")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--strict", action="store_true")
    _add_training_flags(p)
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"aveqx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"aveqx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"aveqx: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"aveqx: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
