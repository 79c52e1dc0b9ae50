from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import worked_metrics as wm
from aveqx.corpus import CleanTuple
from aveqx.errors import DataError
from aveqx.evaluation import (
    SEEN_SEEN,
    SEEN_UNSEEN,
    UNSEEN_ATTR,
    AttributeProfile,
    HashedNgramEmbedder,
    Prediction,
    analyze,
    ambiguity_score,
    buckets_csv,
    bucketize,
    categorize_example,
    compare_kb,
    cosine,
    format_report,
    read_predictions,
    score,
    summarize,
    write_predictions,
)
from aveqx.knowledge import build_kb
from aveqx.spanlabel import EvalExample, to_eval_examples


@pytest.mark.parametrize("strict", [False, True])
def test_worked_fixture(strict):
    report = score(wm.GOLDS, wm.PREDICTIONS, strict=strict)
    for kind in ("micro", "macro"):
        got = getattr(report, kind)
        for g, e in zip(got, wm.EXPECTED[strict][kind]):
            assert g == pytest.approx(float(e), abs=1e-12)
    assert report.excluded_attributes == wm.EXCLUDED_ATTRIBUTES
    assert report.macro_attributes == 3


def test_macro_f1_is_harmonic_of_macro_p_and_r():
    report = score(wm.GOLDS, wm.PREDICTIONS)
    assert report.macro[2] != pytest.approx(float(wm.MEAN_OF_F1))


@pytest.mark.parametrize(
    "p, r, f",
    [(0.3320, 0.3037, 0.3172), (0.4277, 0.4085, 0.4179), (0.3092, 0.2804, 0.2941)],
)
def test_harmonic_macro_matches_reported_rows(p, r, f):
    from aveqx.evaluation import harmonic

    assert round(harmonic(p, r), 4) == pytest.approx(f, abs=1e-4)


def test_null_null_touches_nothing():
    g = [EvalExample("a", "x", ("t",), ("x",), None)]
    report = score(g, [Prediction("a", None)])
    assert report.counts.tp == report.counts.n_pred == report.counts.n_gold == 0
    assert report.excluded_attributes == 1


def test_prediction_set_must_match():
    g = [EvalExample("a", "x", ("t",), ("x",), None)]
    with pytest.raises(DataError, match="no prediction"):
        score(g, [])
    with pytest.raises(DataError, match="duplicate"):
        score(g, [Prediction("a", None), Prediction("a", None)])
    with pytest.raises(DataError, match="unknown"):
        score(g, [Prediction("a", None), Prediction("b", None)])


values = st.one_of(st.none(), st.sampled_from([("a",), ("b",), ("a", "b")]))


@given(st.lists(st.tuples(st.sampled_from("xyz"), values, values), min_size=1, max_size=30))
def test_micro_matches_direct_count(rows):
    golds = [EvalExample(str(i), a, ("t",), (a,), g) for i, (a, g, _) in enumerate(rows)]
    preds = [Prediction(str(i), p) for i, (_, _, p) in enumerate(rows)]
    tp = sum(1 for _, g, p in rows if g is not None and g == p)
    n_pred = sum(1 for _, _, p in rows if p is not None)
    n_gold = sum(1 for _, g, _ in rows if g is not None)
    report = score(golds, preds)
    assert report.micro[0] == pytest.approx(tp / n_pred if n_pred else 0.0)
    assert report.micro[1] == pytest.approx(tp / n_gold if n_gold else 0.0)
    for v in (*report.micro, *report.macro):
        assert 0.0 <= v <= 1.0


def test_embedder_is_deterministic_and_cosine_bounds():
    emb = HashedNgramEmbedder()
    a, b = emb("golf grip"), emb(["golf", "grip"])
    np.testing.assert_array_equal(a, b)
    assert cosine(a, b) == pytest.approx(1.0)
    assert cosine(a, np.zeros_like(a)) == 0.0


def test_ambiguity_score():
    kb = build_kb([CleanTuple("t", "sleeve length", "long sleeve"), CleanTuple("t", "feature", "zzyzx")])
    emb = HashedNgramEmbedder()
    assert ambiguity_score("sleeve length", kb, emb) > ambiguity_score("feature", kb, emb)
    assert ambiguity_score("unknown", kb, emb) is None


def test_bucketize_median_goes_high():
    profiles = [AttributeProfile(f"a{i}", c, s) for i, (c, s) in enumerate([(1, 0.1), (5, 0.5), (9, 0.9)])]
    assert bucketize(profiles) == {"a0": ("lo", "lo"), "a1": ("hi", "hi"), "a2": ("hi", "hi")}


TRAIN = [
    CleanTuple("red shirt", "color", "red"),
    CleanTuple("blue shirt", "color", "blue"),
    CleanTuple("plain box", "brand", None),
]


def test_categories():
    kb = build_kb(TRAIN)
    ex = to_eval_examples(
        [
            CleanTuple("red cap", "color", "red"),
            CleanTuple("green cap", "color", "green"),
            CleanTuple("acme cap", "brand", "acme"),
            CleanTuple("cap", "color", None),
            CleanTuple("cap", "size", "xl"),
        ]
    )
    assert [categorize_example(e, kb) for e in ex] == [SEEN_SEEN, SEEN_UNSEEN, SEEN_UNSEEN, SEEN_SEEN, UNSEEN_ATTR]


def test_analyze_and_compare_kb():
    train_kb = build_kb(TRAIN)
    test = to_eval_examples([CleanTuple("red cap", "color", "red"), CleanTuple("green cap", "color", "green")])
    preds = [Prediction("0", ("red",)), Prediction("1", None)]
    report = analyze(test, preds, train_kb, {"color": 2})
    assert report.categories[SEEN_UNSEEN].micro[1] == 0.0
    assert report.notes["category_counts"] == {SEEN_SEEN: 1, SEEN_UNSEEN: 1, UNSEEN_ATTR: 0}
    assert "freq-all/sim-all" in report.buckets
    zero = compare_kb(report, report)
    assert all(v == 0.0 for row in zero.values() for v in row.values())
    better = analyze(test, [Prediction("0", ("red",)), Prediction("1", ("green",))], train_kb, {"color": 2})
    assert compare_kb(report, better)[SEEN_UNSEEN]["micro_r"] == 1.0
    assert "seen-attr-unseen-value" in format_report(report)
    assert buckets_csv(report).splitlines()[0].startswith("bucket,n_examples")
    json.loads(report.to_json())


def test_predictions_roundtrip(tmp_path):
    preds = [Prediction("a", ("pu", "leather")), Prediction("b", None)]
    write_predictions(preds, tmp_path / "p.jsonl")
    assert read_predictions(tmp_path / "p.jsonl") == preds


def test_summarize():
    assert summarize([1.0, 3.0]) == (2.0, 1.0)
