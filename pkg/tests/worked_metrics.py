"""Twelve hand-scored examples shared by the unit and acceptance tests.

Per attribute (tp, predictions, golds), lenient / strict:

    color     1, 2, 3   /  1, 3, 3
    size      2, 3, 2   /  2, 3, 2
    brand     0, 1, 0   /  0, 1, 0   NULL-only gold: left out of macro
    material  1, 2, 3   /  1, 3, 3
"""
from __future__ import annotations

from fractions import Fraction as F

from aveqx.evaluation import Prediction
from aveqx.spanlabel import EvalExample

ROWS = [
    # attribute, gold, prediction
    ("color", "red", "red"),
    ("color", "dark blue", "blue"),  # partial overlap is a miss
    ("color", "green", None),
    ("color", None, None),
    ("size", "xl", "xl"),
    ("size", None, "m"),
    ("size", "large size", "large size"),
    ("brand", None, None),
    ("brand", None, "acme"),
    ("material", "pu leather", "pu"),
    ("material", "cotton", "cotton"),
    ("material", "wool", None),
]


def _tok(v):
    return None if v is None else tuple(v.split())


GOLDS = [
    EvalExample(f"m{i}", attr, ("title",), tuple(attr.split()), _tok(gold))
    for i, (attr, gold, _) in enumerate(ROWS)
]
PREDICTIONS = [Prediction(f"m{i}", _tok(pred)) for i, (_, _, pred) in enumerate(ROWS)]


def f1(p, r):
    return 2 * p * r / (p + r)


EXPECTED = {
    False: {
        "micro": (F(4, 8), F(4, 8), F(1, 2)),
        "macro": (F(5, 9), F(5, 9), F(5, 9)),
    },
    True: {
        "micro": (F(4, 10), F(4, 8), f1(F(4, 10), F(4, 8))),
        "macro": (F(4, 9), F(5, 9), f1(F(4, 9), F(5, 9))),
    },
}
EXCLUDED_ATTRIBUTES = 1
# mean of per-attribute F1 (2/5, 4/5, 2/5); kept to show the two macro F1 definitions differ here
MEAN_OF_F1 = F(8, 15)
