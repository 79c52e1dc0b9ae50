"""Dictionary-matching extractor: the most frequent seen value found in the title."""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

from .evaluation import Prediction
from .knowledge import KnowledgeBase
from .spanlabel import EvalExample, find_span


def dictionary_extract(
    title_tokens: Sequence[str], attribute: str, kb: KnowledgeBase
) -> Optional[tuple[str, ...]]:
    # KB order is count-descending, so the first hit is the most frequent one
    for value, _ in kb.values(attribute):
        if find_span(title_tokens, value) is not None:
            return value
    return None


def predict_dictionary(examples: Iterable[EvalExample], kb: KnowledgeBase) -> list[Prediction]:
    return [Prediction(ex.uid, dictionary_extract(ex.title_tokens, ex.attribute, kb)) for ex in examples]
