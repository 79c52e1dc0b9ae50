"""Assemble encoded model inputs with optional value knowledge.

Layout: ``[CLS; title; SEP; (knowledge token); attribute; SEP; v1; SEP; v2 ...]``.
The query segment (everything after the first SEP) is capped by a token
budget: 32 without values, 192 with values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, Sequence

import numpy as np

from .knowledge import KnowledgeBase, apply_dropout
from .spanlabel import MAX_TITLE_TOKENS
from .tokenizer import (
    CLS_ID,
    PAD,
    SEEN_ID,
    SEP_ID,
    UNSEEN_ID,
    Vocabulary,
)

log = logging.getLogger(__name__)

PLAIN_QUERY_BUDGET = 32
VALS_QUERY_BUDGET = 192

TITLE, ATTR, VALUE, SPECIAL = "T", "A", "V", "S"


class Mode(str, Enum):
    PLAIN = "plain"
    VALS = "vals"
    SEEN = "seen"
    UNSEEN = "unseen"


class Knowledge(str, Enum):
    SEEN = "SEEN"
    UNSEEN = "UNSEEN"
    NONE = "NONE"


class _HasQuery(Protocol):
    title_tokens: Sequence[str]
    attribute_tokens: Sequence[str]
    attribute: str


@dataclass(frozen=True)
class EncodedInput:
    ids: tuple[int, ...]
    roles: tuple[str, ...]
    knowledge: Knowledge
    n_title: int
    gold: Optional[tuple[int, int]] = None
    uid: str = ""
    title_offset: int = 1
    match: tuple[int, ...] = ()  # per title token: 1 if its surface occurs in a query value

    def __len__(self) -> int:
        return len(self.ids)

    def debug(self, vocab: Vocabulary) -> str:
        return " ".join(f"{vocab.surface(i)}/{r}" for i, r in zip(self.ids, self.roles))


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int = 32
    mixing: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or (self.mixing and self.batch_size < 2):
            raise ValueError("batch size must be >= 2 when mixing is enabled")


def query_budget(mode: Mode | str) -> int:
    return PLAIN_QUERY_BUDGET if Mode(mode) is Mode.PLAIN else VALS_QUERY_BUDGET


def build_input(
    example: _HasQuery,
    values: Sequence[Sequence[str]],
    mode: Mode | str,
    vocab: Vocabulary,
    max_title: int = MAX_TITLE_TOKENS,
    budget: Optional[int] = None,
) -> EncodedInput:
    """Encode one example.

    ``values`` are token sequences in KB order, possibly already PAD-ed by
    knowledge dropout. They are ignored in ``plain`` and ``unseen`` modes.
    """
    mode = Mode(mode)
    budget = query_budget(mode) if budget is None else budget
    title = list(example.title_tokens[:max_title])
    ids = [CLS_ID] + vocab.encode_cached(tuple(title)) + [SEP_ID]
    roles = [SPECIAL] + [TITLE] * len(title) + [SPECIAL]

    query_ids: list[int] = []
    query_roles: list[str] = []
    knowledge = Knowledge.NONE
    if mode is Mode.SEEN:
        knowledge = Knowledge.SEEN
        query_ids.append(SEEN_ID)
        query_roles.append(SPECIAL)
    elif mode is Mode.UNSEEN:
        knowledge = Knowledge.UNSEEN
        query_ids.append(UNSEEN_ID)
        query_roles.append(SPECIAL)

    attr = list(example.attribute_tokens)
    room = budget - len(query_ids) - 1
    if len(attr) > room:
        log.warning("attribute %r truncated to %d tokens", example.attribute, max(room, 0))
        attr = attr[: max(room, 0)]
    query_ids += vocab.encode(attr) + [SEP_ID]
    query_roles += [ATTR] * len(attr) + [SPECIAL]

    value_tokens: set[str] = set()
    if mode in (Mode.VALS, Mode.SEEN):
        first = True
        for value in values:
            room = budget - len(query_ids) - (0 if first else 1)
            if room <= 0:
                break
            if not first:
                query_ids.append(SEP_ID)
                query_roles.append(SPECIAL)
            toks = tuple(value)[:room]
            query_ids += vocab.encode_cached(toks)
            query_roles += [VALUE] * len(toks)
            value_tokens.update(toks)
            first = False
    value_tokens.discard(PAD)

    gold = None
    if hasattr(example, "gold_begin"):
        gold = (example.gold_begin, example.gold_end)
    return EncodedInput(
        ids=tuple(ids + query_ids),
        roles=tuple(roles + query_roles),
        knowledge=knowledge,
        n_title=len(title),
        gold=gold,
        uid=getattr(example, "uid", ""),
        match=tuple(int(t in value_tokens) for t in title),
    )


def kb_values(kb: KnowledgeBase, attribute: str) -> list[tuple[str, ...]]:
    return [v for v, _ in kb.values(attribute)]


def build_eval_input(example: _HasQuery, kb: KnowledgeBase, vocab: Vocabulary) -> EncodedInput:
    """SEEN + values when the KB knows any value for the attribute, UNSEEN otherwise."""
    values = kb_values(kb, example.attribute)
    if values:
        return build_input(example, values, Mode.SEEN, vocab)
    return build_input(example, (), Mode.UNSEEN, vocab)


def build_training_inputs(
    examples: Sequence[_HasQuery],
    kb: KnowledgeBase,
    vocab: Vocabulary,
    *,
    vals: bool,
    drop: bool,
    mixing: bool,
    r: float,
    rng: np.random.Generator,
) -> list[EncodedInput]:
    """Encode a group of source examples for one training step.

    With mixing, each example yields a SEEN input (values after dropout) and
    an UNSEEN input, adjacent to each other.
    """
    out = []
    for ex in examples:
        if not vals:
            out.append(build_input(ex, (), Mode.PLAIN, vocab))
            continue
        entry = kb.values(ex.attribute)
        values = apply_dropout(entry, r, rng) if drop else [v for v, _ in entry]
        if mixing:
            out.append(build_input(ex, values, Mode.SEEN, vocab))
            out.append(build_input(ex, (), Mode.UNSEEN, vocab))
        else:
            out.append(build_input(ex, values, Mode.VALS, vocab))
    return out


def make_mixed_batch(
    examples: Sequence[_HasQuery],
    kb: KnowledgeBase,
    spec: BatchSpec,
    rng: np.random.Generator,
    vocab: Vocabulary,
    r: float = 0.2,
) -> list[EncodedInput]:
    """Knowledge-token mixing batch: a SEEN/UNSEEN pair per source example.

    With ``spec.mixing`` off, one values-expanded input per example.
    """
    return build_training_inputs(
        examples, kb, vocab, vals=True, drop=r > 0, mixing=spec.mixing, r=r, rng=rng
    )


def eval_inputs(
    examples: Sequence[_HasQuery], kb: KnowledgeBase, vocab: Vocabulary, *, vals: bool, mixing: bool
) -> list[EncodedInput]:
    if not vals:
        return [build_input(ex, (), Mode.PLAIN, vocab) for ex in examples]
    if mixing:
        return [build_eval_input(ex, kb, vocab) for ex in examples]
    return [build_input(ex, kb_values(kb, ex.attribute), Mode.VALS, vocab) for ex in examples]
