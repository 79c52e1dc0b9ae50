"""Span extractor contract and a small trainable pointer model.

The reference model scores every title position against a query summary::

    u = mean(E[query tokens])            # attribute, values, knowledge token
    q = tanh(W u)
    start[i] = q . (h_start * E[x_i]) + m_start * match[i]
    end[i]   = q . (h_end   * E[x_i]) + m_end   * match[i]

x_0 is CLS and x_1..x_n the title. ``match[i]`` is 1 when the surface of title
token i also occurs among the query's value tokens (PAD never matches), an
exact-match feature in the style of extractive QA readers. Matching works on
strings, so values below the vocabulary cutoff still match. It is what lets a
model lean on the value list, and what knowledge dropout and token mixing
have to wean it off. PAD tokens are left out of the query mean. Everything is
plain numpy with hand-written gradients.
"""
from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import DataError, TrainingDiverged
from .querybuild import ATTR, VALUE, EncodedInput
from .tokenizer import PAD_ID, SEEN_ID, UNK_ID, UNSEEN_ID, Vocabulary

log = logging.getLogger(__name__)

FORMAT_MAGIC = b"AVQXPTR"
FORMAT_VERSION = 2
NEG_INF = -1e30


class SpanExtractor(Protocol):
    def train(self, batches: Sequence[Sequence[EncodedInput]]) -> list[float]: ...

    def predict(self, inp: EncodedInput) -> tuple[int, int]: ...


@dataclass
class PointerModelParams:
    embeddings: np.ndarray  # (vocab, d)
    weights: np.ndarray  # (d, d)
    start_head: np.ndarray  # (d,)
    end_head: np.ndarray  # (d,)
    match: np.ndarray  # (2,) exact-match weights for start and end

    NAMES = ("embeddings", "weights", "start_head", "end_head", "match")

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def copy(self) -> "PointerModelParams":
        return PointerModelParams(*(a.copy() for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    d: int = 64

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.d < 2:
            raise ValueError("embedding dimension must be >= 2")


def init_params(vocab_size: int, d: int, rng: np.random.Generator, scale: float = 0.1) -> PointerModelParams:
    return PointerModelParams(
        embeddings=rng.uniform(-scale, scale, (vocab_size, d)),
        weights=rng.uniform(-scale, scale, (d, d)),
        start_head=rng.uniform(-scale, scale, d),
        end_head=rng.uniform(-scale, scale, d),
        match=np.zeros(2),
    )


def zero_params(vocab_size: int, d: int) -> PointerModelParams:
    return PointerModelParams(np.zeros((vocab_size, d)), np.zeros((d, d)), np.zeros(d), np.zeros(d), np.zeros(2))


# ---------------------------------------------------------------- batching


@dataclass
class PackedBatch:
    title_ids: np.ndarray  # (B, N) CLS + title, padded with PAD
    title_mask: np.ndarray  # (B, N) bool
    query_ids: np.ndarray  # (B, L)
    query_w: np.ndarray  # (B, L) 1/|query| or 0
    match: np.ndarray  # (B, N) 1.0 where the title token occurs among the query values
    begin: Optional[np.ndarray] = None
    end: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.title_ids.shape[0]


def _query_positions(inp: EncodedInput) -> list[int]:
    return [
        tid
        for tid, role in zip(inp.ids[inp.n_title + 2 :], inp.roles[inp.n_title + 2 :])
        if (role in (ATTR, VALUE) and tid != PAD_ID) or tid in (SEEN_ID, UNSEEN_ID)
    ]


def pack(inputs: Sequence[EncodedInput], vocab_size: Optional[int] = None) -> PackedBatch:
    """Pad a list of encoded inputs into dense arrays.

    Ids at or beyond ``vocab_size`` are mapped to UNK.
    """
    B = len(inputs)
    N = max(inp.n_title for inp in inputs) + 1
    queries = [_query_positions(inp) for inp in inputs]
    L = max(1, max(len(q) for q in queries))
    title_ids = np.full((B, N), PAD_ID, dtype=np.int64)
    title_mask = np.zeros((B, N), dtype=bool)
    query_ids = np.full((B, L), PAD_ID, dtype=np.int64)
    query_w = np.zeros((B, L))
    has_gold = all(inp.gold is not None for inp in inputs)
    begin = np.zeros(B, dtype=np.int64)
    end = np.zeros(B, dtype=np.int64)
    for b, (inp, q) in enumerate(zip(inputs, queries)):
        n = inp.n_title + 1
        title_ids[b, :n] = inp.ids[:n]
        title_mask[b, :n] = True
        if q:
            query_ids[b, : len(q)] = q
            query_w[b, : len(q)] = 1.0 / len(q)
        if has_gold:
            begin[b], end[b] = inp.gold
    if vocab_size is not None:
        title_ids[title_ids >= vocab_size] = UNK_ID
        query_ids[query_ids >= vocab_size] = UNK_ID
    match = np.zeros((B, N))
    for b, inp in enumerate(inputs):
        if inp.match:
            match[b, 1 : inp.n_title + 1] = inp.match
    return PackedBatch(
        title_ids, title_mask, query_ids, query_w, match, begin if has_gold else None, end if has_gold else None
    )


# ---------------------------------------------------------------- forward / loss


@dataclass
class _Cache:
    X: np.ndarray
    u: np.ndarray
    q: np.ndarray
    gs: np.ndarray
    ge: np.ndarray


def forward_batch(params: PointerModelParams, batch: PackedBatch) -> tuple[np.ndarray, np.ndarray, _Cache]:
    """Start/end logits of shape (B, N); padded positions hold a large negative value."""
    E = params.embeddings
    X = E[batch.title_ids]
    u = np.einsum("bl,bld->bd", batch.query_w, E[batch.query_ids])
    q = np.tanh(u @ params.weights.T)
    gs = q * params.start_head
    ge = q * params.end_head
    s = np.einsum("bnd,bd->bn", X, gs) + params.match[0] * batch.match
    e = np.einsum("bnd,bd->bn", X, ge) + params.match[1] * batch.match
    s = np.where(batch.title_mask, s, NEG_INF)
    e = np.where(batch.title_mask, e, NEG_INF)
    return s, e, _Cache(X, u, q, gs, ge)


def forward(inp: EncodedInput, params: PointerModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Logits over positions 0..n for a single input (length n + 1)."""
    s, e, _ = forward_batch(params, pack([inp], params.embeddings.shape[0]))
    return s[0], e[0]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss(start: np.ndarray, end: np.ndarray, begin: np.ndarray, stop: np.ndarray) -> float:
    """Mean over the batch of start plus end cross-entropy."""
    start = np.atleast_2d(start)
    end = np.atleast_2d(end)
    rows = np.arange(start.shape[0])
    ls = log_softmax(start)[rows, np.atleast_1d(begin)]
    le = log_softmax(end)[rows, np.atleast_1d(stop)]
    return float(-(ls + le).mean())


@dataclass
class Gradients:
    """Parameter gradients; the embedding gradient is kept as touched rows only."""

    rows: np.ndarray  # (U,) unique embedding ids
    embedding_rows: np.ndarray  # (U, d)
    weights: np.ndarray
    start_head: np.ndarray
    end_head: np.ndarray
    match: np.ndarray

    def dense(self, vocab_size: int) -> PointerModelParams:
        dE = np.zeros((vocab_size, self.embedding_rows.shape[1]))
        dE[self.rows] = self.embedding_rows
        return PointerModelParams(dE, self.weights, self.start_head, self.end_head, self.match)


def _segment_sum(ids: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
    return ids[starts], np.add.reduceat(vals[order], starts, axis=0)


def loss_and_grads(params: PointerModelParams, batch: PackedBatch) -> tuple[float, Gradients]:
    s, e, c = forward_batch(params, batch)
    B = len(batch)
    d = params.d
    rows = np.arange(B)
    ls = log_softmax(s)
    le = log_softmax(e)
    value = float(-(ls[rows, batch.begin] + le[rows, batch.end]).mean())

    ds = np.exp(ls)
    ds[rows, batch.begin] -= 1.0
    ds /= B
    de = np.exp(le)
    de[rows, batch.end] -= 1.0
    de /= B

    dgs = np.einsum("bn,bnd->bd", ds, c.X)
    dge = np.einsum("bn,bnd->bd", de, c.X)
    d_start = (dgs * c.q).sum(axis=0)
    d_end = (dge * c.q).sum(axis=0)
    d_match = np.array([(ds * batch.match).sum(), (de * batch.match).sum()])
    dz = (dgs * params.start_head + dge * params.end_head) * (1.0 - c.q**2)
    dW = dz.T @ c.u
    du = dz @ params.weights

    dX = ds[:, :, None] * c.gs[:, None, :] + de[:, :, None] * c.ge[:, None, :]
    dQ = batch.query_w[:, :, None] * du[:, None, :]
    tm = batch.title_mask
    qm = batch.query_w > 0
    ids = np.concatenate([batch.title_ids[tm], batch.query_ids[qm]])
    vals = np.concatenate([dX[tm], dQ[qm]])
    uniq, summed = _segment_sum(ids, vals)
    return value, Gradients(uniq, summed, dW, d_start, d_end, d_match)


# ---------------------------------------------------------------- decoding


def decode(start: np.ndarray, end: np.ndarray, n: int) -> tuple[int, int]:
    """Best (b, e) by start[b] + end[e] over (0, 0) and 1 <= b <= e <= n.

    Ties go to the smallest b, then the smallest e.
    """
    s = np.asarray(start[: n + 1], dtype=float)
    e = np.asarray(end[: n + 1], dtype=float)
    best = (0, 0)
    best_score = s[0] + e[0]
    if n == 0:
        return best
    scores = s[1:, None] + e[None, 1:]
    scores = np.where(np.triu(np.ones((n, n), dtype=bool)), scores, -np.inf)
    flat = int(np.argmax(scores))  # row-major: smallest b, then smallest e
    b, k = divmod(flat, n)
    if scores[b, k] > best_score:
        best = (b + 1, k + 1)
    return best


def predict_span(inp: EncodedInput, params: PointerModelParams) -> tuple[int, int]:
    s, e = forward(inp, params)
    return decode(s, e, inp.n_title)


def predict_batch(params: PointerModelParams, inputs: Sequence[EncodedInput], batch_size: int = 256) -> list[tuple[int, int]]:
    out = []
    V = params.embeddings.shape[0]
    for i in range(0, len(inputs), batch_size):
        chunk = inputs[i : i + batch_size]
        s, e, _ = forward_batch(params, pack(chunk, V))
        out.extend(decode(s[b], e[b], inp.n_title) for b, inp in enumerate(chunk))
    return out


# ---------------------------------------------------------------- training


class Adam:
    """Adam; the embedding table is updated lazily, touched rows only."""

    def __init__(self, params: PointerModelParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def _update(self, p, g, m, v, c1, c2) -> None:
        m *= self.beta1
        m += (1 - self.beta1) * g
        v *= self.beta2
        v += (1 - self.beta2) * g * g
        p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def step(self, params: PointerModelParams, grads: Gradients) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        r = grads.rows
        E, m, v = params.embeddings, self.m[0], self.v[0]
        pr, mr, vr = E[r], m[r], v[r]
        self._update(pr, grads.embedding_rows, mr, vr, c1, c2)
        E[r], m[r], v[r] = pr, mr, vr
        dense = (grads.weights, grads.start_head, grads.end_head, grads.match)
        for p, g, m, v in zip(params.arrays()[1:], dense, self.m[1:], self.v[1:]):
            self._update(p, g, m, v, c1, c2)


@dataclass
class TrainResult:
    params: PointerModelParams
    losses: list[float]
    best_epoch: int = -1
    dev_scores: list[float] = field(default_factory=list)


def train(
    make_epoch: Callable[[int, np.random.Generator], Sequence[Sequence[EncodedInput]]],
    vocab_size: int,
    config: TrainConfig,
    params: Optional[PointerModelParams] = None,
    select: Optional[Callable[[PointerModelParams], float]] = None,
) -> TrainResult:
    """Adam over batches produced fresh each epoch by ``make_epoch(epoch, rng)``.

    If ``select`` is given it scores the parameters after every epoch and the
    best-scoring snapshot is returned.
    """
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(vocab_size, config.d, rng)
    opt = Adam(params, config.learning_rate)
    losses = []
    best, best_score, best_epoch, dev_scores = params.copy(), -np.inf, -1, []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for batch_inputs in make_epoch(epoch, rng):
            batch = pack(batch_inputs, vocab_size)
            value, grads = loss_and_grads(params, batch)
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} in epoch {epoch} after {count} batches")
            opt.step(params, grads)
            total += value
            count += 1
        if not params.is_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        losses.append(total / max(count, 1))
        log.info("epoch %d loss %.4f", epoch, losses[-1])
        if select is not None:
            score = select(params)
            dev_scores.append(score)
            if score > best_score:
                best, best_score, best_epoch = params.copy(), score, epoch
    if select is None:
        return TrainResult(params, losses)
    return TrainResult(best, losses, best_epoch, dev_scores)


class PointerModel:
    """SpanExtractor backed by PointerModelParams."""

    def __init__(self, vocab: Vocabulary, config: TrainConfig = TrainConfig(), params: Optional[PointerModelParams] = None):
        self.vocab = vocab
        self.config = config
        self.params = params if params is not None else init_params(
            len(vocab), config.d, np.random.default_rng(config.seed)
        )

    def train(self, batches: Sequence[Sequence[EncodedInput]]) -> list[float]:
        result = train(lambda epoch, rng: batches, len(self.vocab), self.config, self.params)
        self.params = result.params
        return result.losses

    def predict(self, inp: EncodedInput) -> tuple[int, int]:
        return predict_span(inp, self.params)

    def predict_many(self, inputs: Sequence[EncodedInput]) -> list[tuple[int, int]]:
        return predict_batch(self.params, inputs)


# ---------------------------------------------------------------- persistence


def save_params(params: PointerModelParams, vocab: Vocabulary, path: str | Path) -> None:
    header = json.dumps({"version": FORMAT_VERSION, "vocab_sha256": vocab.digest(), "d": params.d}).encode()
    buf = io.BytesIO()
    np.savez(buf, **{n: a for n, a in zip(PointerModelParams.NAMES, params.arrays())})
    with Path(path).open("wb") as f:
        f.write(FORMAT_MAGIC + struct.pack("<I", len(header)) + header + buf.getvalue())


def load_params(path: str | Path, vocab: Vocabulary) -> PointerModelParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(FORMAT_MAGIC):
        raise DataError(f"{path}: not a pointer-model file")
    off = len(FORMAT_MAGIC)
    (hlen,) = struct.unpack("<I", raw[off : off + 4])
    header = json.loads(raw[off + 4 : off + 4 + hlen])
    if header["version"] != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {header['version']}")
    if header["vocab_sha256"] != vocab.digest():
        raise DataError(f"{path}: parameters were trained against a different vocabulary")
    arrays = np.load(io.BytesIO(raw[off + 4 + hlen :]))
    return PointerModelParams(*(arrays[n] for n in PointerModelParams.NAMES))
