"""Trainable span scorer.

Word, POS tag, and position embeddings (one shared dimension) are summed
per token and run through a stack of self-attention blocks, each a
multi-head attention sublayer and a feed-forward sublayer with residual
connections and layer normalization.  A learned boundary vector is
prepended to the encoder outputs so that every span (i, j) is represented
as the fencepost difference h[j] - h[i].  Spans additionally attend over
the lexicon n-grams they contain, bucketed by n-gram length with one
trainable weight per bucket; the concatenated representation feeds a
one-hidden-layer MLP that scores every entity label, with the null label O
pinned at score zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .chart import DecodeResult, SpanScoreChart, cky_decode
from .core import LabelSet, Sentence, ValidationError
from .corpus_stats import MAX_NGRAM, NGramLexicon

UNK = "<unk>"

INIT_RANGE = 0.1


@dataclass(frozen=True)
class Vocab:
    """String-to-row mapping; row 0 is the reserved unknown item."""

    items: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        if not self.items or self.items[0] != UNK:
            raise ValidationError(f"vocab must reserve row 0 for {UNK}")
        if len(set(self.items)) != len(self.items):
            raise ValidationError("vocab items must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.items)})

    @classmethod
    def build(cls, strings: Iterable[str]) -> "Vocab":
        return cls((UNK, *sorted(set(strings) - {UNK})))

    def id(self, item: str) -> int:
        return self._index.get(item, 0)

    def ids(self, items: Sequence[str]) -> np.ndarray:
        return np.array([self.id(s) for s in items], dtype=np.intp)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64  # shared embedding / hidden width
    layers: int = 2  # encoder depth
    heads: int = 4
    d_hidden: int = 128  # scorer MLP hidden size, reused by the FF sublayer
    max_len: int = 128
    n_cat: int = 5  # n-gram length buckets for span attention

    def __post_init__(self) -> None:
        if self.d <= 0 or self.d_hidden <= 0 or self.heads <= 0:
            raise ValidationError("model dimensions must be positive")
        if self.layers < 0:
            raise ValidationError("encoder depth must be >= 0")
        if self.d % self.heads != 0:
            raise ValidationError(f"width {self.d} not divisible by {self.heads} heads")
        if self.n_cat < 1:
            raise ValidationError("need at least one n-gram length bucket")

    @property
    def span_width(self) -> int:
        # span vector plus one attention block per length bucket
        return self.d * (self.n_cat + 1)


@dataclass(frozen=True)
class DropoutRates:
    attention: float = 0.2
    pos: float = 0.4
    residual: float = 0.5

    def __post_init__(self) -> None:
        for rate in (self.attention, self.pos, self.residual):
            if not (0.0 <= rate < 1.0):
                raise ValidationError(f"dropout rate {rate} outside [0, 1)")


@dataclass
class TrainContext:
    """Carries the RNG and rates that turn dropout on for one forward pass."""

    rng: np.random.Generator
    rates: DropoutRates = field(default_factory=DropoutRates)


class ModelParams:
    """All trainable tensors plus the vocabularies they index."""

    def __init__(
        self,
        config: ModelConfig,
        word_vocab: Vocab,
        pos_vocab: Vocab,
        labels: LabelSet,
        n_ngrams: int,
        seed: int = 0,
    ):
        self.config = config
        self.word_vocab = word_vocab
        self.pos_vocab = pos_vocab
        self.labels = labels
        self.n_ngrams = int(n_ngrams)
        self.tensors: dict[str, Parameter] = {}
        rng = np.random.default_rng(seed)
        self._init_tensors(rng)

    def _uniform(self, rng, name: str, shape) -> None:
        self.tensors[name] = Parameter(
            rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape), name
        )

    def _const(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = Parameter(value, name)

    def _init_tensors(self, rng: np.random.Generator) -> None:
        cfg = self.config
        d, dh = cfg.d, cfg.d_hidden
        self._uniform(rng, "word_emb", (len(self.word_vocab), d))
        self._uniform(rng, "tag_emb", (len(self.pos_vocab), d))
        self._uniform(rng, "position_emb", (cfg.max_len + 1, d))
        self._uniform(rng, "boundary", (d,))
        for i in range(cfg.layers):
            p = f"enc{i}."
            for w in ("wq", "wk", "wv", "wo"):
                self._uniform(rng, p + w, (d, d))
            for b in ("bq", "bk", "bv", "bo"):
                self._uniform(rng, p + b, (d,))
            self._const(p + "ln1_gain", np.ones(d))
            self._uniform(rng, p + "ln1_bias", (d,))
            self._uniform(rng, p + "ff_w1", (d, dh))
            self._uniform(rng, p + "ff_b1", (dh,))
            self._uniform(rng, p + "ff_w2", (dh, d))
            self._uniform(rng, p + "ff_b2", (d,))
            self._const(p + "ln2_gain", np.ones(d))
            self._uniform(rng, p + "ln2_bias", (d,))
        self._uniform(rng, "ngram_emb", (self.n_ngrams, d))
        self._const("delta", np.ones(cfg.n_cat))
        self._uniform(rng, "scorer_w1", (cfg.span_width, dh))
        self._uniform(rng, "scorer_b1", (dh,))
        self._const("scorer_ln_gain", np.ones(dh))
        self._uniform(rng, "scorer_ln_bias", (dh,))
        self._uniform(rng, "scorer_w2", (dh, len(self.labels) - 1))
        self._uniform(rng, "scorer_b2", (len(self.labels) - 1,))

    def __getitem__(self, name: str) -> Parameter:
        return self.tensors[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def clone(self) -> "ModelParams":
        other = object.__new__(ModelParams)
        other.config = self.config
        other.word_vocab = self.word_vocab
        other.pos_vocab = self.pos_vocab
        other.labels = self.labels
        other.n_ngrams = self.n_ngrams
        other.tensors = {
            name: Parameter(t.value.copy(), name) for name, t in self.tensors.items()
        }
        return other

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t.value).all():
                raise ValidationError(f"parameter {name} contains non-finite values")


def build_params(
    config: ModelConfig,
    sentences: Sequence[Sentence],
    labels: LabelSet,
    lexicon: NGramLexicon | None,
    seed: int = 0,
) -> ModelParams:
    """Initialize parameters with vocabularies drawn from a training corpus."""
    words: set[str] = set()
    tags: set[str] = set()
    for s in sentences:
        words.update(s.forms)
        tags.update(s.pos_tags)
    return ModelParams(
        config,
        Vocab.build(words),
        Vocab.build(tags),
        labels,
        0 if lexicon is None else len(lexicon),
        seed=seed,
    )


# -- forward pieces -----------------------------------------------------------


def embed(
    params: ModelParams, sentence: Sentence, train: TrainContext | None = None
) -> Tensor:
    """Per-token input vectors: word + POS tag + position embeddings.

    In train mode the POS embedding is dropped out (rate ``rates.pos``)
    before the sum.
    """
    n = len(sentence)
    if n > params.config.max_len:
        raise ValidationError(
            f"sentence {sentence.id!r} has {n} tokens, max_len is "
            f"{params.config.max_len}"
        )
    w = ad.lookup(params["word_emb"], params.word_vocab.ids(sentence.forms))
    m = ad.lookup(params["tag_emb"], params.pos_vocab.ids(sentence.pos_tags))
    if train is not None:
        m = ad.dropout(m, train.rates.pos, train.rng)
    p = ad.lookup(params["position_emb"], np.arange(1, n + 1))
    return ad.add(ad.add(w, m), p)


def _attention_sublayer(
    params: ModelParams, prefix: str, x: Tensor, train: TrainContext | None
) -> Tensor:
    cfg = params.config
    n = x.shape[0]
    heads, dh = cfg.heads, cfg.d // cfg.heads

    def project(w, b):
        proj = ad.add(ad.matmul(x, params[prefix + w]), params[prefix + b])
        return ad.transpose(ad.reshape(proj, (n, heads, dh)), (1, 0, 2))

    q = project("wq", "bq")
    k = project("wk", "bk")
    v = project("wv", "bv")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    weights = ad.softmax(scores)
    if train is not None:
        weights = ad.dropout(weights, train.rates.attention, train.rng)
    context = ad.matmul(weights, v)
    merged = ad.reshape(ad.transpose(context, (1, 0, 2)), (n, cfg.d))
    return ad.add(ad.matmul(merged, params[prefix + "wo"]), params[prefix + "bo"])


def _feed_forward(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(x, params[prefix + "ff_w1"]), params[prefix + "ff_b1"]))
    return ad.add(ad.matmul(hidden, params[prefix + "ff_w2"]), params[prefix + "ff_b2"])


def encode(
    params: ModelParams, z: Tensor, train: TrainContext | None = None
) -> Tensor:
    """Encoder stack output with the learned boundary vector prepended.

    Returns n+1 fencepost states; row 0 is the boundary parameter, row t is
    the final encoder state of token t-1.  Depth 0 passes the inputs
    through unchanged (useful as a test hook).
    """
    cfg = params.config
    if z.shape[-1] != cfg.d:
        raise ValidationError(f"encoder expects width {cfg.d}, got {z.shape[-1]}")
    x = z
    for i in range(cfg.layers):
        prefix = f"enc{i}."
        attn = _attention_sublayer(params, prefix, x, train)
        if train is not None:
            attn = ad.dropout(attn, train.rates.residual, train.rng)
        y1 = ad.layer_norm(
            ad.add(x, attn), params[prefix + "ln1_gain"], params[prefix + "ln1_bias"]
        )
        ff = _feed_forward(params, prefix, y1)
        if train is not None:
            ff = ad.dropout(ff, train.rates.residual, train.rng)
        x = ad.layer_norm(
            ad.add(y1, ff), params[prefix + "ln2_gain"], params[prefix + "ln2_bias"]
        )
    boundary = ad.reshape(params["boundary"], (1, cfg.d))
    return ad.concat([boundary, x], axis=0)


def span_repr(hidden: Tensor, i: int, j: int) -> Tensor:
    """Span vector as the fencepost difference h[j] - h[i]."""
    n_states = hidden.shape[0]
    if not (0 <= i < j <= n_states - 1):
        raise ValidationError(f"span ({i}, {j}) out of range for {n_states} states")
    return ad.sub(
        ad.lookup(hidden, np.array([j], dtype=np.intp)),
        ad.lookup(hidden, np.array([i], dtype=np.intp)),
    )


# -- lexicon span attention ---------------------------------------------------


@dataclass(frozen=True)
class NGramMatch:
    start: int
    end: int
    ngram: tuple[str, ...]
    embedding_id: int


@dataclass(frozen=True)
class SpanMatchSet:
    """Lexicon n-grams inside one span, bucketed by n-gram length.

    Bucket u (1-based) holds matches of length u; lengths >= n_cat share the
    top bucket.
    """

    start: int
    end: int
    categories: tuple[tuple[NGramMatch, ...], ...]

    @property
    def total(self) -> int:
        return sum(len(c) for c in self.categories)


def _match_windows(sentence: Sentence, lexicon: NGramLexicon) -> dict:
    """All lexicon hits in a sentence, keyed by (start, end)."""
    forms = sentence.forms
    n = len(forms)
    hits: dict[tuple[int, int], int] = {}
    longest = min(MAX_NGRAM, lexicon.max_length)
    for start in range(n):
        for length in range(1, min(longest, n - start) + 1):
            entry = lexicon.get(forms[start : start + length])
            if entry is not None:
                hits[(start, start + length)] = entry.embedding_id
    return hits


def _bucket(length: int, n_cat: int) -> int:
    return min(length, n_cat) - 1


def _matches_from_windows(
    forms: tuple[str, ...], windows: dict, i: int, j: int, n_cat: int
) -> SpanMatchSet:
    buckets: list[list[NGramMatch]] = [[] for _ in range(n_cat)]
    for start in range(i, j):
        for end in range(start + 1, min(start + MAX_NGRAM, j) + 1):
            eid = windows.get((start, end))
            if eid is not None:
                buckets[_bucket(end - start, n_cat)].append(
                    NGramMatch(start, end, forms[start:end], eid)
                )
    # enumeration above runs by start then length, the canonical order
    return SpanMatchSet(i, j, tuple(tuple(b) for b in buckets))


def collect_ngram_matches(
    sentence: Sentence, i: int, j: int, lexicon: NGramLexicon, n_cat: int
) -> SpanMatchSet:
    """Lexicon n-grams contained in span (i, j), ordered by start then length."""
    if not (0 <= i < j <= len(sentence)):
        raise ValidationError(f"span ({i}, {j}) outside sentence of length {len(sentence)}")
    windows = _match_windows(sentence, lexicon)
    return _matches_from_windows(sentence.forms, windows, i, j, n_cat)


def span_attention(r: Tensor, matches: SpanMatchSet, params: ModelParams) -> Tensor:
    """Length-bucketed attention over matched n-gram embeddings.

    Per bucket: softmax of dot products between the span vector and each
    matched embedding, weighted average of the embeddings, scaled by the
    bucket weight.  Empty buckets contribute zeros; the result concatenates
    all buckets into a d * n_cat vector.
    """
    cfg = params.config
    r_flat = ad.reshape(r, (cfg.d,))
    pieces: list[Tensor] = []
    for u, bucket in enumerate(matches.categories):
        if not bucket:
            pieces.append(ad.constant(np.zeros(cfg.d)))
            continue
        ids = np.array([m.embedding_id for m in bucket], dtype=np.intp)
        emb = ad.lookup(params["ngram_emb"], ids)
        scores = ad.matmul(emb, ad.reshape(r_flat, (cfg.d, 1)))
        weights = ad.softmax(ad.reshape(scores, (1, len(bucket))))
        averaged = ad.reshape(ad.matmul(weights, emb), (cfg.d,))
        delta_u = ad.take(params["delta"], (np.array([u]),))
        pieces.append(ad.mul(averaged, delta_u))
    return ad.concat(pieces, axis=0)


def _batched_span_attention(
    params: ModelParams,
    r: Tensor,
    spans: Sequence[tuple[int, int]],
    sentence: Sentence,
    lexicon: NGramLexicon | None,
) -> Tensor:
    cfg = params.config
    n_spans = len(spans)
    if lexicon is None or len(lexicon) == 0 or params.n_ngrams == 0:
        return ad.constant(np.zeros((n_spans, cfg.d * cfg.n_cat)))
    windows = _match_windows(sentence, lexicon)
    if not windows:
        return ad.constant(np.zeros((n_spans, cfg.d * cfg.n_cat)))

    per_span = [
        _matches_from_windows(sentence.forms, windows, i, j, cfg.n_cat)
        for i, j in spans
    ]
    width = max(
        (len(b) for ms in per_span for b in ms.categories), default=0
    )
    if width == 0:
        return ad.constant(np.zeros((n_spans, cfg.d * cfg.n_cat)))

    ids = np.zeros((n_spans, cfg.n_cat, width), dtype=np.intp)
    mask = np.zeros((n_spans, cfg.n_cat, width), dtype=bool)
    for s, ms in enumerate(per_span):
        for u, bucket in enumerate(ms.categories):
            for v, match in enumerate(bucket):
                ids[s, u, v] = match.embedding_id
                mask[s, u, v] = True

    emb = ad.lookup(params["ngram_emb"], ids)  # (S, C, W, d)
    r4 = ad.reshape(r, (n_spans, 1, 1, cfg.d))
    scores = ad.reduce_sum(ad.mul(r4, emb), axis=-1)  # (S, C, W)
    weights = ad.masked_softmax(scores, mask)
    averaged = ad.reduce_sum(
        ad.mul(ad.reshape(weights, (n_spans, cfg.n_cat, width, 1)), emb), axis=2
    )  # (S, C, d)
    scaled = ad.mul(averaged, ad.reshape(params["delta"], (1, cfg.n_cat, 1)))
    return ad.reshape(scaled, (n_spans, cfg.n_cat * cfg.d))


# -- full span scoring --------------------------------------------------------


def enumerate_spans(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, j) for i in range(n) for j in range(i + 1, n + 1))


@dataclass
class ForwardResult:
    chart: SpanScoreChart
    span_scores: Tensor  # (n_spans, |labels| - 1), graph attached
    spans: tuple[tuple[int, int], ...]
    hidden: Tensor

    def span_row(self, i: int, j: int) -> int:
        return self._rows[(i, j)]

    def __post_init__(self) -> None:
        self._rows = {span: row for row, span in enumerate(self.spans)}


def forward_chart(
    params: ModelParams,
    sentence: Sentence,
    lexicon: NGramLexicon | None = None,
    train: TrainContext | None = None,
) -> ForwardResult:
    """Score every span of a sentence, keeping the graph for backprop."""
    cfg = params.config
    n = len(sentence)
    z = embed(params, sentence, train)
    hidden = encode(params, z, train)
    spans = enumerate_spans(n)
    starts = np.array([i for i, _ in spans], dtype=np.intp)
    ends = np.array([j for _, j in spans], dtype=np.intp)
    r = ad.sub(ad.lookup(hidden, ends), ad.lookup(hidden, starts))
    attention = _batched_span_attention(params, r, spans, sentence, lexicon)
    combined = ad.concat([r, attention], axis=1)
    pre = ad.add(ad.matmul(combined, params["scorer_w1"]), params["scorer_b1"])
    activated = ad.relu(
        ad.layer_norm(pre, params["scorer_ln_gain"], params["scorer_ln_bias"])
    )
    span_scores = ad.add(ad.matmul(activated, params["scorer_w2"]), params["scorer_b2"])

    dense = np.zeros((n + 1, n + 1, len(params.labels)))
    dense[starts, ends, 1:] = span_scores.value
    chart = SpanScoreChart(n, params.labels, dense)
    return ForwardResult(chart, span_scores, spans, hidden)


def score_spans(
    params: ModelParams,
    sentence: Sentence,
    lexicon: NGramLexicon | None = None,
    train: TrainContext | None = None,
) -> SpanScoreChart:
    return forward_chart(params, sentence, lexicon, train).chart


def decode_sentence(
    params: ModelParams, sentence: Sentence, lexicon: NGramLexicon | None = None
) -> DecodeResult:
    """Convenience: score a sentence (no dropout) and CKY-decode it."""
    return cky_decode(score_spans(params, sentence, lexicon))


def extend_ngram_embeddings(
    params: ModelParams,
    base: NGramLexicon,
    merged: NGramLexicon,
    seed: int = 0,
    noise: float = 0.01,
) -> ModelParams:
    """Grow the n-gram table to cover a merged lexicon.

    Existing rows are kept untouched (ids are stable under merging).  Each
    new entry is warm-started at the mean of the trained rows in its length
    bucket, plus small noise, so merged-in n-grams land in the region the
    scorer already knows how to read; buckets with no trained rows fall
    back to the usual uniform init.
    """
    if len(merged) < len(base):
        raise ValidationError("merged lexicon is smaller than its base")
    cfg = params.config
    old = params["ngram_emb"].value
    if old.shape[0] != len(base):
        raise ValidationError(
            f"model has {old.shape[0]} n-gram rows but base lexicon has {len(base)}"
        )
    rng = np.random.default_rng(seed)
    new_table = np.empty((len(merged), cfg.d))
    new_table[: len(base)] = old

    bucket_rows: dict[int, list[int]] = {}
    for entry in base:
        bucket_rows.setdefault(_bucket(len(entry.ngram), cfg.n_cat), []).append(
            entry.embedding_id
        )
    centroids = {
        u: old[rows].mean(axis=0) for u, rows in bucket_rows.items()
    }
    for entry in merged:
        if entry.embedding_id < len(base):
            continue
        u = _bucket(len(entry.ngram), cfg.n_cat)
        if u in centroids:
            row = centroids[u] + rng.uniform(-noise, noise, size=cfg.d)
        else:
            row = rng.uniform(-INIT_RANGE, INIT_RANGE, size=cfg.d)
        new_table[entry.embedding_id] = row

    grown = params.clone()
    grown.n_ngrams = len(merged)
    grown.tensors["ngram_emb"] = Parameter(new_table, "ngram_emb")
    return grown
