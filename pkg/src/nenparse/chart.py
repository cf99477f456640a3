"""Exact chart decoding of nested entity trees.

Every sentence is parsed as a full binary tree over its fenceposts.  Each
span takes its best label (the null label O scores a fixed 0) and, for
spans longer than one token, its best split point; dynamic programming over
span length makes the search exact in O(n^3) split enumerations.  A
loss-augmented variant adds a per-span 0/1 mislabeling cost for margin
training, and a brute-force enumerator over all tree shapes serves as a
testing oracle with identical tie-breaking (lowest label index first, then
smallest split).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    EntitySet,
    EntityTree,
    LabelSet,
    ValidationError,
    tree_to_entity_set,
)

BRUTE_FORCE_MAX_N = 10


@dataclass(frozen=True)
class SpanScoreChart:
    """Dense span/label scores s[i, j, l] for one sentence of length n.

    Scores are stored as an (n+1, n+1, |labels|) array; only i < j cells are
    meaningful and the O slice (label index 0) is identically zero.
    """

    n: int
    labels: LabelSet
    scores: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.n + 1, self.n + 1, len(self.labels))
        if self.scores.shape != expected:
            raise ValidationError(
                f"chart shape {self.scores.shape} does not match {expected}"
            )
        if not np.isfinite(self.scores).all():
            raise ValidationError("chart contains non-finite scores")
        if np.any(self.scores[:, :, 0] != 0.0):
            raise ValidationError("the O slice of a chart must be zero")

    @classmethod
    def from_entity_scores(
        cls, n: int, labels: LabelSet, entity_scores: dict
    ) -> "SpanScoreChart":
        """Build a chart from {(i, j, label): score}; everything else is 0."""
        scores = np.zeros((n + 1, n + 1, len(labels)))
        for (i, j, label), value in entity_scores.items():
            scores[i, j, labels.index(label)] = value
        return cls(n, labels, scores)

    def score(self, i: int, j: int, label: str) -> float:
        if not (0 <= i < j <= self.n):
            raise ValidationError(f"span ({i}, {j}) outside chart of length {self.n}")
        return float(self.scores[i, j, self.labels.index(label)])


@dataclass(frozen=True)
class ChartTables:
    """Best-score table and argmax decisions of one CKY pass."""

    best: np.ndarray  # (n+1, n+1) best subtree score per span
    label: np.ndarray  # (n+1, n+1) argmax label index per span
    split: np.ndarray  # (n+1, n+1) argmax split per span, -1 for length 1


@dataclass(frozen=True)
class DecodeResult:
    tree: EntityTree
    entities: EntitySet
    score: float


def tree_score(chart: SpanScoreChart, entities: EntitySet) -> float:
    """Sum of chart scores over the entity triplets (O spans contribute 0)."""
    total = 0.0
    for span in entities:
        total += chart.score(span.start, span.end, span.label)
    return total


def _cky(scores: np.ndarray, n: int) -> ChartTables:
    # Ties on the label axis resolve to the lowest index via argmax.
    label_best = scores.max(axis=2)
    label_idx = scores.argmax(axis=2)
    best = np.zeros((n + 1, n + 1))
    split = np.full((n + 1, n + 1), -1, dtype=np.intp)
    row_best = [best[i] for i in range(n + 1)]  # avoid 2-D indexing in the loop
    for length in range(1, n + 1):
        for i in range(0, n - length + 1):
            j = i + length
            own = label_best[i, j]
            if length == 1:
                best[i, j] = own
                continue
            best_split_score = -np.inf
            best_k = -1
            left = row_best[i]
            for k in range(i + 1, j):
                candidate = left[k] + row_best[k][j]
                if candidate > best_split_score:
                    best_split_score = candidate
                    best_k = k
            best[i, j] = own + best_split_score
            split[i, j] = best_k
    return ChartTables(best, label_idx, split)


def _backtrace(tables: ChartTables, labels: LabelSet, i: int, j: int) -> EntityTree:
    label = labels.labels[tables.label[i, j]]
    k = tables.split[i, j]
    if k < 0:
        return EntityTree(i, j, label)
    left = _backtrace(tables, labels, i, k)
    right = _backtrace(tables, labels, k, j)
    return EntityTree(i, j, label, (left, right))


def _decode(scores: np.ndarray, n: int, labels: LabelSet) -> DecodeResult:
    if not np.isfinite(scores).all():
        raise ValidationError("cannot decode a chart with non-finite scores")
    tables = _cky(scores, n)
    tree = _backtrace(tables, labels, 0, n)
    return DecodeResult(tree, tree_to_entity_set(tree), float(tables.best[0, n]))


def cky_decode(chart: SpanScoreChart) -> DecodeResult:
    """Highest-scoring full nesting tree of the chart, decoded bottom-up."""
    return _decode(chart.scores, chart.n, chart.labels)


def loss_augmented_decode(chart: SpanScoreChart, gold: EntitySet) -> DecodeResult:
    """CKY over scores raised by 1 for every span label that disagrees with gold.

    Unlabeled gold spans count as O, so the augmented maximum equals the
    inner maximization of the structured hinge objective; the returned score
    includes the Hamming term.
    """
    augmented = chart.scores + 1.0
    augmented[:, :, 0] -= 1.0  # default gold label everywhere is O
    for span in gold:
        if span.end > chart.n:
            raise ValidationError(
                f"gold span ({span.start}, {span.end}) outside chart"
            )
        label_idx = chart.labels.index(span.label)
        augmented[span.start, span.end, 0] += 1.0
        augmented[span.start, span.end, label_idx] -= 1.0
    return _decode(augmented, chart.n, chart.labels)


def _best_label(scores: np.ndarray, i: int, j: int, n_labels: int) -> tuple[float, int]:
    best = scores[i, j, 0]
    best_l = 0
    for l in range(1, n_labels):
        value = scores[i, j, l]
        if value > best:
            best = value
            best_l = l
    return best, best_l


def _enumerate_trees(scores, i, j, labels):
    """All binary trees over (i, j), ordered by (split, left, right).

    Label choice per span is independent of the shape, so each shape carries
    its exhaustive per-span label argmax; summation order matches the CKY
    recursion (own + (left + right)) so scores compare bit for bit.
    """
    own, own_l = _best_label(scores, i, j, len(labels))
    if j - i == 1:
        yield own, EntityTree(i, j, labels.labels[own_l])
        return
    for k in range(i + 1, j):
        for left_score, left in _enumerate_trees(scores, i, k, labels):
            for right_score, right in _enumerate_trees(scores, k, j, labels):
                yield own + (left_score + right_score), EntityTree(
                    i, j, labels.labels[own_l], (left, right)
                )


def brute_force_decode(chart: SpanScoreChart) -> DecodeResult:
    """Exhaustive maximization over every tree shape; oracle for cky_decode."""
    if chart.n > BRUTE_FORCE_MAX_N:
        raise ValidationError(
            f"brute force decoding is limited to n <= {BRUTE_FORCE_MAX_N}"
        )
    best_score = -np.inf
    best_tree = None
    for score, tree in _enumerate_trees(chart.scores, 0, chart.n, chart.labels):
        if score > best_score:
            best_score = score
            best_tree = tree
    assert best_tree is not None
    return DecodeResult(best_tree, tree_to_entity_set(best_tree), float(best_score))
