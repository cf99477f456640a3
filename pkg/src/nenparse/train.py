"""Margin training of the span scorer.

The objective per sentence is the structured hinge
max(0, max_T [s(T) + Delta(T, gold)] - s(gold)) where the inner maximum is
solved exactly by loss-augmented CKY.  The subgradient treats the augmented
argmax as fixed: it is the gradient of (score of predicted entity spans -
score of gold spans), propagated through the whole scorer by the autodiff
tape.  Optimization is Adam with bias correction and global-norm gradient
clipping; a finite-difference checker validates the analytic gradients per
parameter group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .chart import DecodeResult, SpanScoreChart, loss_augmented_decode, tree_score
from .core import EntitySet, Sentence, ValidationError
from .corpus_stats import NGramLexicon
from .model import DropoutRates, ModelParams, TrainContext, decode_sentence, forward_chart

GradientSet = dict  # parameter name -> ndarray, shape-congruent with the model


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    clip_norm: float = 5.0
    eval_every: int = 1  # dev evaluation cadence, in epochs
    stop_f1: float | None = None  # stop early once dev F1 reaches this
    dropout: DropoutRates = field(default_factory=DropoutRates)

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.adam_eps <= 0:
            raise ValidationError("learning rate and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("Adam betas must lie in (0, 1)")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.eval_every < 1:
            raise ValidationError("eval cadence must be >= 1")


def hinge_loss(chart: SpanScoreChart, gold: EntitySet) -> tuple[float, DecodeResult]:
    """Structured hinge value and the augmented maximizer that attains it."""
    augmented = loss_augmented_decode(chart, gold)
    loss = augmented.score - tree_score(chart, gold)
    return (max(0.0, loss), augmented)


def _margin_terms(
    predicted: EntitySet, gold: EntitySet
) -> list[tuple[int, int, str, float]]:
    """Signed span terms of s(predicted) - s(gold); shared triplets cancel."""
    coeffs: dict[tuple[int, int, str], float] = {}
    for span in predicted:
        key = (span.start, span.end, span.label)
        coeffs[key] = coeffs.get(key, 0.0) + 1.0
    for span in gold:
        key = (span.start, span.end, span.label)
        coeffs[key] = coeffs.get(key, 0.0) - 1.0
    return [(i, j, l, c) for (i, j, l), c in sorted(coeffs.items()) if c != 0.0]


def zero_gradients(params: ModelParams) -> GradientSet:
    return {name: np.zeros_like(t.value) for name, t in params.tensors.items()}


def collect_gradients(params: ModelParams) -> GradientSet:
    grads = {}
    for name, t in params.tensors.items():
        grads[name] = t.grad.copy() if t.grad is not None else np.zeros_like(t.value)
    return grads


def backward(
    sentence: Sentence,
    params: ModelParams,
    lexicon: NGramLexicon | None,
    gold: EntitySet,
    train: TrainContext | None = None,
) -> tuple[float, GradientSet]:
    """Hinge loss of one sentence and its exact subgradient.

    Dropout masks, when a train context is given, are drawn once in the
    forward pass and shared with the backward pass through the tape.  A
    zero loss short-circuits to all-zero gradients.
    """
    result = forward_chart(params, sentence, lexicon, train)
    loss, augmented = hinge_loss(result.chart, gold)
    if loss <= 0.0:
        return 0.0, zero_gradients(params)

    terms = _margin_terms(augmented.entities, gold)
    if not terms:
        return loss, zero_gradients(params)
    rows = np.array([result.span_row(i, j) for i, j, _, _ in terms], dtype=np.intp)
    cols = np.array(
        [params.labels.index(l) - 1 for _, _, l, _ in terms], dtype=np.intp
    )
    coeffs = np.array([c for _, _, _, c in terms])

    params.zero_grad()
    picked = ad.take(result.span_scores, (rows, cols))
    margin = ad.reduce_sum(ad.mul(picked, ad.constant(coeffs)))
    ad.backward(margin)
    grads = collect_gradients(params)
    params.zero_grad()
    return loss, grads


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Adam with bias correction; moment state persists across steps."""

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self.m = {name: np.zeros_like(t.value) for name, t in params.tensors.items()}
        self.v = {name: np.zeros_like(t.value) for name, t in params.tensors.items()}

    def step(self, grads: GradientSet) -> None:
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        for name, param in self.params.tensors.items():
            g = grads[name]
            if g.shape != param.value.shape:
                raise ValidationError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name} of shape {param.value.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1**t)
            v_hat = v / (1 - cfg.beta2**t)
            param.value -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def clip_gradients(grads: GradientSet, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def accumulate(into: GradientSet, grads: GradientSet, weight: float = 1.0) -> None:
    for name, g in grads.items():
        into[name] += weight * g


# -- training loop ------------------------------------------------------------


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    mean_loss: float
    dev_precision: float
    dev_recall: float
    dev_f1: float

    def line(self) -> str:
        return (
            f"{self.epoch}\t{self.mean_loss:.6f}\t{self.dev_precision:.4f}"
            f"\t{self.dev_recall:.4f}\t{self.dev_f1:.4f}"
        )


Dataset = Sequence  # of (Sentence, EntitySet) pairs


def evaluate_dataset(
    params: ModelParams, data: Dataset, lexicon: NGramLexicon | None
):
    """Dev-style evaluation: decode every sentence with dropout off."""
    from .evaluation import evaluate

    pred = {}
    gold = {}
    for sentence, entities in data:
        pred[sentence.id] = decode_sentence(params, sentence, lexicon).entities
        gold[sentence.id] = entities
    return evaluate(pred, gold)


def train(
    train_data: Dataset,
    dev_data: Dataset,
    params: ModelParams,
    lexicon: NGramLexicon | None,
    config: TrainConfig,
    log_fn: Callable[[EpochLog], None] | None = None,
) -> tuple[ModelParams, list[EpochLog]]:
    """Seeded minibatch hinge training with dev-based model selection.

    Shuffling, dropout, and updates are all driven by one generator seeded
    from the config, so runs are bitwise reproducible.  Returns the
    parameters of the epoch with the highest dev F1 (earliest on ties) and
    the per-epoch log.
    """
    if not train_data:
        raise ValidationError("training data is empty")
    if not dev_data:
        raise ValidationError("dev data is empty")
    if config.epochs == 0:
        return params, []

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(params, config)
    logs: list[EpochLog] = []
    best: ModelParams | None = None
    best_f1 = -1.0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_data))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            total = zero_gradients(params)
            batch_loss = 0.0
            for idx in batch:
                sentence, gold = train_data[idx]
                loss, grads = backward(
                    sentence,
                    params,
                    lexicon,
                    gold,
                    TrainContext(rng, config.dropout),
                )
                if not math.isfinite(loss):
                    raise ValidationError(
                        f"non-finite loss on sentence {sentence.id!r} "
                        f"at epoch {epoch}"
                    )
                batch_loss += loss
                accumulate(total, grads)
            scale = 1.0 / len(batch)
            for g in total.values():
                g *= scale
            clip_gradients(total, config.clip_norm)
            optimizer.step(total)
            epoch_loss += batch_loss

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            metrics = evaluate_dataset(params, dev_data, lexicon)
            entry = EpochLog(
                epoch,
                epoch_loss / len(train_data),
                metrics.precision,
                metrics.recall,
                metrics.f1,
            )
            logs.append(entry)
            if log_fn is not None:
                log_fn(entry)
            if metrics.f1 > best_f1:
                best_f1 = metrics.f1
                best = params.clone()
            if config.stop_f1 is not None and metrics.f1 >= config.stop_f1:
                break

    return (best if best is not None else params), logs


# -- gradient verification ----------------------------------------------------


@dataclass(frozen=True)
class GroupCheck:
    name: str
    max_rel_err: float
    checked: int


@dataclass(frozen=True)
class GradCheckReport:
    groups: tuple[GroupCheck, ...]
    tolerance: float
    loss: float
    passed: bool

    def failing(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups if g.max_rel_err >= self.tolerance)


def _relative_error(a: float, b: float) -> float:
    denom = max(abs(a), abs(b), 1e-8)
    return abs(a - b) / denom


def grad_check(
    params: ModelParams,
    sentence: Sentence,
    gold: EntitySet,
    lexicon: NGramLexicon | None = None,
    tolerance: float = 1e-4,
    step: float = 1e-4,
    max_entries_per_group: int = 16,
    seed: int = 0,
    analytic: GradientSet | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    Runs with dropout off.  The margin structure (augmented argmax and gold)
    is frozen from the unperturbed chart, so the differenced function is the
    smooth span-score margin rather than the kinked hinge.  Up to
    ``max_entries_per_group`` coordinates per parameter tensor are probed.
    """
    result = forward_chart(params, sentence, lexicon)
    loss, augmented = hinge_loss(result.chart, gold)
    if loss <= 0.0:
        groups = tuple(
            GroupCheck(name, 0.0, 0) for name in params.names()
        )
        return GradCheckReport(groups, tolerance, 0.0, True)

    terms = _margin_terms(augmented.entities, gold)
    if analytic is None:
        _, analytic = backward(sentence, params, lexicon, gold)

    def margin_value() -> float:
        chart = forward_chart(params, sentence, lexicon).chart
        return sum(c * chart.scores[i, j, params.labels.index(l)] for i, j, l, c in terms)

    rng = np.random.default_rng(seed)
    groups: list[GroupCheck] = []
    for name, param in params.tensors.items():
        flat = param.value.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        size = flat.shape[0]
        if size == 0:
            groups.append(GroupCheck(name, 0.0, 0))
            continue
        count = min(max_entries_per_group, size)
        picks = rng.choice(size, size=count, replace=False)
        worst = 0.0
        for k in picks:
            original = flat[k]
            flat[k] = original + step
            upper = margin_value()
            flat[k] = original - step
            lower = margin_value()
            flat[k] = original
            numeric = (upper - lower) / (2 * step)
            worst = max(worst, _relative_error(numeric, float(grad_flat[k])))
        groups.append(GroupCheck(name, worst, count))
    passed = all(g.max_rel_err < tolerance for g in groups)
    return GradCheckReport(tuple(groups), tolerance, loss, passed)
