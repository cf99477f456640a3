"""Exact-match scoring of nested entity predictions.

A predicted span counts as correct only when its exact (start, end, label)
triplet appears in the gold annotation of the same sentence; precision,
recall, and F1 are micro-averaged over the corpus.  The adaptation runner
measures the effect of blending n-grams from an unlabeled out-of-domain
corpus into a trained model's lexicon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import EntitySet, ValidationError
from .corpus_stats import NGramLexicon, merge_lexicon
from .model import ModelParams, decode_sentence, extend_ngram_embeddings


@dataclass(frozen=True)
class Metrics:
    true_positives: int
    predicted: int
    gold: int

    @property
    def precision(self) -> float:
        return self.true_positives / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.true_positives / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def line(self) -> str:
        return f"{self.precision:.4f}\t{self.recall:.4f}\t{self.f1:.4f}"


def evaluate(
    pred: Mapping[str, EntitySet], gold: Mapping[str, EntitySet]
) -> Metrics:
    """Micro-averaged exact-triplet precision/recall/F1 over aligned sentences."""
    if set(pred) != set(gold):
        missing = set(gold) - set(pred)
        extra = set(pred) - set(gold)
        raise ValidationError(
            f"sentence ids do not align (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]})"
        )
    tp = 0
    n_pred = 0
    n_gold = 0
    for sid, gold_set in gold.items():
        pred_set = pred[sid]
        gold_triplets = set(gold_set.as_triplets())
        n_gold += len(gold_triplets)
        n_pred += len(pred_set)
        tp += sum(1 for t in pred_set.as_triplets() if t in gold_triplets)
    return Metrics(tp, n_pred, n_gold)


def evaluate_model(
    params: ModelParams,
    data: Sequence,  # (Sentence, EntitySet) pairs
    lexicon: NGramLexicon | None,
) -> Metrics:
    pred = {s.id: decode_sentence(params, s, lexicon).entities for s, _ in data}
    gold = {s.id: entities for s, entities in data}
    return evaluate(pred, gold)


@dataclass(frozen=True)
class AdaptationResult:
    before: Metrics
    after: Metrics
    merged_lexicon: NGramLexicon
    adapted_params: ModelParams


def run_adaptation(
    params: ModelParams,
    base_lexicon: NGramLexicon,
    external: Sequence,  # unlabeled Sentence collection
    test_data: Sequence,  # (Sentence, EntitySet) pairs
    t_pmi: float | None = None,
    t_freq: int | None = None,
    retrain: bool = False,
    retrain_data: Sequence | None = None,
    retrain_dev: Sequence | None = None,
    retrain_config=None,
    seed: int = 0,
) -> AdaptationResult:
    """Evaluate a trained model before and after a lexicon merge.

    N-grams extracted from the external unlabeled corpus are blended into
    the base lexicon; embeddings for the new entries are freshly
    initialized (warm-started at the trained per-bucket centroids).  With
    ``retrain`` the model is retrained on its original labeled data under
    the unchanged configuration before the second evaluation.
    """
    before = evaluate_model(params, test_data, base_lexicon)
    merged = merge_lexicon(base_lexicon, list(external), base_lexicon.kind, t_pmi, t_freq)
    if len(merged) == len(base_lexicon):
        adapted = params
    else:
        adapted = extend_ngram_embeddings(params, base_lexicon, merged, seed=seed)
    if retrain:
        if retrain_data is None or retrain_dev is None or retrain_config is None:
            raise ValidationError(
                "retrain=True needs retrain_data, retrain_dev, and retrain_config"
            )
        from .train import train

        adapted, _ = train(retrain_data, retrain_dev, adapted, merged, retrain_config)
    after = evaluate_model(adapted, test_data, merged)
    return AdaptationResult(before, after, merged, adapted)
