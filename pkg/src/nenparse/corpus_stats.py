"""Corpus-level n-gram statistics and lexicon construction.

Counts unigrams, within-sentence adjacent pairs, and n-grams up to length 9
over either word forms or POS tags.  Adjacent-pair PMI (natural log, MLE
probabilities) or raw pair frequency drives a threshold segmentation of each
sentence; the resulting segments become lexicon entries.  For POS-level
statistics, segmentation runs on the tag sequence and each segment is mapped
back to the word n-gram at the same positions, one entry per occurrence.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator, Sequence

from .core import Sentence, ValidationError

MAX_NGRAM = 9

NEG_INF = float("-inf")


class FeatureKind(Enum):
    WORD_PMI = "word-pmi"
    WORD_FREQ = "word-freq"
    POS_PMI = "pos-pmi"
    POS_FREQ = "pos-freq"

    @property
    def level(self) -> str:
        return "word" if self.value.startswith("word") else "pos"

    @property
    def uses_pmi(self) -> bool:
        return self.value.endswith("pmi")


# Word thresholds are permissive; POS pairs co-occur so often that both
# thresholds sit higher to filter pointless tag collocations.
DEFAULT_T_PMI = {"word": 0.0, "pos": 0.5}
DEFAULT_T_FREQ = {"word": 2, "pos": 5}


@dataclass
class CountTable:
    level: str
    unigrams: Counter
    pairs: Counter
    ngrams: Counter
    total_tokens: int
    total_pairs: int


def _token_seq(sentence: Sentence, level: str) -> tuple[str, ...]:
    return sentence.forms if level == "word" else sentence.pos_tags


def count_corpus(sentences: Sequence[Sentence], level: str) -> CountTable:
    """Exact corpus counts at the word or POS level.

    Pair counts cover within-sentence adjacency only; n-gram counts cover
    every contiguous subsequence of length 1..9.
    """
    if level not in ("word", "pos"):
        raise ValidationError(f"unknown counting level {level!r}")
    if not sentences:
        raise ValidationError("cannot count an empty corpus")
    unigrams: Counter = Counter()
    pairs: Counter = Counter()
    ngrams: Counter = Counter()
    total_tokens = 0
    total_pairs = 0
    for sentence in sentences:
        seq = _token_seq(sentence, level)
        n = len(seq)
        total_tokens += n
        total_pairs += n - 1
        unigrams.update(seq)
        for k in range(n - 1):
            pairs[(seq[k], seq[k + 1])] += 1
        for start in range(n):
            for length in range(1, min(MAX_NGRAM, n - start) + 1):
                ngrams[seq[start : start + length]] += 1
    return CountTable(level, unigrams, pairs, ngrams, total_tokens, total_pairs)


def pmi(table: CountTable, first: str, second: str) -> float:
    """Pointwise mutual information of an adjacent token pair, in nats.

    Returns -inf when the pair never co-occurs or either token is unknown;
    downstream segmentation treats that as a forced split.
    """
    pair_count = table.pairs.get((first, second), 0)
    c1 = table.unigrams.get(first, 0)
    c2 = table.unigrams.get(second, 0)
    if pair_count == 0 or c1 == 0 or c2 == 0:
        return NEG_INF
    p_pair = pair_count / table.total_pairs
    p1 = c1 / table.total_tokens
    p2 = c2 / table.total_tokens
    return math.log(p_pair / (p1 * p2))


def _segment_bounds(
    n: int, cut_after: Callable[[int], bool]
) -> list[tuple[int, int]]:
    """Split [0, n) at positions where cut_after(k) holds between k and k+1.

    A cut is also forced as soon as a segment reaches MAX_NGRAM tokens, so
    no segment ever exceeds length 9.
    """
    bounds: list[tuple[int, int]] = []
    start = 0
    for k in range(n - 1):
        if cut_after(k) or (k + 1 - start) >= MAX_NGRAM:
            bounds.append((start, k + 1))
            start = k + 1
    if n > 0:
        bounds.append((start, n))
    return bounds


def segment_by_pmi(
    tokens: Sequence[str], table: CountTable, t_pmi: float
) -> list[list[str]]:
    """Split a token sequence wherever adjacent-pair PMI drops below t_pmi."""
    tokens = list(tokens)
    bounds = _segment_bounds(
        len(tokens), lambda k: pmi(table, tokens[k], tokens[k + 1]) < t_pmi
    )
    return [tokens[a:b] for a, b in bounds]


def segment_by_freq(
    tokens: Sequence[str], table: CountTable, t_freq: int
) -> list[list[str]]:
    """Split a token sequence wherever the adjacent-pair count drops below t_freq."""
    tokens = list(tokens)
    bounds = _segment_bounds(
        len(tokens),
        lambda k: table.pairs.get((tokens[k], tokens[k + 1]), 0) < t_freq,
    )
    return [tokens[a:b] for a, b in bounds]


@dataclass(frozen=True)
class LexiconEntry:
    ngram: tuple[str, ...]
    embedding_id: int
    kind: FeatureKind
    count: int


@dataclass(frozen=True)
class NGramLexicon:
    """N-grams selected by corpus statistics, with dense embedding ids."""

    kind: FeatureKind
    entries: dict

    def __post_init__(self) -> None:
        ids = sorted(e.embedding_id for e in self.entries.values())
        if ids != list(range(len(ids))):
            raise ValidationError("lexicon embedding ids must be dense and unique")
        for ngram in self.entries:
            if not (1 <= len(ngram) <= MAX_NGRAM):
                raise ValidationError(f"lexicon n-gram of bad length: {ngram!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ngram: tuple[str, ...]) -> bool:
        return ngram in self.entries

    def get(self, ngram: tuple[str, ...]) -> LexiconEntry | None:
        return self.entries.get(ngram)

    def __iter__(self) -> Iterator[LexiconEntry]:
        return iter(sorted(self.entries.values(), key=lambda e: e.embedding_id))

    @property
    def max_length(self) -> int:
        return max((len(g) for g in self.entries), default=0)


def _resolve_thresholds(
    kind: FeatureKind, t_pmi: float | None, t_freq: int | None
) -> tuple[float, int]:
    if t_pmi is None:
        t_pmi = DEFAULT_T_PMI[kind.level]
    if t_freq is None:
        t_freq = DEFAULT_T_FREQ[kind.level]
    return float(t_pmi), int(t_freq)


def _segment_corpus(
    sentences: Sequence[Sentence],
    kind: FeatureKind,
    t_pmi: float | None,
    t_freq: int | None,
) -> Counter:
    """Word n-gram occurrence counts for every segment the criterion yields."""
    t_pmi, t_freq = _resolve_thresholds(kind, t_pmi, t_freq)
    table = count_corpus(sentences, kind.level)
    occurrences: Counter = Counter()
    for sentence in sentences:
        seq = _token_seq(sentence, kind.level)
        if kind.uses_pmi:
            cut = lambda k: pmi(table, seq[k], seq[k + 1]) < t_pmi
        else:
            cut = lambda k: table.pairs.get((seq[k], seq[k + 1]), 0) < t_freq
        for a, b in _segment_bounds(len(seq), cut):
            # POS segments map back to the word n-gram at the same positions.
            occurrences[sentence.forms[a:b]] += 1
    return occurrences


def build_lexicon(
    sentences: Sequence[Sentence],
    kind: FeatureKind,
    t_pmi: float | None = None,
    t_freq: int | None = None,
) -> NGramLexicon:
    """Segment a corpus and collect the segments into a lexicon.

    Embedding ids are assigned in lexicographic order of the n-gram text, so
    two builds over the same corpus are identical byte for byte.
    """
    if not sentences:
        raise ValidationError("cannot build a lexicon from an empty corpus")
    occurrences = _segment_corpus(sentences, kind, t_pmi, t_freq)
    entries = {}
    for idx, ngram in enumerate(sorted(occurrences, key=lambda g: " ".join(g))):
        entries[ngram] = LexiconEntry(ngram, idx, kind, occurrences[ngram])
    return NGramLexicon(kind, entries)


def merge_lexicon(
    base: NGramLexicon,
    external: Sequence[Sentence],
    kind: FeatureKind,
    t_pmi: float | None = None,
    t_freq: int | None = None,
) -> NGramLexicon:
    """Blend n-grams from an external unlabeled corpus into an existing lexicon.

    Base entries keep their embedding ids (a trained model's n-gram
    embeddings stay valid); overlapping entries sum their counts; new
    entries get fresh ids appended after the existing ones, in lexicographic
    order among themselves.
    """
    if kind is not base.kind:
        raise ValidationError(
            f"lexicon kind mismatch: base is {base.kind.value}, merge asked "
            f"for {kind.value}"
        )
    if not external:
        return base
    new_counts = _segment_corpus(external, kind, t_pmi, t_freq)
    entries = {}
    for ngram, entry in base.entries.items():
        extra = new_counts.pop(ngram, 0)
        entries[ngram] = LexiconEntry(ngram, entry.embedding_id, kind, entry.count + extra)
    next_id = len(base.entries)
    for ngram in sorted(new_counts, key=lambda g: " ".join(g)):
        entries[ngram] = LexiconEntry(ngram, next_id, kind, new_counts[ngram])
        next_id += 1
    return NGramLexicon(kind, entries)


# ---------------------------------------------------------------------------
# Lexicon file format: one entry per line, tab-separated, with a header line
# naming the format version and the feature kind.

LEXICON_HEADER_PREFIX = "#nelex v1 "


def lexicon_to_text(lexicon: NGramLexicon) -> str:
    lines = [f"{LEXICON_HEADER_PREFIX}{lexicon.kind.value}"]
    for entry in lexicon:
        lines.append(
            "\t".join(
                (
                    " ".join(entry.ngram),
                    entry.kind.value,
                    str(entry.count),
                    str(entry.embedding_id),
                )
            )
        )
    return "\n".join(lines) + "\n"


def lexicon_checksum(lexicon: NGramLexicon) -> str:
    """SHA-256 of the canonical text serialization."""
    return hashlib.sha256(lexicon_to_text(lexicon).encode("utf-8")).hexdigest()


def save_lexicon(lexicon: NGramLexicon, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(lexicon_to_text(lexicon))


def load_lexicon(path) -> NGramLexicon:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(LEXICON_HEADER_PREFIX):
        raise ValidationError(f"{path}: missing lexicon header")
    try:
        kind = FeatureKind(lines[0][len(LEXICON_HEADER_PREFIX) :].strip())
    except ValueError:
        raise ValidationError(f"{path}: unknown feature kind in header") from None
    entries = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ValidationError(f"{path}:{lineno}: expected 4 tab-separated fields")
        ngram = tuple(fields[0].split(" "))
        try:
            entry_kind = FeatureKind(fields[1])
            count = int(fields[2])
            embedding_id = int(fields[3])
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: malformed entry") from None
        if entry_kind is not kind:
            raise ValidationError(f"{path}:{lineno}: entry kind differs from header")
        if ngram in entries:
            raise ValidationError(f"{path}:{lineno}: duplicate n-gram")
        entries[ngram] = LexiconEntry(ngram, embedding_id, kind, count)
    return NGramLexicon(kind, entries)
