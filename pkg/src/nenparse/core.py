"""Domain types for nested named entity recognition.

A sentence is a sequence of tokens, each carrying a surface form and a POS
tag.  Entity annotations are half-open token spans (start inclusive, end
exclusive) labeled from a closed inventory whose index 0 is always the null
label ``O``.  A validated span collection for one sentence (EntitySet) never
contains ``O`` and never contains a crossing pair, so it embeds into a
nesting tree (EntityTree) and back without loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

O_LABEL = "O"

DUPLICATE_POLICIES = ("error", "first", "last")


class ValidationError(ValueError):
    """Input data violates a structural constraint."""


@dataclass(frozen=True)
class Token:
    form: str
    pos: str

    def __post_init__(self) -> None:
        if not self.form:
            raise ValidationError("token form must be non-empty")
        if not self.pos:
            raise ValidationError("token POS tag must be non-empty")


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValidationError(f"sentence {self.id!r} has no tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> tuple[str, ...]:
        return tuple(t.form for t in self.tokens)

    @property
    def pos_tags(self) -> tuple[str, ...]:
        return tuple(t.pos for t in self.tokens)


def make_sentence(sid: str, forms: Sequence[str], tags: Sequence[str]) -> Sentence:
    if len(forms) != len(tags):
        raise ValidationError(
            f"sentence {sid!r}: {len(forms)} tokens but {len(tags)} POS tags"
        )
    return Sentence(sid, tuple(Token(f, p) for f, p in zip(forms, tags)))


@dataclass(frozen=True)
class LabelSet:
    """Ordered label inventory; index 0 is reserved for the null label O."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels or self.labels[0] != O_LABEL:
            raise ValidationError("label set must start with the null label O")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("label names must be unique")

    @classmethod
    def from_entity_labels(cls, names: Iterable[str]) -> "LabelSet":
        ordered: list[str] = []
        for name in names:
            if name == O_LABEL:
                raise ValidationError("O is implicit and cannot be an entity label")
            if name not in ordered:
                ordered.append(name)
        return cls((O_LABEL, *ordered))

    @property
    def entity_labels(self) -> tuple[str, ...]:
        return self.labels[1:]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown label {label!r}") from None

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.labels


@dataclass(frozen=True, order=True)
class LabeledSpan:
    """Half-open token span [start, end) with an entity label."""

    start: int
    end: int
    label: str

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValidationError(
                f"bad span bounds ({self.start}, {self.end}): need 0 <= start < end"
            )

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class EntitySet:
    """Validated, canonically ordered entity spans of one sentence."""

    spans: tuple[LabeledSpan, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "spans", tuple(sorted(set(self.spans))))

    def __len__(self) -> int:
        return len(self.spans)

    def __iter__(self) -> Iterator[LabeledSpan]:
        return iter(self.spans)

    def __contains__(self, span: LabeledSpan) -> bool:
        return span in self.spans

    def as_triplets(self) -> tuple[tuple[int, int, str], ...]:
        return tuple((s.start, s.end, s.label) for s in self.spans)


EMPTY_ENTITY_SET = EntitySet(())


@dataclass(frozen=True)
class EntityTree:
    """Nesting tree node over [start, end); label may be the null label O."""

    start: int
    end: int
    label: str
    children: tuple["EntityTree", ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "children", tuple(self.children))
        if not (0 <= self.start < self.end):
            raise ValidationError(f"bad tree span ({self.start}, {self.end})")

    def validate_structure(self) -> None:
        """Check child containment and sibling ordering recursively."""
        prev_end = self.start
        for child in self.children:
            if child.start < prev_end:
                raise ValidationError(
                    f"children of ({self.start}, {self.end}) overlap or are unordered"
                )
            if child.start < self.start or child.end > self.end:
                raise ValidationError(
                    f"child ({child.start}, {child.end}) escapes "
                    f"({self.start}, {self.end})"
                )
            if (child.start, child.end) == (self.start, self.end):
                raise ValidationError(
                    f"child duplicates parent span ({self.start}, {self.end})"
                )
            prev_end = child.end
            child.validate_structure()

    def walk(self) -> Iterator["EntityTree"]:
        yield self
        for child in self.children:
            yield from child.walk()


def _spans_cross(a: LabeledSpan, b: LabeledSpan) -> bool:
    if a.end <= b.start or b.end <= a.start:
        return False  # disjoint
    if a.start <= b.start and b.end <= a.end:
        return False  # a contains b
    if b.start <= a.start and a.end <= b.end:
        return False  # b contains a
    return True


def validate_entity_set(
    n: int,
    spans: Iterable[LabeledSpan | tuple[int, int, str]],
    label_set: LabelSet | None = None,
    policy: str = "error",
) -> EntitySet:
    """Validate raw (start, end, label) triplets against a sentence of length n.

    Checks bounds, the no-crossing constraint of nested annotation, and label
    membership when a label set is given.  Duplicate (start, end) pairs are
    resolved per ``policy``: "error" rejects them, "first"/"last" keep the
    first or last label seen in input order.
    """
    if n < 1:
        raise ValidationError(f"sentence length must be >= 1, got {n}")
    if policy not in DUPLICATE_POLICIES:
        raise ValidationError(f"unknown duplicate policy {policy!r}")

    resolved: dict[tuple[int, int], LabeledSpan] = {}
    for raw in spans:
        span = raw if isinstance(raw, LabeledSpan) else LabeledSpan(*raw)
        if span.end > n:
            raise ValidationError(
                f"span ({span.start}, {span.end}) exceeds sentence length {n}"
            )
        if span.label == O_LABEL:
            raise ValidationError("entity sets may not contain the null label O")
        if label_set is not None and span.label not in label_set:
            raise ValidationError(f"unknown label {span.label!r}")
        key = (span.start, span.end)
        if key in resolved and resolved[key].label != span.label:
            if policy == "error":
                raise ValidationError(
                    f"duplicate span {key} with labels "
                    f"{resolved[key].label!r} and {span.label!r}"
                )
            if policy == "first":
                continue
        resolved[key] = span

    ordered = sorted(resolved.values())
    for idx, a in enumerate(ordered):
        for b in ordered[idx + 1 :]:
            if b.start >= a.end:
                break  # sorted by start; later spans cannot cross a
            if _spans_cross(a, b):
                raise ValidationError(
                    f"crossing spans ({a.start}, {a.end}) and ({b.start}, {b.end})"
                )
    return EntitySet(tuple(ordered))


def entity_set_to_tree(entities: EntitySet, n: int) -> EntityTree:
    """Embed a validated entity set into its nesting tree over [0, n).

    Non-O nodes are exactly the entity spans.  An O root is added when no
    entity covers the whole sentence, and one O node fills each maximal gap
    so that every internal node's children tile its range.
    """
    if n < 1:
        raise ValidationError(f"sentence length must be >= 1, got {n}")
    for span in entities:
        if span.end > n:
            raise ValidationError(
                f"span ({span.start}, {span.end}) exceeds sentence length {n}"
            )

    # Outermost-first order: a span precedes everything it contains.
    ordered = sorted(entities, key=lambda s: (s.start, -s.length, s.label))

    root_label = O_LABEL
    if ordered and (ordered[0].start, ordered[0].end) == (0, n):
        root_label = ordered[0].label
        ordered = ordered[1:]

    # Stack-based containment build; no crossings by precondition.
    sentinel = (0, n, root_label, [])  # (start, end, label, children)
    stack: list[tuple[int, int, str, list]] = [sentinel]

    def close_to(start: int) -> None:
        while len(stack) > 1 and stack[-1][1] <= start:
            finished = stack.pop()
            stack[-1][3].append(finished)

    for span in ordered:
        close_to(span.start)
        node = (span.start, span.end, span.label, [])
        stack[-1][3].append(node)
        stack.append(node)
    close_to(n)
    while len(stack) > 1:
        finished = stack.pop()
        stack[-1][3].append(finished)

    def build(node: tuple[int, int, str, list]) -> EntityTree:
        start, end, label, kids = node
        if not kids:
            return EntityTree(start, end, label)
        children: list[EntityTree] = []
        cursor = start
        for kid in kids:
            if kid[0] > cursor:
                children.append(EntityTree(cursor, kid[0], O_LABEL))
            children.append(build(kid))
            cursor = kid[1]
        if cursor < end:
            children.append(EntityTree(cursor, end, O_LABEL))
        return EntityTree(start, end, label, tuple(children))

    # A lone child list under an O sentinel that is itself the full span
    # would duplicate the parent; that can only happen for a (0, n) entity,
    # which was promoted to root_label above.
    return build(sentinel)


def tree_to_entity_set(tree: EntityTree) -> EntitySet:
    """Collect the non-O labeled spans of a nesting tree."""
    spans = [
        LabeledSpan(node.start, node.end, node.label)
        for node in tree.walk()
        if node.label != O_LABEL
    ]
    return EntitySet(tuple(spans))
