"""Nested named entity recognition as holistic chart parsing.

The pipeline: corpus statistics build an n-gram lexicon, a trainable span
scorer (embeddings, self-attention encoder, lexicon span attention, MLP
head) fills a span/label chart, and exact CKY search decodes the full
nesting tree of a sentence in one pass.  Training uses a Hamming-augmented
hinge objective with exact subgradients.
"""

from .core import (
    EMPTY_ENTITY_SET,
    EntitySet,
    EntityTree,
    LabelSet,
    LabeledSpan,
    O_LABEL,
    Sentence,
    Token,
    ValidationError,
    entity_set_to_tree,
    make_sentence,
    tree_to_entity_set,
    validate_entity_set,
)

__version__ = "0.1.0"

__all__ = [
    "EMPTY_ENTITY_SET",
    "EntitySet",
    "EntityTree",
    "LabelSet",
    "LabeledSpan",
    "O_LABEL",
    "Sentence",
    "Token",
    "ValidationError",
    "entity_set_to_tree",
    "make_sentence",
    "tree_to_entity_set",
    "validate_entity_set",
    "__version__",
]
