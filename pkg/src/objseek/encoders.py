"""Text-side encoding: tokenization and the embedding-mean text encoder.

Query strings and object words are mapped into the shared feature space by
averaging the embeddings of their known words and renormalizing to unit
length.  Out-of-vocabulary words contribute nothing; a query with no known
word encodes to the exact zero vector.
"""

from __future__ import annotations

import string

import numpy as np

from .errors import IndexOutOfRange
from .gallery import Dataset

_EDGE_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip ASCII punctuation from edges."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


def encode_text(text: str, dataset: Dataset) -> np.ndarray:
    """Unit-length mean of the known-word embeddings (zero vector if none)."""
    acc = np.zeros(dataset.feature_dim, dtype=np.float64)
    total = 0
    for tok in tokenize(text):
        idx = dataset.word_index.get(tok)
        if idx is not None:
            acc += dataset.embeddings[idx]
        total += 1
    if total:
        acc /= total
    norm = np.linalg.norm(acc)
    if norm <= 1e-12:
        return np.zeros(dataset.feature_dim, dtype=np.float64)
    return acc / norm


def encode_object_word(object_index: int, dataset: Dataset) -> np.ndarray:
    """Feature of a vocabulary word, identical to encoding its text."""
    if not 0 <= object_index < dataset.vocab_size:
        raise IndexOutOfRange(
            f"object index {object_index} out of range for vocab size {dataset.vocab_size}")
    return encode_text(dataset.vocab[object_index], dataset)
