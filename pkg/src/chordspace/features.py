"""Per-song feature vectors: chord-frequency bags, TF-IDF, pitch profiles,
and max-pooled embedding summaries."""

from __future__ import annotations

import dataclasses
import logging
from typing import Sequence, Union

import numpy as np

from . import chords as chord_core
from .corpus import Corpus, Song, Vocabulary
from .embeddings import EmbeddingMatrix

log = logging.getLogger(__name__)

SCHEMES = ("boc_count", "boc_tfidf", "pr_agg", "ce_maxpool")


@dataclasses.dataclass
class SongVector:
    values: np.ndarray
    scheme: str
    dim: int


def _tokens(song: Union[Song, Sequence[str]]) -> tuple[str, ...]:
    if isinstance(song, Song):
        return song.chords
    return tuple(song)


def boc_count(song: Union[Song, Sequence[str]], vocab: Vocabulary) -> SongVector:
    """Within-song chord frequency share over the vocabulary (OOV counts as UNK)."""
    tokens = _tokens(song)
    values = np.zeros(len(vocab))
    for token in tokens:
        values[vocab.id_of(token)] += 1.0
    if tokens:
        values /= len(tokens)
    return SongVector(values, "boc_count", len(vocab))


def compute_idf(corpus: Corpus, vocab: Vocabulary) -> np.ndarray:
    """idf(t) = ln(N / df(t)) over the given corpus, aligned with vocab order.

    df is floored at one song so tokens unseen in this corpus (possible when
    idf is fit on a training fold) stay finite.
    """
    n = len(corpus.songs)
    if n == 0:
        raise ValueError("cannot compute idf on an empty corpus")
    df = np.zeros(len(vocab))
    for song in corpus.songs:
        present = {vocab.id_of(t) for t in song.chords}
        for i in present:
            df[i] += 1.0
    return np.log(n / np.maximum(df, 1.0))


def boc_tfidf(
    song: Union[Song, Sequence[str]], vocab: Vocabulary, idf: np.ndarray
) -> SongVector:
    """TF-IDF bag: the boc_count entry scaled by each token's idf."""
    tf = boc_count(song, vocab).values
    return SongVector(tf * idf, "boc_tfidf", len(vocab))


def pr_aggregate(song: Union[Song, Sequence[str]]) -> SongVector:
    """Pitch-class histogram over every pitch emitted by the song's chords,
    normalized by the total pitch count. Pitchless songs yield zeros."""
    values = np.zeros(12)
    total = 0
    for token in _tokens(song):
        chord = chord_core.parse_chord(token)
        if chord.special == chord_core.SPECIAL_UNK:
            continue
        for pc in chord_core.pitch_classes(chord):
            values[pc - 1] += 1.0
            total += 1
    if total == 0:
        label = song.id if isinstance(song, Song) else "<tokens>"
        log.warning("song %s has no pitched chords; pr_aggregate is zero", label)
        return SongVector(values, "pr_agg", 12)
    return SongVector(values / total, "pr_agg", 12)


def ce_maxpool(song: Union[Song, Sequence[str]], matrix: EmbeddingMatrix) -> SongVector:
    """Per dimension, the signed entry of largest magnitude across the song's
    chord vectors; ties go to the earliest chord position."""
    tokens = _tokens(song)
    dim = matrix.input_vectors.shape[1]
    if not tokens:
        label = song.id if isinstance(song, Song) else "<tokens>"
        log.warning("song %s is empty; ce_maxpool is zero", label)
        return SongVector(np.zeros(dim), "ce_maxpool", dim)
    rows = matrix.input_vectors[[matrix.vocab.id_of(t) for t in tokens]]
    winners = np.argmax(np.abs(rows), axis=0)
    return SongVector(rows[winners, np.arange(dim)], "ce_maxpool", dim)
