"""Structure analyses over embedding spaces and labeled corpora.

Covers the geometry checks (PCA projection, circle-of-fifths proximity,
relative major/minor pairs, enharmonic pairs) and the two-class salience
ratios over chords and chord qualities.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Optional

import numpy as np

from . import chords as chord_core
from .corpus import Corpus
from .embeddings import EmbeddingMatrix, nearest

log = logging.getLogger(__name__)


@dataclasses.dataclass
class Projection2D:
    points: dict[str, tuple[float, ...]]
    explained_variance: tuple[float, ...]
    components: np.ndarray


def pca_project(matrix: EmbeddingMatrix, dims: int = 2) -> Projection2D:
    """Project input vectors onto the top principal axes via SVD.

    Rows are mean-centered first. Each axis is sign-fixed so its
    largest-magnitude loading is positive, making output deterministic.
    """
    vectors = matrix.input_vectors
    if dims < 1 or dims > min(vectors.shape):
        raise ValueError(f"dims must be in 1..{min(vectors.shape)}")
    centered = vectors - vectors.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    total = float((singular**2).sum())
    if total == 0.0:
        raise ValueError("embedding rows are identical; nothing to project")
    components = vt[:dims].copy()
    for axis in range(dims):
        j = int(np.argmax(np.abs(components[axis])))
        if components[axis, j] < 0:
            components[axis] = -components[axis]
    scores = centered @ components.T
    fractions = tuple(float(s**2 / total) for s in singular[:dims])
    points = {
        token: tuple(float(x) for x in scores[i])
        for i, token in enumerate(matrix.vocab.tokens)
    }
    return Projection2D(points, fractions, components)


_QUALITY_SUFFIX = {"major": "", "minor": "m"}


def _token_for(matrix: EmbeddingMatrix, pc: int, suffix: str) -> Optional[str]:
    for spelling in ("natural", "flat"):
        name = chord_core.render_pitch(pc, spelling) + suffix
        if name in matrix.vocab.index:
            return name
    return None


def _cosine_rows(vectors: np.ndarray, i: int, j: int) -> float:
    a, b = vectors[i], vectors[j]
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(a @ b) / denom


@dataclasses.dataclass
class FifthChainScore:
    mean_fifth_cosine: float
    mean_random_cosine: float
    gap: float
    fifth_pairs: int
    random_pairs: int
    random_se: float


def fifth_chain_score(matrix: EmbeddingMatrix, quality: str = "major") -> FifthChainScore:
    """Average cosine of fifth-interval root pairs vs all other same-quality
    pairs, with the standard error of the random-pair mean."""
    suffix = _QUALITY_SUFFIX.get(quality, quality)
    present = {}
    for pc in range(1, 13):
        token = _token_for(matrix, pc, suffix)
        if token is not None:
            present[pc] = matrix.vocab.index[token]
    vectors = matrix.input_vectors
    fifth, others = [], []
    pcs = sorted(present)
    for i, pc_a in enumerate(pcs):
        for pc_b in pcs[i + 1 :]:
            value = _cosine_rows(vectors, present[pc_a], present[pc_b])
            if chord_core.fifth_of(pc_a) == pc_b or chord_core.fifth_of(pc_b) == pc_a:
                fifth.append(value)
            else:
                others.append(value)
    if not fifth or not others:
        raise ValueError("not enough same-quality tokens for a fifth-chain score")
    mean_fifth = float(np.mean(fifth))
    mean_random = float(np.mean(others))
    se = float(np.std(others, ddof=1) / math.sqrt(len(others))) if len(others) > 1 else 0.0
    return FifthChainScore(
        mean_fifth_cosine=mean_fifth,
        mean_random_cosine=mean_random,
        gap=mean_fifth - mean_random,
        fifth_pairs=len(fifth),
        random_pairs=len(others),
        random_se=se,
    )


@dataclasses.dataclass
class RelativePairEntry:
    major: str
    minor: str
    cosine: float
    neighbor_rank: int


def relative_pair_report(matrix: EmbeddingMatrix) -> list[RelativePairEntry]:
    """Cosine and neighbor rank of each major chord's relative minor."""
    entries = []
    vectors = matrix.input_vectors
    for pc in range(1, 13):
        major = _token_for(matrix, pc, "")
        minor = _token_for(matrix, chord_core.relative_minor_root(pc), "m")
        if major is None or minor is None:
            log.info("relative pair for root %d skipped: token missing", pc)
            continue
        cosine = _cosine_rows(vectors, matrix.vocab.index[major], matrix.vocab.index[minor])
        ranking = nearest(matrix, major, len(matrix.vocab.tokens))
        rank = next(i for i, (t, _) in enumerate(ranking, start=1) if t == minor)
        entries.append(RelativePairEntry(major, minor, cosine, rank))
    return entries


def enharmonic_report(matrix: EmbeddingMatrix) -> list[tuple[str, str, float]]:
    """Cosines between sharp- and flat-spelled tokens of the same chord."""
    entries = []
    vectors = matrix.input_vectors
    for token in matrix.vocab.tokens:
        try:
            chord = chord_core.parse_chord(token)
        except chord_core.ParseError:
            continue
        if chord.special != chord_core.SPECIAL_NONE or chord.root_spelling != "sharp":
            continue
        flat = dataclasses.replace(chord, root_spelling="flat").symbol()
        if flat in matrix.vocab.index:
            cosine = _cosine_rows(vectors, matrix.vocab.index[token], matrix.vocab.index[flat])
            entries.append((token, flat, cosine))
    return entries


@dataclasses.dataclass
class SalienceReport:
    """Signed usage ratios between two classes.

    For each item, value = higher_rate / lower_rate - 1, positive when the
    first class (lexicographically smaller label value) uses it more.
    """

    classes: tuple[str, str]
    ratios: dict[str, float]


def _two_class_partition(corpus: Corpus, label: str) -> tuple[tuple[str, str], dict[str, list]]:
    groups: dict[str, list] = {}
    for song in corpus.songs:
        value = song.labels.get(label)
        if value is not None:
            groups.setdefault(value, []).append(song)
    if len(groups) != 2:
        raise ValueError(f"label {label!r} must have exactly two classes, got {sorted(groups)}")
    first, second = sorted(groups)
    return (first, second), groups


def _signed_ratio(rate_a: float, rate_b: float) -> float:
    if rate_a >= rate_b:
        return rate_a / rate_b - 1.0
    return -(rate_b / rate_a - 1.0)


def chord_salience(corpus: Corpus, label: str) -> SalienceReport:
    """Per-chord salience from within-class document rates.

    rate = songs containing the chord / songs in the class, floored at
    1/(class size + 1) when a class never uses the chord.
    """
    (first, second), groups = _two_class_partition(corpus, label)
    rates = {}
    for value in (first, second):
        songs = groups[value]
        counts: dict[str, int] = {}
        for song in songs:
            for token in set(song.chords):
                counts[token] = counts.get(token, 0) + 1
        floor = 1.0 / (len(songs) + 1)
        rates[value] = (counts, len(songs), floor)
    tokens = set(rates[first][0]) | set(rates[second][0])
    ratios = {}
    for token in sorted(tokens):
        counts_a, n_a, floor_a = rates[first]
        counts_b, n_b, floor_b = rates[second]
        rate_a = counts_a.get(token, 0) / n_a if counts_a.get(token) else floor_a
        rate_b = counts_b.get(token, 0) / n_b if counts_b.get(token) else floor_b
        ratios[token] = _signed_ratio(rate_a, rate_b)
    return SalienceReport((first, second), ratios)


def quality_salience(corpus: Corpus, label: str) -> SalienceReport:
    """Per-quality salience from within-class token use percentages."""
    (first, second), groups = _two_class_partition(corpus, label)
    shares = {}
    for value in (first, second):
        counts: dict[str, int] = {}
        total = 0
        for song in groups[value]:
            for token in song.chords:
                quality = chord_core.quality_class(chord_core.parse_chord(token))
                counts[quality] = counts.get(quality, 0) + 1
                total += 1
        if total == 0:
            raise ValueError(f"class {value!r} has no chord tokens")
        floor = 1.0 / (total + 1)
        shares[value] = ({q: c / total for q, c in counts.items()}, floor)
    qualities = set(shares[first][0]) | set(shares[second][0])
    ratios = {}
    for quality in sorted(qualities):
        share_a, floor_a = shares[first]
        share_b, floor_b = shares[second]
        ratios[quality] = _signed_ratio(
            share_a.get(quality) or floor_a, share_b.get(quality) or floor_b
        )
    return SalienceReport((first, second), ratios)
