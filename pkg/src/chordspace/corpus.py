"""Corpus ingest, cleaning, statistics, and synthetic progression generation.

A corpus is a list of songs, each an ordered list of chord tokens with
optional artist and label metadata. Files are line-delimited JSON records:
{"id": str, "artist": str|null, "chords": [str, ...], "labels": {...}}.
"""

from __future__ import annotations

import bisect
import dataclasses
import json
import logging
import math
from collections import Counter, defaultdict
from typing import Iterable, Iterator, Optional

import numpy as np

from . import chords as chord_core

log = logging.getLogger(__name__)


class FormatError(ValueError):
    """Raised for malformed corpus, metadata, or annotation records.

    Accepts (line, reason) for line-oriented files or a bare reason when no
    line number applies (single records validated over the wire).
    """

    def __init__(self, line, reason: Optional[str] = None):
        if reason is None:
            line, reason = None, str(line)
        super().__init__(f"line {line}: {reason}" if line is not None else reason)
        self.line = line
        self.reason = reason


@dataclasses.dataclass
class Song:
    id: str
    chords: tuple[str, ...]
    artist: Optional[str] = None
    labels: dict[str, str] = dataclasses.field(default_factory=dict)


@dataclasses.dataclass
class Corpus:
    songs: list[Song]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.songs)

    def __iter__(self) -> Iterator[Song]:
        return iter(self.songs)


def load_corpus(path) -> Corpus:
    """Read a line-delimited JSON corpus file.

    Chord tokens are validated with the parser; any unparseable token is
    replaced by UNK with a logged warning, so noisy charts never abort a run.
    """
    songs: list[Song] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise FormatError(lineno, "record is not an object")
            if "id" not in record or not isinstance(record["id"], str):
                raise FormatError(lineno, "missing or non-string 'id'")
            if "chords" not in record or not isinstance(record["chords"], list):
                raise FormatError(lineno, "missing or non-list 'chords'")
            if record["id"] in seen_ids:
                raise FormatError(lineno, f"duplicate song id {record['id']!r}")
            seen_ids.add(record["id"])
            tokens = []
            replaced = 0
            for token in record["chords"]:
                if not isinstance(token, str):
                    raise FormatError(lineno, "non-string chord token")
                try:
                    chord_core.parse_chord(token)
                    tokens.append(token)
                except chord_core.ParseError:
                    tokens.append("UNK")
                    replaced += 1
            if replaced:
                log.warning(
                    "song %s: replaced %d unparseable tokens with UNK",
                    record["id"], replaced,
                )
            artist = record.get("artist")
            if artist is not None and not isinstance(artist, str):
                raise FormatError(lineno, "non-string 'artist'")
            labels = record.get("labels") or {}
            if not isinstance(labels, dict):
                raise FormatError(lineno, "non-object 'labels'")
            songs.append(Song(record["id"], tuple(tokens), artist, dict(labels)))
    return Corpus(songs, provenance=str(path))


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus in the line-delimited JSON format read by load_corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for song in corpus.songs:
            record = {
                "id": song.id,
                "artist": song.artist,
                "chords": list(song.chords),
                "labels": song.labels,
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def _normalize_name(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch.isalnum())


def _trigram_set(tokens: Iterable[str]) -> frozenset[tuple[str, ...]]:
    seq = tuple(tokens)
    if len(seq) < 3:
        # Too short for trigrams; the whole sequence is the only gram.
        return frozenset([seq])
    return frozenset(seq[i : i + 3] for i in range(len(seq) - 2))


def _jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def dedup(corpus: Corpus, threshold: float = 0.9) -> Corpus:
    """Drop near-duplicate songs, keeping the first by id order.

    A pair is a duplicate when the normalized artist+name keys match or the
    Jaccard similarity of their chord-trigram sets reaches the threshold.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    kept_ids: set[str] = set()
    kept_keys: set[tuple[str, str]] = set()
    kept_tris: list[frozenset] = []
    for song in sorted(corpus.songs, key=lambda s: s.id):
        key = (_normalize_name(song.artist or ""), _normalize_name(song.id))
        tris = _trigram_set(song.chords)
        duplicate = key in kept_keys
        if not duplicate:
            for other in kept_tris:
                # Size bound: Jaccard can't reach t when sizes are too far apart.
                lo, hi = sorted((len(tris), len(other)))
                if hi and lo < threshold * hi:
                    continue
                if _jaccard(tris, other) >= threshold:
                    duplicate = True
                    break
        if duplicate:
            continue
        kept_ids.add(song.id)
        kept_keys.add(key)
        kept_tris.append(tris)
    removed = len(corpus.songs) - len(kept_ids)
    if removed:
        log.info("dedup removed %d of %d songs", removed, len(corpus.songs))
    return Corpus([s for s in corpus.songs if s.id in kept_ids], corpus.provenance)


def filter_min_chords(corpus: Corpus, min_chords: int = 6) -> Corpus:
    """Keep songs with at least min_chords tokens (boundary inclusive)."""
    kept = [s for s in corpus.songs if len(s.chords) >= min_chords]
    return Corpus(kept, corpus.provenance)


@dataclasses.dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int]
    df: dict[str, int]
    unk_index: int

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        """Index of a token, falling back to UNK for out-of-vocabulary ones."""
        return self.index.get(token, self.unk_index)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]


def document_frequencies(corpus: Corpus) -> Counter:
    """Count, for each token, the number of songs containing it."""
    df: Counter = Counter()
    for song in corpus.songs:
        df.update(set(song.chords))
    return df


def build_vocab(corpus: Corpus, df_threshold: float = 0.001) -> Vocabulary:
    """Keep tokens whose song frequency is at least the threshold fraction.

    The comparison is inclusive, UNK is always present, and tokens are
    ordered by descending document frequency with lexicographic tie-breaks.
    """
    n = len(corpus.songs)
    df = document_frequencies(corpus)
    kept = [t for t, c in df.items() if n and c / n >= df_threshold]
    kept.sort(key=lambda t: (-df[t], t))
    if "UNK" not in kept:
        kept.append("UNK")
    index = {t: i for i, t in enumerate(kept)}
    return Vocabulary(
        tokens=kept,
        index=index,
        df={t: df.get(t, 0) for t in kept},
        unk_index=index["UNK"],
    )


def song_frequency_ranks(corpus: Corpus) -> list[tuple[str, int]]:
    """Tokens with song counts, sorted by descending count then token text."""
    df = document_frequencies(corpus)
    return sorted(df.items(), key=lambda item: (-item[1], item[0]))


@dataclasses.dataclass
class PowerLawFit:
    a: float
    b: float
    r_squared: float
    degenerate: bool = False


def fit_power_law(
    ranks: Iterable[tuple[float, float]], top_k: Optional[int] = None
) -> PowerLawFit:
    """Least-squares fit of df = a * rank^b, computed in log-log space.

    r_squared is the coefficient of determination of the log-space fit; a
    constant series has no variance to explain and is flagged degenerate.
    """
    pairs = [(r, f) for r, f in ranks if top_k is None or r <= top_k]
    if len(pairs) < 2:
        raise ValueError("need at least two rank points to fit")
    if any(r <= 0 or f <= 0 for r, f in pairs):
        raise ValueError("ranks and frequencies must be positive")
    x = np.log([r for r, _ in pairs])
    y = np.log([f for _, f in pairs])
    b, log_a = np.polyfit(x, y, 1)
    resid = y - (log_a + b * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return PowerLawFit(a=float(np.exp(log_a)), b=float(b), r_squared=0.0, degenerate=True)
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    return PowerLawFit(a=float(np.exp(log_a)), b=float(b), r_squared=r2)


def split(
    corpus: Corpus,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic shuffled partition; floor-sized tails, remainder to train."""
    if len(fractions) != 3 or not math.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must be three values summing to 1")
    n = len(corpus.songs)
    perm = np.random.default_rng(seed).permutation(n)
    n_valid = math.floor(n * fractions[1])
    n_test = math.floor(n * fractions[2])
    n_train = n - n_valid - n_test
    ordered = [corpus.songs[i] for i in perm]
    parts = (
        ordered[:n_train],
        ordered[n_train : n_train + n_valid],
        ordered[n_train + n_valid :],
    )
    names = ("train", "valid", "test")
    return tuple(
        Corpus(part, f"{corpus.provenance}|{name}:seed={seed}")
        for part, name in zip(parts, names)
    )


def join_metadata(corpus: Corpus, metadata_path) -> Corpus:
    """Attach label maps to songs by artist from a line-delimited JSON file.

    Conflicting duplicate rows for one artist are an error; songs whose
    artist has no row keep their existing labels.
    """
    by_artist: dict[str, dict[str, str]] = {}
    with open(metadata_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(lineno, f"invalid JSON: {exc}") from exc
            artist = record.get("artist")
            labels = record.get("labels")
            if not isinstance(artist, str) or not isinstance(labels, dict):
                raise FormatError(lineno, "metadata row needs 'artist' and 'labels'")
            if artist in by_artist and by_artist[artist] != labels:
                raise FormatError(lineno, f"conflicting labels for artist {artist!r}")
            by_artist[artist] = dict(labels)
    songs = []
    for song in corpus.songs:
        meta = by_artist.get(song.artist or "")
        if meta:
            song = dataclasses.replace(song, labels={**song.labels, **meta})
        songs.append(song)
    return Corpus(songs, corpus.provenance)


def balance_classes(corpus: Corpus, label: str, seed: int = 0) -> Corpus:
    """Downsample so every value of the label has equally many songs.

    Songs missing the label are dropped. Sampling is seeded and without
    replacement; surviving songs keep their corpus order.
    """
    groups: dict[str, list[int]] = defaultdict(list)
    for i, song in enumerate(corpus.songs):
        value = song.labels.get(label)
        if value is not None:
            groups[value].append(i)
    if not groups:
        return Corpus([], corpus.provenance)
    size = min(len(members) for members in groups.values())
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for value in sorted(groups):
        members = groups[value]
        picks = rng.choice(len(members), size=size, replace=False)
        chosen.extend(members[i] for i in picks)
    chosen.sort()
    return Corpus([corpus.songs[i] for i in chosen], corpus.provenance)


# Diatonic triads of the untransposed key: (root pitch class, quality suffix).
_DIATONIC = [(1, ""), (3, "m"), (5, "m"), (6, ""), (8, ""), (10, "m"), (12, "dim")]

# Relative major/minor partner pairs by diatonic position (C-Am, F-Dm, G-Em).
_RELATIVE_PARTNER = {0: 5, 5: 0, 3: 1, 1: 3, 4: 2, 2: 4}


@dataclasses.dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the synthetic progression generator.

    sus_prob and aug_prob give per-class decoration rates: a major triad
    becomes a sus4 chord with the class's sus probability, and a minor triad
    becomes an augmented chord with its aug probability. These channels never
    occur in the base chain, so class signal is fully identifiable.
    """

    length_range: tuple[int, int] = (8, 32)
    tonic_start_prob: float = 0.4
    label_name: str = "gender"
    class_values: tuple[str, str] = ("male", "female")
    sus_prob: tuple[float, float] = (0.0, 0.0)
    aug_prob: tuple[float, float] = (0.0, 0.0)
    # Relative draw weights for the 12 keys; None keeps them uniform.
    # Decaying weights mimic real tonality preferences and give the token
    # frequencies a heavy-tailed, power-law-like profile.
    key_weights: Optional[tuple[float, ...]] = None


def _transition_rows() -> list[list[float]]:
    """Cumulative transition rows over the seven diatonic triads.

    Mass concentrates on fifth-related targets and the relative
    major/minor partner, over a small uniform floor.
    """
    roots = [root for root, _ in _DIATONIC]
    cum_rows = []
    for i, root in enumerate(roots):
        weights = [1.0] * len(roots)
        for j, other in enumerate(roots):
            if other in (chord_core.pc_add(root, 7), chord_core.pc_add(root, -7)):
                weights[j] += 6.0
        partner = _RELATIVE_PARTNER.get(i)
        if partner is not None:
            weights[partner] += 4.0
        total = sum(weights)
        acc, cum = 0.0, []
        for w in weights:
            acc += w / total
            cum.append(acc)
        cum[-1] = 1.0
        cum_rows.append(cum)
    return cum_rows


def _start_row(tonic_prob: float) -> list[float]:
    rest = (1.0 - tonic_prob) / (len(_DIATONIC) - 1)
    acc, cum = 0.0, []
    for i in range(len(_DIATONIC)):
        acc += tonic_prob if i == 0 else rest
        cum.append(acc)
    cum[-1] = 1.0
    return cum


def _key_tables() -> tuple[list[list[str]], list[list[str]], list[str]]:
    """Per-key chord symbols, root names, and quality tags for each state."""
    symbols, root_names, qualities = [], [], []
    for key in range(12):
        row_sym, row_root = [], []
        for root, suffix in _DIATONIC:
            moved = chord_core.pc_add(root, key)
            name = chord_core.render_pitch(moved)
            row_root.append(name)
            row_sym.append(name + suffix)
        symbols.append(row_sym)
        root_names.append(row_root)
    for _, suffix in _DIATONIC:
        qualities.append({"": "major", "m": "minor", "dim": "diminished"}[suffix])
    return symbols, root_names, qualities


def generate_synthetic_corpus(
    seed: int, n_songs: int, cfg: SyntheticConfig = SyntheticConfig()
) -> Corpus:
    """Sample songs from a diatonic first-order Markov chain.

    Each song draws a key uniformly, a length in cfg.length_range, and a
    walk over the seven diatonic triads; the result is transposed to the key.
    Classes alternate by song index and receive the configured quality skew.
    """
    rng = np.random.default_rng(seed)
    trans = _transition_rows()
    start = _start_row(cfg.tonic_start_prob)
    symbols, root_names, qualities = _key_tables()
    key_cum = None
    if cfg.key_weights is not None:
        if len(cfg.key_weights) != 12 or min(cfg.key_weights) <= 0:
            raise ValueError("key_weights needs 12 positive entries")
        total = sum(cfg.key_weights)
        acc, key_cum = 0.0, []
        for w in cfg.key_weights:
            acc += w / total
            key_cum.append(acc)
        key_cum[-1] = 1.0
    lo, hi = cfg.length_range
    songs = []
    for i in range(n_songs):
        if key_cum is None:
            key = int(rng.integers(12))
        else:
            key = bisect.bisect_left(key_cum, rng.random())
        length = int(rng.integers(lo, hi + 1))
        walk_u = rng.random(length)
        decor_u = rng.random(length)
        cls = i % 2
        sus_p = cfg.sus_prob[cls]
        aug_p = cfg.aug_prob[cls]
        state = bisect.bisect_left(start, walk_u[0])
        tokens = []
        for t in range(length):
            if t > 0:
                state = bisect.bisect_left(trans[state], walk_u[t])
            quality = qualities[state]
            if quality == "major" and decor_u[t] < sus_p:
                tokens.append(root_names[key][state] + "sus4")
            elif quality == "minor" and decor_u[t] < aug_p:
                tokens.append(root_names[key][state] + "aug")
            else:
                tokens.append(symbols[key][state])
        songs.append(
            Song(
                id=f"syn-{i:05d}",
                chords=tuple(tokens),
                artist=None,
                labels={cfg.label_name: cfg.class_values[cls]},
            )
        )
    return Corpus(songs, provenance=f"synthetic:seed={seed},n={n_songs}")
