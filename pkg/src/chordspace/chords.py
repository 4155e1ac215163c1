"""Chord symbol parsing and pitch-class utilities.

Chord symbols follow guitar-chart conventions: a root letter A-G with an
optional accidental, an optional quality suffix (m, dim, aug, sus2, sus4, 5),
an optional extension (7, maj7, 6, 9, add9, 11, 13), an optional slash bass,
and an optional trailing "*" marker. Three bare tokens are treated as special
cases: "UNK" (unknown chord), "H" and "Hm" (hammer-on marks).

The full grammar is documented in docs/chord-grammar.md. Unknown suffixes do
not fail the parse when the root is readable; they yield quality "other" with
a best-effort triad, because crowdsourced chord charts are noisy.

Pitch classes are chromatic indices 1..12 with C=1 and B=12.
"""

from __future__ import annotations

import dataclasses
from typing import Optional


class ParseError(ValueError):
    """Raised when a chord symbol cannot be parsed."""

    def __init__(self, symbol: str, position: int, reason: str):
        super().__init__(f"cannot parse {symbol!r} at position {position}: {reason}")
        self.symbol = symbol
        self.position = position
        self.reason = reason


class UnknownChordError(ValueError):
    """Raised when pitch content is requested for an UNK chord."""


# Quality names.
MAJOR = "major"
MINOR = "minor"
AUGMENTED = "augmented"
DIMINISHED = "diminished"
SUSPENDED2 = "suspended2"
SUSPENDED4 = "suspended4"
POWER5 = "power5"
OTHER = "other"

# Special markers.
SPECIAL_NONE = "none"
SPECIAL_STAR = "star"
SPECIAL_UNK = "unk"
SPECIAL_HAMMER = "hammer_on"
SPECIAL_HAMMER_MINOR = "hammer_on_minor"

SPECIAL_CODES = {
    SPECIAL_NONE: 0,
    SPECIAL_STAR: 1,
    SPECIAL_UNK: 2,
    SPECIAL_HAMMER: 3,
    SPECIAL_HAMMER_MINOR: 4,
}

# Triad intervals in semitones from the root.
TRIAD_INTERVALS = {
    MAJOR: (0, 4, 7),
    MINOR: (0, 3, 7),
    AUGMENTED: (0, 4, 8),
    DIMINISHED: (0, 3, 6),
    SUSPENDED2: (0, 2, 7),
    SUSPENDED4: (0, 5, 7),
    POWER5: (0, 7),
}

# Natural letters to chromatic index (C=1 .. B=12).
_LETTER_PC = {"C": 1, "D": 3, "E": 5, "F": 6, "G": 8, "A": 10, "B": 12}

# Chromatic index to (sharp name, flat name); None entries are white keys.
_PC_NAMES = {
    1: ("C", None),
    2: ("C#", "Db"),
    3: ("D", None),
    4: ("D#", "Eb"),
    5: ("E", None),
    6: ("F", None),
    7: ("F#", "Gb"),
    8: ("G", None),
    9: ("G#", "Ab"),
    10: ("A", None),
    11: ("A#", "Bb"),
    12: ("B", None),
}

# Quality suffixes, longest first so "sus2" wins over "sus".
_QUALITY_SUFFIXES = [
    ("dim", DIMINISHED),
    ("aug", AUGMENTED),
    ("sus2", SUSPENDED2),
    ("sus4", SUSPENDED4),
    ("sus", SUSPENDED4),
    ("m", MINOR),
    ("5", POWER5),
]

# Extension suffixes mapped to semitone interval above the root.
_EXTENSION_SUFFIXES = [
    ("maj7", 11),
    ("add9", 14),
    ("13", 21),
    ("11", 17),
    ("9", 14),
    ("7", 10),
    ("6", 9),
]


def pc_add(pc: int, semitones: int) -> int:
    """Shift a chromatic index by a number of semitones, wrapping in 1..12."""
    return (pc - 1 + semitones) % 12 + 1


def fifth_of(pc: int) -> int:
    """Pitch class a perfect fifth (7 semitones) above the given one."""
    return pc_add(pc, 7)


def relative_minor_root(major_root: int) -> int:
    """Root of the relative minor: three semitones below the major root."""
    return pc_add(major_root, -3)


def render_pitch(pc: int, spelling: str = "natural") -> str:
    """Name a pitch class; black keys use the flat name only when asked."""
    sharp, flat = _PC_NAMES[pc]
    if flat is not None and spelling == "flat":
        return flat
    return sharp


@dataclasses.dataclass(frozen=True)
class Chord:
    """Structured form of a chord symbol.

    ``root_spelling`` (and ``bass_spelling``) record the enharmonic
    preference of the written symbol; they are carried unchanged through
    transposition so that round-trips reproduce the original spelling.
    ``suffix`` is the quality+extension surface text, kept so symbols can be
    regenerated exactly (including suffixes outside the core grammar).
    """

    root: int
    root_spelling: str
    quality: str
    extension: Optional[int]
    bass: Optional[int]
    bass_spelling: str
    special: str
    suffix: str
    raw: str

    def symbol(self) -> str:
        """Regenerate the chord symbol from structured fields."""
        if self.special == SPECIAL_UNK:
            return "UNK"
        if self.special == SPECIAL_HAMMER:
            return "H"
        if self.special == SPECIAL_HAMMER_MINOR:
            return "Hm"
        text = render_pitch(self.root, self.root_spelling) + self.suffix
        if self.bass is not None:
            text += "/" + render_pitch(self.bass, self.bass_spelling)
        if self.special == SPECIAL_STAR:
            text += "*"
        return text


def _sentinel(special: str, raw: str) -> Chord:
    return Chord(
        root=0,
        root_spelling="natural",
        quality=OTHER,
        extension=None,
        bass=None,
        bass_spelling="natural",
        special=special,
        suffix="",
        raw=raw,
    )


def _parse_pitch(text: str, start: int, symbol: str) -> tuple[int, str, int]:
    """Parse a root letter plus optional accidental. Returns (pc, spelling, end)."""
    letter = text[start : start + 1]
    if letter not in _LETTER_PC:
        raise ParseError(symbol, start, f"unknown root letter {letter!r}")
    pc = _LETTER_PC[letter]
    end = start + 1
    spelling = "natural"
    if end < len(text):
        if text[end] == "#":
            pc = pc_add(pc, 1)
            spelling = "sharp"
            end += 1
        elif text[end] == "b":
            pc = pc_add(pc, -1)
            spelling = "flat"
            end += 1
    return pc, spelling, end


def _match_suffix(text: str, table) -> tuple[Optional[object], str]:
    for prefix, value in table:
        if text.startswith(prefix):
            return value, text[len(prefix) :]
    return None, text


def parse_chord(symbol: str) -> Chord:
    """Parse a chord symbol into a structured Chord.

    Raises ParseError when the root itself is unreadable. A readable root
    followed by an unrecognised suffix parses with quality "other".
    """
    text = symbol.strip()
    if not text:
        raise ParseError(symbol, 0, "empty symbol")
    if text == "UNK":
        return _sentinel(SPECIAL_UNK, symbol)
    if text == "H":
        return _sentinel(SPECIAL_HAMMER, symbol)
    if text == "Hm":
        return _sentinel(SPECIAL_HAMMER_MINOR, symbol)

    root, root_spelling, pos = _parse_pitch(text, 0, symbol)

    special = SPECIAL_NONE
    rest = text[pos:]
    if rest.endswith("*"):
        special = SPECIAL_STAR
        rest = rest[:-1]

    bass: Optional[int] = None
    bass_spelling = "natural"
    body = rest
    if "/" in rest:
        body, _, bass_text = rest.partition("/")
        try:
            bass, bass_spelling, bass_end = _parse_pitch(bass_text, 0, symbol)
            if bass_end != len(bass_text):
                raise ParseError(symbol, pos, "trailing text after bass")
        except ParseError:
            # Not a readable slash bass; treat the whole tail as opaque suffix.
            bass, bass_spelling, body = None, "natural", rest

    quality = MAJOR
    extension: Optional[int] = None
    leftover = body
    if leftover.startswith("maj7"):
        extension = 11
        leftover = leftover[4:]
    elif leftover == "maj":
        leftover = ""
    else:
        # "m" must not swallow the start of "maj7".
        if not leftover.startswith("maj"):
            matched, leftover = _match_suffix(leftover, _QUALITY_SUFFIXES)
            if matched is not None:
                quality = matched
        if extension is None and leftover:
            matched, leftover = _match_suffix(leftover, _EXTENSION_SUFFIXES)
            if matched is not None:
                extension = matched

    if leftover:
        # Unrecognised remainder: keep the chord with a best-effort reading.
        quality = OTHER
        extension = None
        bass, bass_spelling = None, "natural"
        body = rest

    return Chord(
        root=root,
        root_spelling=root_spelling,
        quality=quality,
        extension=extension,
        bass=bass,
        bass_spelling=bass_spelling,
        special=special,
        suffix=body,
        raw=symbol,
    )


def _triad_intervals(chord: Chord) -> tuple[int, ...]:
    if chord.quality != OTHER:
        return TRIAD_INTERVALS[chord.quality]
    # Best-effort guess for out-of-grammar suffixes.
    if chord.suffix.startswith("m") and not chord.suffix.startswith("maj"):
        return TRIAD_INTERVALS[MINOR]
    return TRIAD_INTERVALS[MAJOR]


def pitch_classes(chord: Chord) -> list[int]:
    """Ordered pitch classes sounded by a chord.

    The triad comes from the quality's interval pattern, followed by the
    extension pitch when present. For slash chords the list is rotated so
    the bass pitch leads; a bass outside the chord is prepended instead.
    Hammer-on marks carry no pitches and yield an empty list.
    """
    if chord.special == SPECIAL_UNK:
        raise UnknownChordError("UNK chords have no pitch content")
    if chord.special in (SPECIAL_HAMMER, SPECIAL_HAMMER_MINOR):
        return []
    pcs = [pc_add(chord.root, iv) for iv in _triad_intervals(chord)]
    if chord.extension is not None:
        ext_pc = pc_add(chord.root, chord.extension)
        if ext_pc not in pcs:
            pcs.append(ext_pc)
    if chord.bass is not None:
        if chord.bass in pcs:
            i = pcs.index(chord.bass)
            pcs = pcs[i:] + pcs[:i]
        else:
            pcs = [chord.bass] + pcs
    return pcs


@dataclasses.dataclass(frozen=True)
class PitchRepr:
    """Five-slot pitch encoding: up to four pitch indices, then a special code."""

    slots: tuple[int, int, int, int, int]


def encode_pr(chord: Chord) -> PitchRepr:
    """Encode a chord as its pitch-slot representation."""
    if chord.special == SPECIAL_UNK:
        pcs: list[int] = []
    else:
        pcs = pitch_classes(chord)[:4]
    padded = pcs + [0] * (4 - len(pcs))
    code = SPECIAL_CODES[chord.special]
    return PitchRepr(slots=(padded[0], padded[1], padded[2], padded[3], code))


def quality_class(chord: Chord) -> str:
    """Collapse the quality to the coarse comparison classes.

    sus2/sus4 merge into "suspended"; seventh chords keep their triad quality.
    """
    if chord.quality in (SUSPENDED2, SUSPENDED4):
        return "suspended"
    if chord.quality == POWER5:
        return "power"
    return chord.quality


def annotation_palette() -> list[str]:
    """The 48 audition chords offered to annotators.

    Every root (sharp spelling) paired with its major, minor,
    dominant-seventh, and minor-seventh chord, in chromatic root order.
    """
    return [
        render_pitch(pc) + suffix
        for pc in range(1, 13)
        for suffix in ("", "m", "7", "m7")
    ]


def transpose(chord: Chord, semitones: int) -> Chord:
    """Shift root and bass by a semitone count; quality and extension stay.

    Special tokens (UNK, hammer-ons) transpose to themselves. Enharmonic
    spelling preferences are preserved so transposing up and back down
    returns the original chord exactly.
    """
    if chord.special in (SPECIAL_UNK, SPECIAL_HAMMER, SPECIAL_HAMMER_MINOR):
        return chord
    moved = dataclasses.replace(
        chord,
        root=pc_add(chord.root, semitones),
        bass=pc_add(chord.bass, semitones) if chord.bass is not None else None,
    )
    return dataclasses.replace(moved, raw=moved.symbol())
