"""Human-annotation evaluation: loading, match metrics, and correlations.

Annotators answered next-chord prompts by picking a first choice plus one or
two alternatives from a fixed 48-chord palette, along with a self-rated
expertise score. This module loads those records, scores model predictions
against them (exact-match, mode, and pitch-overlap metrics), measures
inter-annotator agreement, and correlates per-annotator scores with
expertise.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from collections import Counter, defaultdict
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats as _stats

from . import chords as chord_core
from .corpus import FormatError

PALETTE = frozenset(chord_core.annotation_palette())

GROUPS = ("beginner", "intermediate", "expert", "all")

PROMPT_LENGTHS = (3, 6)


@dataclasses.dataclass(frozen=True)
class AnnotationRecord:
    prompt_id: str
    progression: tuple[str, ...]
    annotator_id: str
    expertise: int
    first_choice: str
    alternatives: tuple[str, ...]

    @property
    def responses(self) -> tuple[str, ...]:
        return (self.first_choice,) + self.alternatives


@dataclasses.dataclass
class AnnotatorDetail:
    annotator_id: str
    expertise: int
    n_questions: int
    match_rate: float  # % of questions whose responses include the model top-1
    pm_total: int  # summed pitch overlap between model top-1 and first choice


@dataclasses.dataclass
class MetricReport:
    group: str
    n_annotators: int
    match_best: float
    match_oo4: float
    mode_best: float
    mode_oo4: float
    n_mode_examples: int
    pm_ave: float
    per_annotator: dict[str, AnnotatorDetail]


@dataclasses.dataclass
class ExpertiseReport:
    groups: dict[str, MetricReport]
    correlations: dict[str, tuple[float, float]]


def expertise_group(rating: int) -> str:
    """Bucket a 0-100 self rating: 0, then below 50, then 50 and up."""
    if rating == 0:
        return "beginner"
    return "intermediate" if rating < 50 else "expert"


def in_group(rating: int, group: str) -> bool:
    if group not in GROUPS:
        raise ValueError(f"group must be one of {GROUPS}")
    return group == "all" or expertise_group(rating) == group


def parse_record(obj, where: str = "record") -> AnnotationRecord:
    """Validate one annotation object; raises FormatError with context."""
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected a JSON object")
    required = {
        "prompt_id", "progression", "annotator_id",
        "expertise", "first_choice", "alternatives",
    }
    missing = required - obj.keys()
    if missing:
        raise FormatError(f"{where}: missing fields {sorted(missing)}")
    progression = obj["progression"]
    if not isinstance(progression, list) or not all(isinstance(t, str) for t in progression):
        raise FormatError(f"{where}: progression must be a list of chord tokens")
    if len(progression) not in PROMPT_LENGTHS:
        raise FormatError(
            f"{where}: progression length must be one of {PROMPT_LENGTHS}, "
            f"got {len(progression)}"
        )
    expertise = obj["expertise"]
    if not isinstance(expertise, int) or isinstance(expertise, bool) or not 0 <= expertise <= 100:
        raise FormatError(f"{where}: expertise must be an integer in [0, 100]")
    alternatives = obj["alternatives"]
    if not isinstance(alternatives, list) or len(alternatives) not in (1, 2):
        raise FormatError(f"{where}: alternatives must hold 1 or 2 chords")
    for token in [obj["first_choice"], *alternatives]:
        if token not in PALETTE:
            raise FormatError(f"{where}: {token!r} is not in the 48-chord palette")
    return AnnotationRecord(
        prompt_id=str(obj["prompt_id"]),
        progression=tuple(progression),
        annotator_id=str(obj["annotator_id"]),
        expertise=expertise,
        first_choice=obj["first_choice"],
        alternatives=tuple(alternatives),
    )


def load_annotations(path) -> list[AnnotationRecord]:
    """Read one JSON object per line; duplicate (annotator, prompt) pairs fail."""
    records = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise FormatError(f"line {lineno}: invalid JSON ({err.msg})") from err
            record = parse_record(obj, where=f"line {lineno}")
            key = (record.annotator_id, record.prompt_id)
            if key in seen:
                raise FormatError(
                    f"line {lineno}: duplicate answer for prompt "
                    f"{record.prompt_id!r} by {record.annotator_id!r}"
                )
            seen.add(key)
            records.append(record)
    return records


def save_annotations(records: Iterable[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            doc = dataclasses.asdict(record)
            doc["progression"] = list(doc["progression"])
            doc["alternatives"] = list(doc["alternatives"])
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def _pitch_set(token: str) -> frozenset[int]:
    """Pitch classes of a token; unparseable or pitch-free tokens give {}."""
    try:
        return frozenset(chord_core.pitch_classes(chord_core.parse_chord(token)))
    except (chord_core.ParseError, chord_core.UnknownChordError):
        return frozenset()


def _by_prompt(annotations) -> dict[str, list[AnnotationRecord]]:
    prompts: dict[str, list[AnnotationRecord]] = defaultdict(list)
    for record in annotations:
        prompts[record.prompt_id].append(record)
    return dict(sorted(prompts.items()))


def _ranked(model_preds, prompt_id: str) -> list[str]:
    preds = model_preds.get(prompt_id)
    if not preds:
        raise ValueError(f"no model predictions for prompt {prompt_id!r}")
    return list(preds)


def match_best(model_preds, annotations, group: str = "all") -> float:
    """Mean over prompts of the share of annotators whose responses
    include the model's top prediction, as a percentage."""
    fractions = []
    for prompt_id, records in _by_prompt(annotations).items():
        members = [r for r in records if in_group(r.expertise, group)]
        if not members:
            continue
        top = _ranked(model_preds, prompt_id)[0]
        fractions.append(sum(top in r.responses for r in members) / len(members))
    if not fractions:
        raise ValueError(f"no prompts answered by group {group!r}")
    return 100.0 * sum(fractions) / len(fractions)


def match_oo4(model_preds, annotations, group: str = "all") -> float:
    """match_best summed over the model's top four predictions.

    The per-prompt sum is capped at 1 so a single annotator listing several
    of the top four cannot push an example past 100%.
    """
    fractions = []
    for prompt_id, records in _by_prompt(annotations).items():
        members = [r for r in records if in_group(r.expertise, group)]
        if not members:
            continue
        total = sum(
            sum(pred in r.responses for r in members) / len(members)
            for pred in _ranked(model_preds, prompt_id)[:4]
        )
        fractions.append(min(total, 1.0))
    if not fractions:
        raise ValueError(f"no prompts answered by group {group!r}")
    return 100.0 * sum(fractions) / len(fractions)


def mode_metrics(model_preds, annotations, pool: str = "all") -> tuple[float, float, int]:
    """Accuracy against the most common annotator response per prompt.

    The response pool is every annotator's distinct responses ("all") or
    first choices only ("first"). Prompts without a unique most common
    response are excluded; the count of usable prompts is returned.
    """
    if pool not in ("all", "first"):
        raise ValueError('pool must be "all" or "first"')
    best_hits = 0
    oo4_hits = 0
    usable = 0
    for prompt_id, records in _by_prompt(annotations).items():
        counts: Counter = Counter()
        for record in records:
            pool_tokens = set(record.responses) if pool == "all" else {record.first_choice}
            counts.update(pool_tokens)
        top_count = max(counts.values())
        modes = [token for token, c in counts.items() if c == top_count]
        if len(modes) != 1:
            continue
        usable += 1
        ranked = _ranked(model_preds, prompt_id)
        best_hits += ranked[0] == modes[0]
        oo4_hits += modes[0] in ranked[:4]
    if usable == 0:
        return 0.0, 0.0, 0
    return 100.0 * best_hits / usable, 100.0 * oo4_hits / usable, usable


def pitch_matches(model_preds, annotations, group: str = "all"):
    """Per-annotator pitch overlap totals and their group mean.

    Each question contributes the size of the intersection between the
    model top prediction's pitch set and the annotator's first choice's.
    """
    totals: dict[str, int] = defaultdict(int)
    seen: set[str] = set()
    for record in annotations:
        if not in_group(record.expertise, group):
            continue
        seen.add(record.annotator_id)
        top = _ranked(model_preds, record.prompt_id)[0]
        totals[record.annotator_id] += len(_pitch_set(top) & _pitch_set(record.first_choice))
    if not seen:
        raise ValueError(f"no annotators in group {group!r}")
    ordered = {aid: totals[aid] for aid in sorted(seen)}
    return ordered, sum(ordered.values()) / len(ordered)


def _pairs_over_common_prompts(annotations):
    by_annotator: dict[str, dict[str, AnnotationRecord]] = defaultdict(dict)
    for record in annotations:
        by_annotator[record.annotator_id][record.prompt_id] = record
    for a, b in itertools.combinations(sorted(by_annotator), 2):
        common = sorted(by_annotator[a].keys() & by_annotator[b].keys())
        if common:
            yield [(by_annotator[a][p], by_annotator[b][p]) for p in common]


def pairwise_agreement(annotations) -> float:
    """Mean over annotator pairs of the share of shared prompts where both
    gave the same first choice, as a percentage."""
    per_pair = [
        sum(x.first_choice == y.first_choice for x, y in pair_records) / len(pair_records)
        for pair_records in _pairs_over_common_prompts(annotations)
    ]
    if not per_pair:
        raise ValueError("need two annotators with a shared prompt")
    return 100.0 * sum(per_pair) / len(per_pair)


def pairwise_pitch_agreement(annotations) -> float:
    """Like pairwise_agreement but scoring Jaccard overlap of the pitch
    sets of the two first choices instead of exact equality."""
    per_pair = []
    for pair_records in _pairs_over_common_prompts(annotations):
        scores = []
        for x, y in pair_records:
            px, py = _pitch_set(x.first_choice), _pitch_set(y.first_choice)
            union = px | py
            scores.append(len(px & py) / len(union) if union else 1.0)
        per_pair.append(sum(scores) / len(scores))
    if not per_pair:
        raise ValueError("need two annotators with a shared prompt")
    return 100.0 * sum(per_pair) / len(per_pair)


def _t_pvalue(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t = abs(r) * math.sqrt((n - 2) / (1.0 - r * r))
    return 2.0 * float(_stats.t.sf(t, n - 2))


def _validated_pair(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-d sequences of equal length")
    if len(xs) < 3:
        raise ValueError("need at least 3 paired observations")
    return xs, ys


def pearson(xs, ys) -> tuple[float, float]:
    """Linear correlation with a two-sided t-test p-value (n-2 df)."""
    xs, ys = _validated_pair(xs, ys)
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0:
        return float("nan"), float("nan")
    r = max(-1.0, min(1.0, float(xc @ yc) / denom))
    return r, _t_pvalue(r, len(xs))


def spearman(xs, ys) -> tuple[float, float]:
    """Rank correlation (average ranks on ties) with a two-sided t-test
    p-value (n-2 df)."""
    xs, ys = _validated_pair(xs, ys)
    return pearson(_stats.rankdata(xs), _stats.rankdata(ys))


def _annotator_details(model_preds, annotations, group: str) -> dict[str, AnnotatorDetail]:
    rows: dict[str, list[AnnotationRecord]] = defaultdict(list)
    for record in annotations:
        if in_group(record.expertise, group):
            rows[record.annotator_id].append(record)
    details = {}
    for annotator_id in sorted(rows):
        records = rows[annotator_id]
        hits = 0
        pm_total = 0
        for record in records:
            top = _ranked(model_preds, record.prompt_id)[0]
            hits += top in record.responses
            pm_total += len(_pitch_set(top) & _pitch_set(record.first_choice))
        details[annotator_id] = AnnotatorDetail(
            annotator_id=annotator_id,
            expertise=records[0].expertise,
            n_questions=len(records),
            match_rate=100.0 * hits / len(records),
            pm_total=pm_total,
        )
    return details


def metric_report(model_preds, annotations, group: str = "all") -> MetricReport:
    """All metrics for one expertise group; mode metrics use the group's
    annotations only."""
    members = [r for r in annotations if in_group(r.expertise, group)]
    if not members:
        raise ValueError(f"no annotations in group {group!r}")
    mode_best, mode_oo4, n_mode = mode_metrics(model_preds, members)
    _, pm_ave = pitch_matches(model_preds, members)
    details = _annotator_details(model_preds, members, "all")
    return MetricReport(
        group=group,
        n_annotators=len(details),
        match_best=match_best(model_preds, members),
        match_oo4=match_oo4(model_preds, members),
        mode_best=mode_best,
        mode_oo4=mode_oo4,
        n_mode_examples=n_mode,
        pm_ave=pm_ave,
        per_annotator=details,
    )


def expertise_report(model_preds, annotations) -> ExpertiseReport:
    """Per-group metric reports plus expertise correlations.

    Correlations relate each annotator's expertise to their match rate and
    pitch-match total across all annotators; groups with no annotators are
    omitted.
    """
    if not annotations:
        raise ValueError("no annotations")
    groups = {}
    for group in GROUPS:
        if any(in_group(r.expertise, group) for r in annotations):
            groups[group] = metric_report(model_preds, annotations, group)
    details = groups["all"].per_annotator
    expertise = [d.expertise for d in details.values()]
    match_rates = [d.match_rate for d in details.values()]
    pm_totals = [d.pm_total for d in details.values()]
    correlations = {}
    if len(details) >= 3:
        correlations = {
            "match_spearman": spearman(expertise, match_rates),
            "match_pearson": pearson(expertise, match_rates),
            "pm_spearman": spearman(expertise, pm_totals),
            "pm_pearson": pearson(expertise, pm_totals),
        }
    return ExpertiseReport(groups=groups, correlations=correlations)
