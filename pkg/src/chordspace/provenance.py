"""Run provenance records and reference numbers from the published study.

Every CLI run writes a record with the resolved configuration, hashes of its
input files, and library versions, so any artifact can be regenerated from
its record alone. The REFERENCE table carries the headline numbers of the
published reference study; they come from a proprietary corpus and a 9-person
annotation panel, are not reproducible at desk scale, and are shipped as
tagged data only -- nothing in the test suite asserts them.
"""

from __future__ import annotations

import hashlib
import json
import platform

import matplotlib
import numpy
import scipy

from . import __version__

REFERENCE_TAG = "published reference study; not reproduced at desk scale"

REFERENCE = {
    "tag": REFERENCE_TAG,
    "corpus": {
        "songs_after_cleaning": 88874,
        "unique_chords": 4913,
        "vocabulary_tokens": 237,
        "most_frequent": ["G", "C", "D"],
        "min_chords_per_song": 6,
    },
    "power_law": {
        # Trendline over the 61 most common chords: freq = a * rank^b.
        "a": 184864.0,
        "b": -1.25,
        "top_ranks": 61,
    },
    "embedding": {"dim": 200, "window": 5},
    "lm_test_set": {
        "songs": 8748,
        "by_init": {
            "NI": {"loss": 1.42, "ppl": 4.16},
            "PR": {"loss": 1.44, "ppl": 4.20},
            "CE_cbow": {"loss": 1.44, "ppl": 4.22},
            "CE_sglm": {"loss": 1.42, "ppl": 4.15},
        },
    },
    "annotation_study": {
        "n_annotators": 9,
        "expertise_ratings": [0, 0, 10, 10, 19, 25, 25, 50, 73],
        "n_prompts": 39,
        "prompt_lengths": [3, 6],
        "unique_mode_prompts": 25,
        "pairwise_agreement": {
            "all": 22.51, "beginner": 23.08, "intermediate": 25.38, "expert": 17.95,
        },
        "pairwise_pitch_agreement": {
            "all": 38.00, "beginner": 37.01, "intermediate": 40.90, "expert": 33.59,
        },
        "mean_unique_chords_per_annotator": {
            "all": 30.2, "beginner": 35.5, "intermediate": 27.4, "expert": 32.0,
        },
        # match_best / match_oo4 / mode_best / mode_oo4 / pm_ave per group.
        "metrics": {
            "all": {
                "NI": [7.52, 30.10, 32.00, 64.00, 48.33],
                "PR": [7.49, 29.64, 24.00, 72.00, 51.11],
                "CE_cbow": [7.45, 29.82, 16.00, 64.00, 47.78],
                "CE_sglm": [7.60, 30.22, 12.00, 68.00, 49.00],
            },
            "beginner": {
                "NI": [5.61, 22.44, 0.00, 44.44, 40.50],
                "PR": [5.61, 22.44, 11.11, 33.33, 43.00],
                "CE_cbow": [4.97, 19.87, 0.00, 22.22, 39.50],
                "CE_sglm": [5.29, 21.15, 0.00, 33.33, 42.00],
            },
            "intermediate": {
                "NI": [8.17, 32.68, 33.33, 71.43, 48.80],
                "PR": [8.19, 32.42, 23.81, 71.43, 53.60],
                "CE_cbow": [8.04, 32.14, 14.29, 66.67, 47.20],
                "CE_sglm": [8.34, 33.19, 14.29, 71.43, 50.00],
            },
            "expert": {
                "NI": [7.92, 31.67, 28.57, 85.71, 55.00],
                "PR": [7.72, 30.26, 28.57, 85.71, 53.00],
                "CE_cbow": [8.56, 34.23, 42.86, 85.71, 57.50],
                "CE_sglm": [8.15, 32.18, 14.29, 57.14, 53.50],
            },
        },
        # (r, p) per model: Spearman on match_best and match_oo4 vs
        # expertise, Pearson on total pitch matches vs expertise.
        "expertise_correlations": {
            "NI": {"best": [0.44, 0.24], "oo4": [0.44, 0.24], "pm": [0.71, 0.03]},
            "PR": {"best": [0.64, 0.06], "oo4": [0.57, 0.11], "pm": [0.43, 0.25]},
            "CE_cbow": {"best": [0.72, 0.03], "oo4": [0.72, 0.03], "pm": [0.94, 2e-4]},
            "CE_sglm": {"best": [0.41, 0.28], "oo4": [0.41, 0.28], "pm": [0.42, 0.27]},
        },
    },
    # 10-fold CV accuracy per attribute: gender / country / artist type.
    "classification": {
        "LR": {
            "boc_count": [57.53, 55.71, 57.04],
            "boc_tfidf": [55.94, 55.17, 56.06],
            "pr_agg": [52.32, 53.13, 53.75],
            "ce_maxpool_cbow": [56.90, 55.37, 56.92],
            "ce_maxpool_sglm": [56.37, 55.85, 56.88],
        },
        "CNN": {
            "NI": [58.93, 56.79, 59.20],
            "PR": [57.98, 55.31, 57.54],
            "CE_cbow": [58.67, 57.30, 58.92],
            "CE_sglm": [58.95, 57.54, 59.29],
        },
    },
}


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def versions() -> dict[str, str]:
    return {
        "chordspace": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def build_record(command: str, config: dict, inputs=()) -> dict:
    """Provenance for one run: command, resolved config, input hashes.

    Deliberately carries no timestamp so reruns with identical seeds and
    configs write byte-identical records.
    """
    return {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "inputs": [
            {"path": str(path), "sha256": file_sha256(path)} for path in inputs
        ],
        "versions": versions(),
    }


def write_record(record: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
