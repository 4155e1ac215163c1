"""Figure rendering for CLI reports.

Every helper writes one PNG next to the CSV the command emits and returns
the path. The Agg backend is forced so rendering works headless, and the
PNG Software tag is pinned so identical runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_META = {"Software": "chordspace"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_META)
    plt.close(fig)
    return path


def save_rank_plot(ranks, fit, path):
    """Log-log song-frequency-by-rank scatter with the fitted trend line."""
    counts = [count for _, count in ranks]
    xs = np.arange(1, len(counts) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(xs, counts, marker="s", markersize=2.5, linestyle="none", label="chords")
    ax.loglog(xs, fit.a * xs**fit.b, color="red", linewidth=1,
              label=f"{fit.a:.3g} r^{fit.b:.3f} (r2={fit.r_squared:.3f})")
    ax.set_xlabel("chord song frequency rank")
    ax.set_ylabel("song frequency")
    ax.legend(fontsize=8)
    return _save(fig, path)


def save_projection_plot(projection, path, label_tokens=None):
    """2D embedding scatter; label_tokens limits annotations to a subset."""
    points = projection.points
    xs = [xy[0] for xy in points.values()]
    ys = [xy[1] for xy in points.values()]
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(xs, ys, s=8, color="tab:blue")
    for token, (x, y, *_) in points.items():
        if label_tokens is None or token in label_tokens:
            ax.annotate(token, (x, y), fontsize=7, alpha=0.8)
    var = projection.explained_variance
    ax.set_xlabel(f"pc1 ({var[0]:.1%} variance)")
    ax.set_ylabel(f"pc2 ({var[1]:.1%} variance)" if len(var) > 1 else "pc2")
    return _save(fig, path)


def save_fifths_plot(scores, path):
    """Fifth-pair vs random-pair mean cosine per quality, SE whiskers on random."""
    labels = list(scores)
    width = 0.38
    xs = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(xs - width / 2, [scores[q].mean_fifth_cosine for q in labels],
           width, label="fifth pairs")
    ax.bar(xs + width / 2, [scores[q].mean_random_cosine for q in labels],
           width, yerr=[scores[q].random_se for q in labels],
           capsize=3, label="other same-quality pairs")
    ax.set_xticks(xs, labels)
    ax.set_ylabel("mean cosine")
    ax.legend(fontsize=8)
    return _save(fig, path)


def save_pair_cosine_plot(pairs, path, ylabel):
    """Bar of cosine per labeled pair, e.g. relative or enharmonic pairs."""
    labels = [name for name, _ in pairs]
    fig, ax = plt.subplots(figsize=(max(4, 0.45 * len(pairs)), 4))
    ax.bar(np.arange(len(pairs)), [value for _, value in pairs], color="tab:blue")
    ax.set_xticks(np.arange(len(pairs)), labels, rotation=70, fontsize=7)
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def save_salience_plot(report, path, limit=60):
    """Signed usage-ratio bars, most salient for each class at the extremes."""
    items = sorted(report.ratios.items(), key=lambda kv: kv[1])[:limit]
    fig, ax = plt.subplots(figsize=(max(4, 0.22 * len(items)), 4))
    values = [v for _, v in items]
    ax.bar(np.arange(len(items)), values,
           color=["tab:red" if v < 0 else "tab:blue" for v in values])
    ax.set_xticks(np.arange(len(items)), [k for k, _ in items], rotation=70, fontsize=6)
    ax.axhline(0.0, color="black", linewidth=0.6)
    first, second = report.classes
    ax.set_ylabel(f"salience (+{first} / -{second})")
    return _save(fig, path)


def save_history_plot(history, path, keys=("train_loss", "valid_loss")):
    """Per-epoch training curves; keys absent from the history are skipped."""
    fig, ax = plt.subplots(figsize=(5, 4))
    epochs = [entry["epoch"] for entry in history]
    for key in keys:
        values = [entry[key] for entry in history if key in entry]
        if len(values) == len(epochs):
            ax.plot(epochs, values, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    return _save(fig, path)


def save_study_plot(report, path):
    """Fold-accuracy bars per model with pairwise-significance letters."""
    rows = report.rows
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(rows)), 4))
    xs = np.arange(len(rows))
    means = [row.cv.mean for row in rows]
    colors = ["tab:blue" if row.family == "LR" else "tab:orange" for row in rows]
    ax.bar(xs, means, color=colors)
    for x, row in zip(xs, rows):
        beats = "".join(row.beats)
        text = f"({row.marker})" + (f" >{beats}" if beats else "")
        ax.annotate(text, (x, row.cv.mean), ha="center", va="bottom", fontsize=7)
    ax.set_xticks(xs, [f"{row.family} {row.name}" for row in rows], rotation=30, fontsize=8)
    ax.axhline(0.5, color="gray", linewidth=0.6, linestyle="--")
    ax.set_ylabel(f"{report.folds}-fold accuracy: {report.attribute}")
    ax.set_ylim(0.0, 1.0)
    return _save(fig, path)


def save_group_metrics_plot(reports, path):
    """Annotation metric bars per expertise group."""
    metrics = ("match_best", "match_oo4", "mode_best", "mode_oo4", "pm_ave")
    groups = list(reports)
    width = 0.8 / len(metrics)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(groups))
    for i, metric in enumerate(metrics):
        values = [getattr(reports[g], metric) for g in groups]
        ax.bar(xs + (i - len(metrics) / 2 + 0.5) * width, values, width, label=metric)
    ax.set_xticks(xs, groups)
    ax.legend(fontsize=7)
    ax.set_ylabel("score")
    return _save(fig, path)
