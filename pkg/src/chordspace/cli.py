"""Command-line entry points.

Each subcommand reads its inputs, writes tables (CSV by default, JSON with
--format json) plus rendered figures into --out-dir, and drops a provenance
record naming the resolved configuration and input hashes, so any artifact
can be regenerated from the record. Exit codes: 0 success, 1 data error,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from . import analysis, chords as chord_core, evaluation, lm, plots, provenance, server
from .classify import CnnConfig, LR_SCHEMES, run_attribute_study
from .corpus import (
    FormatError, SyntheticConfig, build_vocab, dedup, filter_min_chords,
    fit_power_law, generate_synthetic_corpus, join_metadata, load_corpus,
    save_corpus, song_frequency_ranks,
)
from .embeddings import (
    EmbeddingConfig, EmptyCorpusError, load_embeddings, nearest, save_embeddings,
    train_embeddings,
)
from .lm import INIT_MODES, LMConfig, NonFiniteLossError, VocabMismatchError

DATA_ERRORS = (
    FormatError,
    chord_core.ParseError,
    chord_core.UnknownChordError,
    EmptyCorpusError,
    VocabMismatchError,
    NonFiniteLossError,
    OSError,
    ValueError,
)


def _comma_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _pair(text: str) -> tuple[float, float]:
    parts = _comma_list(text)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers")
    return float(parts[0]), float(parts[1])


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(rows: list[dict], base: Path, fmt: str) -> Path:
    """Write rows as <base>.csv or <base>.json; returns the path written."""
    if fmt == "json":
        path = base.with_suffix(".json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path
    path = base.with_suffix(".csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return path


def _record_run(args, out: Path, inputs=()) -> None:
    config = {}
    for key, value in vars(args).items():
        if key == "func" or callable(value):
            continue
        config[key] = str(value) if isinstance(value, Path) else value
    record = provenance.build_record(args.command, config, inputs)
    provenance.write_record(record, out / f"{args.command}.provenance.json")


# ---------------------------------------------------------------------------
# Corpus commands


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    corpus = load_corpus(args.corpus)
    n_loaded = len(corpus)
    if args.metadata:
        corpus = join_metadata(corpus, args.metadata)
    corpus = filter_min_chords(corpus, args.min_chords)
    save_corpus(corpus, out / "corpus.jsonl")
    inputs = [args.corpus] + ([args.metadata] if args.metadata else [])
    _record_run(args, out, inputs)
    print(f"ingested {n_loaded} songs, kept {len(corpus)} with >= {args.min_chords} chords")
    return 0


def cmd_dedup(args) -> int:
    out = _out_dir(args)
    corpus = load_corpus(args.corpus)
    kept = dedup(corpus, args.threshold)
    save_corpus(kept, out / "corpus.jsonl")
    _record_run(args, out, [args.corpus])
    print(f"kept {len(kept)} of {len(corpus)} songs at threshold {args.threshold}")
    return 0


def cmd_stats(args) -> int:
    out = _out_dir(args)
    corpus = load_corpus(args.corpus)
    ranks = song_frequency_ranks(corpus)
    fit = fit_power_law(
        [(i, count) for i, (_, count) in enumerate(ranks, start=1)],
        top_k=args.fit_top,
    )
    rows = [
        {"rank": i, "chord": token, "songs": count}
        for i, (token, count) in enumerate(ranks, start=1)
    ]
    table = _write_table(rows, out / "ranks", args.format)
    figure = plots.save_rank_plot(ranks, fit, out / "ranks.png")
    _record_run(args, out, [args.corpus])
    print(f"{len(rows)} tokens; fit a={fit.a:.6g} b={fit.b:.6f} r2={fit.r_squared:.4f}")
    print(f"wrote {table} and {figure}")
    return 0


def cmd_gen_synthetic(args) -> int:
    out = _out_dir(args)
    cfg = SyntheticConfig(sus_prob=args.sus_prob, aug_prob=args.aug_prob)
    corpus = generate_synthetic_corpus(args.seed, args.n, cfg)
    save_corpus(corpus, out / "corpus.jsonl")
    _record_run(args, out)
    print(f"wrote {len(corpus)} songs to {out / 'corpus.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# Embedding commands


def cmd_train_emb(args) -> int:
    out = _out_dir(args)
    corpus = load_corpus(args.corpus)
    vocab = build_vocab(corpus, args.df_threshold)
    config = EmbeddingConfig(
        mode=args.mode, window=args.window, dim=args.dim, negatives=args.negatives,
        epochs=args.epochs, seed=args.seed,
    )
    matrix = train_embeddings(corpus, vocab, config)
    save_embeddings(matrix, out / "embeddings.txt")
    history = [
        {"epoch": i, "train_loss": loss} for i, loss in enumerate(matrix.epoch_losses)
    ]
    _write_table(history, out / "history", args.format)
    plots.save_history_plot(history, out / "history.png", keys=("train_loss",))
    _record_run(args, out, [args.corpus])
    print(f"trained {len(vocab)} x {args.dim} {args.mode} embeddings; "
          f"final loss {matrix.epoch_losses[-1]:.6f}")
    return 0


def cmd_nearest(args) -> int:
    out = _out_dir(args)
    matrix = load_embeddings(args.embeddings)
    if args.chord not in matrix.vocab.index:
        raise FormatError(f"chord {args.chord!r} is not in the embedding vocabulary")
    ranked = nearest(matrix, args.chord, args.k)
    rows = [
        {"rank": i, "chord": token, "cosine": value}
        for i, (token, value) in enumerate(ranked, start=1)
    ]
    _write_table(rows, out / "nearest", args.format)
    _record_run(args, out, [args.embeddings])
    for row in rows:
        print(f"{row['rank']:3d} {row['chord']:8s} {row['cosine']:+.4f}")
    return 0


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    if args.kind == "salience":
        corpus = load_corpus(args.input)
        chord_report = analysis.chord_salience(corpus, args.label)
        quality_report = analysis.quality_salience(corpus, args.label)
        _write_table(
            [{"chord": k, "salience": v} for k, v in sorted(chord_report.ratios.items())],
            out / "salience_chords", args.format,
        )
        _write_table(
            [{"quality": k, "salience": v} for k, v in sorted(quality_report.ratios.items())],
            out / "salience_qualities", args.format,
        )
        plots.save_salience_plot(chord_report, out / "salience_chords.png")
        plots.save_salience_plot(quality_report, out / "salience_qualities.png")
        first, second = chord_report.classes
        print(f"salience over {first}/{second}: {len(chord_report.ratios)} chords, "
              f"{len(quality_report.ratios)} qualities")
    else:
        matrix = load_embeddings(args.input)
        if args.kind == "pca":
            projection = analysis.pca_project(matrix, dims=2)
            rows = [
                {"chord": token, "x": xy[0], "y": xy[1]}
                for token, xy in projection.points.items()
            ]
            _write_table(rows, out / "pca", args.format)
            label_tokens = None
            if args.label_top:
                label_tokens = set(matrix.vocab.tokens[: args.label_top])
            plots.save_projection_plot(projection, out / "pca.png", label_tokens)
            var = projection.explained_variance
            print(f"projected {len(rows)} tokens; explained variance "
                  f"{var[0]:.3f} + {var[1]:.3f}")
        elif args.kind == "fifths":
            scores = {q: analysis.fifth_chain_score(matrix, q) for q in ("major", "minor")}
            rows = [
                {
                    "quality": quality,
                    "fifth_mean": s.mean_fifth_cosine,
                    "random_mean": s.mean_random_cosine,
                    "gap": s.gap,
                    "fifth_pairs": s.fifth_pairs,
                    "random_pairs": s.random_pairs,
                    "random_se": s.random_se,
                }
                for quality, s in scores.items()
            ]
            _write_table(rows, out / "fifths", args.format)
            plots.save_fifths_plot(scores, out / "fifths.png")
            for row in rows:
                print(f"{row['quality']}: fifth {row['fifth_mean']:+.4f} vs "
                      f"random {row['random_mean']:+.4f} (gap {row['gap']:+.4f})")
        elif args.kind == "relatives":
            entries = analysis.relative_pair_report(matrix)
            rows = [
                {
                    "major": e.major, "minor": e.minor,
                    "cosine": e.cosine, "neighbor_rank": e.neighbor_rank,
                }
                for e in entries
            ]
            _write_table(rows, out / "relatives", args.format)
            plots.save_pair_cosine_plot(
                [(f"{e.major}/{e.minor}", e.cosine) for e in entries],
                out / "relatives.png", "relative-pair cosine",
            )
            in_top5 = sum(1 for e in entries if e.neighbor_rank <= 5)
            print(f"{in_top5} of {len(entries)} relative minors rank in the top-5 neighbors")
        else:  # enharmonics
            pairs = analysis.enharmonic_report(matrix)
            rows = [
                {"sharp": a, "flat": b, "cosine": value} for a, b, value in pairs
            ]
            _write_table(rows, out / "enharmonics", args.format)
            plots.save_pair_cosine_plot(
                [(f"{a}/{b}", value) for a, b, value in pairs],
                out / "enharmonics.png", "enharmonic-pair cosine",
            )
            print(f"{len(pairs)} enharmonic pairs found")
    _record_run(args, out, [args.input])
    return 0


# ---------------------------------------------------------------------------
# Language model commands


def cmd_train_lm(args) -> int:
    out = _out_dir(args)
    corpus = load_corpus(args.corpus)
    vocab = build_vocab(corpus, args.df_threshold)
    embeddings = None
    if args.init in ("CE_cbow", "CE_sglm"):
        if not args.embeddings:
            raise FormatError(f"init {args.init} needs --embeddings")
        embeddings = load_embeddings(args.embeddings)
    config = LMConfig(
        init=args.init, emb_dim=args.dim, hidden_dim=args.hidden, layers=args.layers,
        seq_len=args.seq_len, batch=args.batch, dropout=args.dropout, lr=args.lr,
        epochs=args.epochs, seed=args.seed, tie_weights=args.tie_weights,
    )
    model = lm.lm_train(corpus, vocab, config, embeddings)
    lm.save_model(model, out / "lm.ckpt")
    _write_table(model.history, out / "history", args.format)
    plots.save_history_plot(model.history, out / "history.png")
    loss, ppl = lm.perplexity(model, corpus)
    _record_run(args, out, [args.corpus] + ([args.embeddings] if args.embeddings else []))
    print(f"trained {config.layers}-layer LM ({args.init}); "
          f"corpus loss {loss:.4f}, perplexity {ppl:.4f}")
    return 0


def _print_predictions(ranked) -> None:
    for token, prob in ranked:
        print(f"  {token:8s} {prob:.4f}")


def cmd_predict(args) -> int:
    out = _out_dir(args)
    model = lm.load_model(args.checkpoint)
    if not args.interactive:
        progression = _comma_list(args.progression or "")
        if not progression:
            raise FormatError("--progression is required unless --interactive is set")
        ranked = lm.predict_next(model, progression, args.k)
        rows = [
            {"rank": i, "chord": t, "probability": p}
            for i, (t, p) in enumerate(ranked, start=1)
        ]
        _write_table(rows, out / "predictions", args.format)
        _record_run(args, out, [args.checkpoint])
        print(", ".join(progression))
        _print_predictions(ranked)
        return 0
    # REPL: the first line seeds the progression, later lines append one
    # chord each (a comma list replaces the progression); blank line quits.
    working = _comma_list(args.progression or "")
    _record_run(args, out, [args.checkpoint])
    if working:
        print(", ".join(working))
        _print_predictions(lm.predict_next(model, working, args.k))
    for line in sys.stdin:
        text = line.strip()
        if not text or text.lower() == "quit":
            break
        tokens = _comma_list(text)
        if len(tokens) > 1 or not working:
            working = tokens
        else:
            working = working + tokens
        print(", ".join(working))
        _print_predictions(lm.predict_next(model, working, args.k))
    return 0


# ---------------------------------------------------------------------------
# Evaluation and classification commands


def _model_predictions(args, annotations) -> dict[str, list[str]]:
    if args.predictions:
        with open(args.predictions, encoding="utf-8") as fh:
            preds = json.load(fh)
        if not isinstance(preds, dict):
            raise FormatError("predictions file must map prompt_id to a chord list")
        return {str(k): list(v) for k, v in preds.items()}
    if not args.checkpoint:
        raise FormatError("need --predictions or --checkpoint")
    model = lm.load_model(args.checkpoint)
    preds = {}
    for record in annotations:
        if record.prompt_id not in preds:
            ranked = lm.predict_next(model, list(record.progression), args.k)
            preds[record.prompt_id] = [token for token, _ in ranked]
    return preds


def cmd_eval_annotations(args) -> int:
    out = _out_dir(args)
    annotations = evaluation.load_annotations(args.annotations)
    preds = _model_predictions(args, annotations)
    report = evaluation.expertise_report(preds, annotations)
    rows = []
    for group, metrics in report.groups.items():
        rows.append({
            "group": group,
            "n_annotators": metrics.n_annotators,
            "match_best": metrics.match_best,
            "match_oo4": metrics.match_oo4,
            "mode_best": metrics.mode_best,
            "mode_oo4": metrics.mode_oo4,
            "n_mode_examples": metrics.n_mode_examples,
            "pm_ave": metrics.pm_ave,
        })
    _write_table(rows, out / "metrics", args.format)
    if report.correlations:
        _write_table(
            [
                {"metric": name, "r": r, "p": p}
                for name, (r, p) in report.correlations.items()
            ],
            out / "correlations", args.format,
        )
    plots.save_group_metrics_plot(report.groups, out / "metrics.png")
    inputs = [args.annotations]
    for optional in (args.predictions, args.checkpoint):
        if optional:
            inputs.append(optional)
    _record_run(args, out, inputs)
    for row in rows:
        print(f"{row['group']:12s} match {row['match_best']:6.2f}/{row['match_oo4']:6.2f}  "
              f"mode {row['mode_best']:6.2f}/{row['mode_oo4']:6.2f}  pm {row['pm_ave']:.2f}")
    return 0


def cmd_classify(args) -> int:
    out = _out_dir(args)
    corpus = load_corpus(args.corpus)
    cnn_config = CnnConfig(
        emb_dim=args.cnn_dim, dropout=args.cnn_dropout, epochs=args.cnn_epochs,
        batch=args.cnn_batch, seed=args.seed,
    )
    emb_config = EmbeddingConfig(
        mode="skipgram", dim=args.cnn_dim, window=args.window,
        epochs=args.emb_epochs, seed=args.seed,
    )
    report = run_attribute_study(
        corpus, args.attribute,
        representations=args.representations,
        models=args.models,
        l2_lambda=args.l2,
        cnn_config=cnn_config,
        emb_config=emb_config,
        folds=args.folds,
        seed=args.seed,
    )
    rows = []
    for row in report.rows:
        entry = {
            "family": row.family,
            "model": row.name,
            "marker": row.marker,
            "mean_accuracy": row.cv.mean,
            "beats": "".join(row.beats),
        }
        for i, acc in enumerate(row.cv.per_fold_accuracy, start=1):
            entry[f"fold{i}"] = acc
        rows.append(entry)
    _write_table(rows, out / "study", args.format)
    plots.save_study_plot(report, out / "study.png")
    _record_run(args, out, [args.corpus])
    print(f"{report.attribute} ({report.class_values[0]} vs {report.class_values[1]}, "
          f"{report.n_songs} songs, {report.folds} folds)")
    for row in report.rows:
        beats = f" beats {','.join(row.beats)}" if row.beats else ""
        print(f"  ({row.marker}) {row.family:3s} {row.name:10s} {row.cv.mean:.4f}{beats}")
    return 0


def cmd_serve(args) -> int:
    out = _out_dir(args)
    model = lm.load_model(args.checkpoint) if args.checkpoint else None
    prompts = server.load_prompts(args.prompts) if args.prompts else []
    state = server.ServerState(
        annotations_path=args.annotations,
        model=model,
        prompts=prompts,
        static_dir=args.static,
    )
    inputs = [p for p in (args.checkpoint, args.prompts) if p]
    _record_run(args, out, inputs)
    httpd = server.make_server(state, args.host, args.port)
    host, port = httpd.server_address[:2]
    print(f"serving on http://{host}:{port} "
          f"(model={'loaded' if model else 'none'}, prompts={len(prompts)})")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


# ---------------------------------------------------------------------------
# Parser


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", type=Path, default=Path("."))
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chordspace",
        description="Chord progression toolkit: corpus statistics, embeddings, "
        "next-chord prediction, annotation evaluation, and attribute classification.",
    )
    common = _common()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate and clean a corpus file")
    p.add_argument("corpus", type=Path)
    p.add_argument("--metadata", type=Path, default=None)
    p.add_argument("--min-chords", type=int, default=6)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("dedup", parents=[common], help="drop near-duplicate songs")
    p.add_argument("corpus", type=Path)
    p.add_argument("--threshold", type=float, default=0.9)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("stats", parents=[common], help="rank table and power-law fit")
    p.add_argument("corpus", type=Path)
    p.add_argument("--fit-top", type=int, default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gen-synthetic", parents=[common], help="sample a synthetic corpus")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--sus-prob", type=_pair, default=(0.0, 0.0))
    p.add_argument("--aug-prob", type=_pair, default=(0.0, 0.0))
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train-emb", parents=[common], help="train chord embeddings")
    p.add_argument("corpus", type=Path)
    p.add_argument("--mode", choices=("cbow", "skipgram"), default="cbow")
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--df-threshold", type=float, default=0.001)
    p.set_defaults(func=cmd_train_emb)

    p = sub.add_parser("nearest", parents=[common], help="nearest tokens by cosine")
    p.add_argument("embeddings", type=Path)
    p.add_argument("--chord", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_nearest)

    p = sub.add_parser("analyze", parents=[common], help="embedding and corpus analyses")
    p.add_argument("kind", choices=("pca", "fifths", "relatives", "enharmonics", "salience"))
    p.add_argument("input", type=Path, help="embeddings file, or corpus for salience")
    p.add_argument("--label", default="gender", help="label for salience")
    p.add_argument("--label-top", type=int, default=40, help="tokens to annotate in pca")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train-lm", parents=[common], help="train the progression LM")
    p.add_argument("corpus", type=Path)
    p.add_argument("--init", choices=INIT_MODES, default="NI")
    p.add_argument("--embeddings", type=Path, default=None)
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seq-len", type=int, default=35)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=20.0)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--tie-weights", action="store_true")
    p.add_argument("--df-threshold", type=float, default=0.001)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("predict", parents=[common], help="top-k next chords")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--progression", default="")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--interactive", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval-annotations", parents=[common],
                       help="score model predictions against annotations")
    p.add_argument("annotations", type=Path)
    p.add_argument("--predictions", type=Path, default=None,
                   help="JSON mapping prompt_id to ranked chords")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--k", type=int, default=4)
    p.set_defaults(func=cmd_eval_annotations)

    p = sub.add_parser("classify", parents=[common], help="attribute prediction study")
    p.add_argument("corpus", type=Path)
    p.add_argument("--attribute", default="gender")
    p.add_argument("--representations", type=_comma_list, default=list(LR_SCHEMES))
    p.add_argument("--models", type=_comma_list, default=list(INIT_MODES))
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--cnn-dim", type=int, default=50)
    p.add_argument("--cnn-epochs", type=int, default=20)
    p.add_argument("--cnn-batch", type=int, default=32)
    p.add_argument("--cnn-dropout", type=float, default=0.5)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--emb-epochs", type=int, default=3)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("serve", parents=[common], help="run the annotation/suggestion API")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--prompts", type=Path, default=None)
    p.add_argument("--static", type=Path, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8040)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
