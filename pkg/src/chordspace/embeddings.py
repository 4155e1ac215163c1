"""Chord embeddings: CBOW and skip-gram training with negative sampling.

Both objectives are optimized by plain SGD over songs, batched per song for
speed but otherwise faithful to the pairwise negative-sampling losses exposed
by ns_loss_and_grad / cbow_loss_and_grad (which the gradient tests check
against finite differences). Input vectors are the published embeddings.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Corpus, FormatError, Vocabulary

MODES = ("cbow", "skipgram")


class EmptyCorpusError(ValueError):
    """Raised when training is attempted on a corpus with no usable tokens."""


class DimZeroError(ValueError):
    """Raised when the embedding dimension is not positive."""


@dataclasses.dataclass(frozen=True)
class EmbeddingConfig:
    mode: str = "cbow"
    window: int = 5
    dim: int = 200
    negatives: int = 5
    epochs: int = 5
    initial_lr: float = 0.025
    final_lr: float = 1e-4
    seed: int = 0
    subsample_threshold: Optional[float] = None
    dynamic_window: bool = True


@dataclasses.dataclass
class EmbeddingMatrix:
    vocab: Vocabulary
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    config: Optional[EmbeddingConfig] = None
    epoch_losses: list[float] = dataclasses.field(default_factory=list)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _loss_and_grad_for_v(
    v: np.ndarray,
    target: int,
    negatives: Sequence[int],
    output_vectors: np.ndarray,
) -> tuple[float, np.ndarray, dict[int, np.ndarray]]:
    """Negative-sampling loss and grads for one predicted vector v.

    loss = -log sigma(u_t . v) - sum_n log sigma(-u_n . v). Output-row
    gradients accumulate per row id so repeated negatives stay correct.
    """
    u_t = output_vectors[target]
    score_t = float(u_t @ v)
    loss = float(np.logaddexp(0.0, -score_t))
    grad_v = (_sigmoid(score_t) - 1.0) * u_t
    grad_out: dict[int, np.ndarray] = {target: (_sigmoid(score_t) - 1.0) * v}
    for n in negatives:
        u_n = output_vectors[n]
        score_n = float(u_n @ v)
        loss += float(np.logaddexp(0.0, score_n))
        g = _sigmoid(score_n)
        grad_v = grad_v + g * u_n
        if n in grad_out:
            grad_out[n] = grad_out[n] + g * v
        else:
            grad_out[n] = g * v
    return loss, grad_v, grad_out


def ns_loss_and_grad(
    center: int,
    context: int,
    negatives: Sequence[int],
    input_vectors: np.ndarray,
    output_vectors: np.ndarray,
) -> tuple[float, np.ndarray, dict[int, np.ndarray]]:
    """Skip-gram pair loss: input row of the center scores the context's
    output row against sampled negatives. Returns (loss, grad for the
    center's input row, grads per touched output row)."""
    return _loss_and_grad_for_v(input_vectors[center], context, negatives, output_vectors)


def cbow_loss_and_grad(
    context_ids: Sequence[int],
    target: int,
    negatives: Sequence[int],
    input_vectors: np.ndarray,
    output_vectors: np.ndarray,
) -> tuple[float, dict[int, np.ndarray], dict[int, np.ndarray]]:
    """CBOW loss for one position: the mean context input vector predicts
    the target. The mean's gradient is split evenly over context rows, so a
    context of m identical tokens accumulates exactly the skip-gram update."""
    if not context_ids:
        raise ValueError("CBOW needs at least one context token")
    rows = input_vectors[np.asarray(context_ids, dtype=np.intp)]
    v_bar = rows.mean(axis=0)
    loss, grad_v, grad_out = _loss_and_grad_for_v(v_bar, target, negatives, output_vectors)
    share = grad_v / len(context_ids)
    grad_in: dict[int, np.ndarray] = {}
    for c in context_ids:
        if c in grad_in:
            grad_in[c] = grad_in[c] + share
        else:
            grad_in[c] = share.copy()
    return loss, grad_in, grad_out


def _noise_distribution(songs_ids: list[np.ndarray], vocab_size: int) -> np.ndarray:
    counts = np.zeros(vocab_size, dtype=np.float64)
    for ids in songs_ids:
        np.add.at(counts, ids, 1.0)
    if counts.sum() == 0:
        raise EmptyCorpusError("no tokens to train on")
    weights = counts**0.75
    return weights / weights.sum()


def _window_bounds(rng, length: int, window: int, dynamic: bool) -> np.ndarray:
    if dynamic:
        return rng.integers(1, window + 1, size=length)
    return np.full(length, window, dtype=np.int64)


def _song_pairs(ids: np.ndarray, bounds: np.ndarray, window: int):
    """Center/context id pairs for one song under per-position windows."""
    centers, contexts = [], []
    length = len(ids)
    for d in range(1, window + 1):
        if d >= length:
            break
        keep = bounds[d:] >= d
        centers.append(ids[d:][keep])
        contexts.append(ids[:-d][keep])
        keep = bounds[:-d] >= d
        centers.append(ids[:-d][keep])
        contexts.append(ids[d:][keep])
    if not centers:
        return np.empty(0, dtype=ids.dtype), np.empty(0, dtype=ids.dtype)
    return np.concatenate(centers), np.concatenate(contexts)


def _context_segments(length: int, bounds: np.ndarray):
    """Flat context index list plus segment ids per center position."""
    flat, seg = [], []
    for t in range(length):
        lo = max(0, t - int(bounds[t]))
        hi = min(length, t + int(bounds[t]) + 1)
        for j in range(lo, hi):
            if j != t:
                flat.append(j)
                seg.append(t)
    return np.asarray(flat, dtype=np.intp), np.asarray(seg, dtype=np.intp)


def train_embeddings(
    corpus: Corpus, vocab: Vocabulary, config: EmbeddingConfig
) -> EmbeddingMatrix:
    """Train embeddings by single-pass-per-epoch SGD with negative sampling.

    Deterministic for a fixed seed (single-threaded). The learning rate
    decays linearly from initial_lr to final_lr over all center positions,
    stepped once per song.
    """
    if config.dim <= 0:
        raise DimZeroError(f"dim must be positive, got {config.dim}")
    if config.mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if config.negatives < 1:
        raise ValueError("negatives must be >= 1")
    if config.window < 1:
        raise ValueError("window must be >= 1")
    songs_ids = [
        np.asarray(vocab.encode(song.chords), dtype=np.intp)
        for song in corpus.songs
        if len(song.chords) > 0
    ]
    if not songs_ids:
        raise EmptyCorpusError("corpus has no non-empty songs")
    size = len(vocab)
    rng = np.random.default_rng(config.seed)
    input_vectors = (rng.random((size, config.dim)) - 0.5) / config.dim
    output_vectors = np.zeros((size, config.dim))
    noise = _noise_distribution(songs_ids, size)

    freq = None
    if config.subsample_threshold is not None:
        counts = np.zeros(size)
        for ids in songs_ids:
            np.add.at(counts, ids, 1.0)
        freq = counts / counts.sum()

    total_centers = config.epochs * sum(len(ids) for ids in songs_ids)
    processed = 0
    lr_span = config.final_lr - config.initial_lr
    k = config.negatives
    epoch_losses = []
    for _ in range(config.epochs):
        loss_sum = 0.0
        loss_count = 0
        for ids in songs_ids:
            lr = config.initial_lr + lr_span * (processed / total_centers)
            processed += len(ids)
            if freq is not None:
                # Frequent-token subsampling: keep with prob sqrt(t/f).
                keep_p = np.minimum(1.0, np.sqrt(config.subsample_threshold / np.maximum(freq[ids], 1e-12)))
                ids = ids[rng.random(len(ids)) < keep_p]
            if len(ids) < 2:
                continue
            bounds = _window_bounds(rng, len(ids), config.window, config.dynamic_window)
            if config.mode == "skipgram":
                centers, contexts = _song_pairs(ids, bounds, config.window)
                if len(centers) == 0:
                    continue
                negs = rng.choice(size, size=(len(centers), k), p=noise)
                v = input_vectors[centers]
                loss_sum += _apply_ns_updates(
                    v, centers, contexts, negs, input_vectors, output_vectors, lr,
                    scatter_input=True,
                )
                loss_count += len(centers)
            else:
                flat, seg = _context_segments(len(ids), bounds)
                m = np.bincount(seg, minlength=len(ids)).astype(np.float64)
                negs = rng.choice(size, size=(len(ids), k), p=noise)
                sums = np.zeros((len(ids), config.dim))
                np.add.at(sums, seg, input_vectors[ids[flat]])
                v_bar = sums / m[:, None]
                loss_part, grad_vbar = _apply_ns_updates(
                    v_bar, None, ids, negs, input_vectors, output_vectors, lr,
                    scatter_input=False,
                )
                loss_sum += loss_part
                shares = grad_vbar / m[:, None]
                np.add.at(input_vectors, ids[flat], -lr * shares[seg])
                loss_count += len(ids)
        epoch_losses.append(loss_sum / max(loss_count, 1))

    if not (np.isfinite(input_vectors).all() and np.isfinite(output_vectors).all()):
        raise FloatingPointError("embedding training diverged")
    return EmbeddingMatrix(vocab, input_vectors, output_vectors, config, epoch_losses)


def _apply_ns_updates(
    v, centers, targets, negs, input_vectors, output_vectors, lr, scatter_input
):
    """Shared batched update for one song. With scatter_input the rows in
    `centers` receive the v-gradient (skip-gram); otherwise the v-gradient
    matrix is returned with the loss for the caller to distribute (CBOW)."""
    u_pos = output_vectors[targets]
    u_neg = output_vectors[negs]
    score_pos = np.einsum("pd,pd->p", v, u_pos)
    score_neg = np.einsum("pd,pkd->pk", v, u_neg)
    loss = float(np.logaddexp(0.0, -score_pos).sum() + np.logaddexp(0.0, score_neg).sum())
    g_pos = _sigmoid(score_pos) - 1.0
    g_neg = _sigmoid(score_neg)
    grad_v = g_pos[:, None] * u_pos + np.einsum("pk,pkd->pd", g_neg, u_neg)
    np.add.at(output_vectors, targets, -lr * g_pos[:, None] * v)
    dim = input_vectors.shape[1]
    np.add.at(
        output_vectors,
        negs.ravel(),
        -lr * (g_neg[:, :, None] * v[:, None, :]).reshape(-1, dim),
    )
    if scatter_input:
        np.add.at(input_vectors, centers, -lr * grad_v)
        return loss
    return loss, grad_v


def similarity(matrix: EmbeddingMatrix, a: str, b: str) -> float:
    """Cosine similarity between two tokens' input vectors (0 for zero rows)."""
    va = matrix.input_vectors[matrix.vocab.id_of(a)]
    vb = matrix.input_vectors[matrix.vocab.id_of(b)]
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(va @ vb / (na * nb))


def nearest(matrix: EmbeddingMatrix, chord: str, k: int) -> list[tuple[str, float]]:
    """k most-similar tokens by cosine, excluding the query token itself."""
    idx = matrix.vocab.id_of(chord)
    vectors = matrix.input_vectors
    norms = np.linalg.norm(vectors, axis=1)
    query = vectors[idx]
    qnorm = norms[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = vectors @ query / np.where(norms * qnorm == 0, np.inf, norms * qnorm)
    order = [i for i in np.argsort(-sims, kind="stable") if i != idx]
    return [(matrix.vocab.tokens[i], float(sims[i])) for i in order[:k]]


def save_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write the text format: '<count> <dim>' then token + 9-digit values."""
    vectors = matrix.input_vectors
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{vectors.shape[0]} {vectors.shape[1]}\n")
        for token, row in zip(matrix.vocab.tokens, vectors):
            fh.write(token + " " + " ".join(f"{x:.9g}" for x in row) + "\n")


def load_embeddings(path) -> EmbeddingMatrix:
    """Read the text format back into a query-ready EmbeddingMatrix.

    Only input vectors are stored; output vectors come back zeroed and the
    vocabulary carries no document frequencies.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(1, "header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError(1, "non-integer header") from exc
        tokens: list[str] = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise FormatError(lineno, f"expected {dim} values")
            tokens.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(tokens) != count:
        raise FormatError(1, f"header promised {count} rows, found {len(tokens)}")
    index = {t: i for i, t in enumerate(tokens)}
    if len(index) != len(tokens):
        raise FormatError(1, "duplicate tokens")
    vocab = Vocabulary(
        tokens=tokens,
        index=index,
        df={},
        unk_index=index.get("UNK", 0),
    )
    vectors = np.asarray(rows, dtype=np.float64).reshape(count, dim)
    return EmbeddingMatrix(vocab, vectors, np.zeros_like(vectors))
