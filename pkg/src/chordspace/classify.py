"""Binary artist-attribute classifiers over chord representations.

Two model families: logistic regression over per-song aggregate vectors, and
a convolutional sequence classifier (parallel filter widths, max-over-time
pooling, dropout, softmax) over the chord progression itself. Both plug into
a stratified k-fold harness that fits every data-dependent statistic
(vocabulary, idf, embeddings) on the training folds only, plus a paired
t-test for comparing fold-accuracy vectors.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as _stats

from .corpus import Corpus, Song, Vocabulary, balance_classes, build_vocab
from .embeddings import EmbeddingConfig, EmbeddingMatrix, train_embeddings
from .features import _tokens, boc_count, boc_tfidf, ce_maxpool, compute_idf, pr_aggregate
from .lm import INIT_MODES, NonFiniteLossError, encoder_matrix

LR_SCHEMES = ("boc_count", "boc_tfidf", "pr_agg", "ce_maxpool")


# ---------------------------------------------------------------------------
# Logistic regression


@dataclasses.dataclass
class LRModel:
    weights: np.ndarray
    bias: float
    l2_lambda: float


def _sigmoid(scores):
    """Overflow-safe logistic function (exp only ever sees non-positives)."""
    out = np.empty_like(scores, dtype=np.float64)
    pos = scores >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-scores[pos]))
    exp_s = np.exp(scores[~pos])
    out[~pos] = exp_s / (1.0 + exp_s)
    return out


def _lr_loss_and_grad(weights, bias, features, labels, l2_lambda):
    """Mean negative log-likelihood with an L2 penalty on the weights only."""
    scores = features @ weights + bias
    loss = float(np.mean(np.logaddexp(0.0, scores) - labels * scores))
    loss += 0.5 * l2_lambda * float(weights @ weights)
    residual = _sigmoid(scores) - labels
    grad_w = features.T @ residual / len(labels) + l2_lambda * weights
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def train_lr(features, labels, l2_lambda: float = 1e-3, seed: int = 0,
             tol: float = 1e-6, max_iter: int = 10000) -> LRModel:
    """Full-batch gradient descent with backtracking line search.

    Runs until the gradient norm drops below tol or the iteration cap. The
    objective is convex and started from zero, so the seed does not affect
    the result; it is accepted for interface symmetry with the CNN trainer.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(labels):
        raise ValueError("features must be (n, d) with one label per row")
    if not set(np.unique(labels)) <= {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    weights = np.zeros(features.shape[1])
    bias = 0.0
    loss, grad_w, grad_b = _lr_loss_and_grad(weights, bias, features, labels, l2_lambda)
    for _ in range(max_iter):
        grad_sq = float(grad_w @ grad_w) + grad_b * grad_b
        if math.sqrt(grad_sq) < tol:
            break
        step = 1.0
        while step > 1e-20:
            new_w = weights - step * grad_w
            new_b = bias - step * grad_b
            new_loss, new_gw, new_gb = _lr_loss_and_grad(
                new_w, new_b, features, labels, l2_lambda
            )
            if new_loss <= loss - 1e-4 * step * grad_sq:
                weights, bias = new_w, new_b
                loss, grad_w, grad_b = new_loss, new_gw, new_gb
                break
            step *= 0.5
        else:
            break
    return LRModel(weights=weights, bias=float(bias), l2_lambda=l2_lambda)


def lr_probabilities(model: LRModel, features) -> np.ndarray:
    scores = np.asarray(features, dtype=np.float64) @ model.weights + model.bias
    return _sigmoid(scores)


def lr_predict(model: LRModel, features) -> np.ndarray:
    return (lr_probabilities(model, features) >= 0.5).astype(np.intp)


# ---------------------------------------------------------------------------
# Convolutional sequence classifier


@dataclasses.dataclass(frozen=True)
class CnnConfig:
    init: str = "NI"
    emb_dim: int = 50
    filter_widths: tuple[int, ...] = (3, 4, 5)
    maps_per_width: int = 30
    dropout: float = 0.5
    seq_limit: int = 60
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch: int = 32
    valid_fraction: float = 0.1
    seed: int = 0


@dataclasses.dataclass
class CnnModel:
    config: CnnConfig
    tokens: list[str]
    index: dict[str, int]
    unk_index: int
    pad_index: int
    embeddings: np.ndarray  # (|V|+1, d); the final row is the frozen pad row
    conv_w: dict[int, np.ndarray]  # width -> (width*d, maps)
    conv_b: dict[int, np.ndarray]
    dense_w: np.ndarray  # (len(widths)*maps, 2)
    dense_b: np.ndarray
    history: list[dict] = dataclasses.field(default_factory=list)


def _cnn_params(model: CnnModel) -> list[tuple[str, np.ndarray]]:
    items = [("embeddings", model.embeddings)]
    for w in model.config.filter_widths:
        items += [(f"conv{w}.w", model.conv_w[w]), (f"conv{w}.b", model.conv_b[w])]
    items += [("dense_w", model.dense_w), ("dense_b", model.dense_b)]
    return items


def make_cnn(vocab: Vocabulary, config: CnnConfig,
             embeddings: Optional[EmbeddingMatrix] = None) -> CnnModel:
    if min(config.filter_widths) < 1 or config.seq_limit < max(config.filter_widths):
        raise ValueError("filter widths must fit inside seq_limit")
    rng = np.random.default_rng(config.seed)
    tokens = list(vocab.tokens)
    table = encoder_matrix(config.init, config.emb_dim, tokens, embeddings, rng)
    table = np.vstack([table, np.zeros((1, config.emb_dim))])
    conv_w = {}
    conv_b = {}
    for w in config.filter_widths:
        conv_w[w] = rng.uniform(-0.1, 0.1, size=(w * config.emb_dim, config.maps_per_width))
        conv_b[w] = np.zeros(config.maps_per_width)
    n_pooled = len(config.filter_widths) * config.maps_per_width
    return CnnModel(
        config=config,
        tokens=tokens,
        index={t: i for i, t in enumerate(tokens)},
        unk_index=vocab.unk_index,
        pad_index=len(tokens),
        embeddings=table,
        conv_w=conv_w,
        conv_b=conv_b,
        dense_w=rng.uniform(-0.1, 0.1, size=(n_pooled, 2)),
        dense_b=np.zeros(2),
    )


def encode_sequences(model: CnnModel, sequences) -> tuple[np.ndarray, np.ndarray]:
    """Id matrix (n, seq_limit) padded/truncated, plus true lengths."""
    limit = model.config.seq_limit
    ids = np.full((len(sequences), limit), model.pad_index, dtype=np.intp)
    lengths = np.empty(len(sequences), dtype=np.intp)
    for row, item in enumerate(sequences):
        tokens = _tokens(item)[:limit]
        lengths[row] = max(len(tokens), 1)
        for col, token in enumerate(tokens):
            ids[row, col] = model.index.get(token, model.unk_index)
    return ids, lengths


def _windows(emb: np.ndarray, width: int) -> np.ndarray:
    """(n, n_win, width*d) view of consecutive-position slices."""
    n, limit, dim = emb.shape
    n_win = limit - width + 1
    out = np.empty((n, n_win, width * dim))
    for offset in range(width):
        out[:, :, offset * dim : (offset + 1) * dim] = emb[:, offset : offset + n_win, :]
    return out


def _cnn_forward(model, ids, lengths, dropout_rng=None):
    cfg = model.config
    emb = model.embeddings[ids]
    pooled_parts = []
    cache = {"ids": ids, "emb": emb, "per_width": {}}
    for w in cfg.filter_widths:
        windows = _windows(emb, w)
        pre = windows @ model.conv_w[w] + model.conv_b[w]
        act = np.maximum(pre, 0.0)
        # Windows past the last real token are padding-only; never pool them.
        n_valid = np.maximum(lengths - w + 1, 1)
        invalid = np.arange(act.shape[1])[None, :] >= n_valid[:, None]
        act_masked = np.where(invalid[:, :, None], -np.inf, act)
        argmax = act_masked.argmax(axis=1)
        pooled = np.take_along_axis(act_masked, argmax[:, None, :], axis=1)[:, 0, :]
        pooled_parts.append(pooled)
        cache["per_width"][w] = {"windows": windows, "pre": pre, "argmax": argmax}
    pooled = np.concatenate(pooled_parts, axis=1)
    if dropout_rng is not None and cfg.dropout > 0:
        mask = (dropout_rng.random(pooled.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        pooled = pooled * mask
        cache["mask"] = mask
    else:
        cache["mask"] = None
    cache["pooled"] = pooled
    logits = pooled @ model.dense_w + model.dense_b
    return logits, cache


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _cnn_loss_and_grads(model, ids, lengths, labels, dropout_rng=None):
    cfg = model.config
    logits, cache = _cnn_forward(model, ids, lengths, dropout_rng)
    probs = _softmax(logits)
    n = len(labels)
    loss = float(-np.log(probs[np.arange(n), labels]).mean())
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads = {name: np.zeros_like(arr) for name, arr in _cnn_params(model)}
    grads["dense_w"] += cache["pooled"].T @ dlogits
    grads["dense_b"] += dlogits.sum(axis=0)
    d_pooled = dlogits @ model.dense_w.T
    if cache["mask"] is not None:
        d_pooled = d_pooled * cache["mask"]

    d_emb = np.zeros_like(cache["emb"])
    maps = cfg.maps_per_width
    for k, w in enumerate(cfg.filter_widths):
        wc = cache["per_width"][w]
        d_pool_w = d_pooled[:, k * maps : (k + 1) * maps]
        d_act = np.zeros_like(wc["pre"])
        np.put_along_axis(d_act, wc["argmax"][:, None, :], d_pool_w[:, None, :], axis=1)
        d_pre = d_act * (wc["pre"] > 0)
        flat_win = wc["windows"].reshape(-1, wc["windows"].shape[2])
        flat_dpre = d_pre.reshape(-1, maps)
        grads[f"conv{w}.w"] += flat_win.T @ flat_dpre
        grads[f"conv{w}.b"] += flat_dpre.sum(axis=0)
        d_windows = (flat_dpre @ model.conv_w[w].T).reshape(wc["windows"].shape)
        n_win = d_windows.shape[1]
        dim = cfg.emb_dim
        for offset in range(w):
            d_emb[:, offset : offset + n_win, :] += d_windows[
                :, :, offset * dim : (offset + 1) * dim
            ]
    flat_ids = ids.reshape(-1)
    np.add.at(grads["embeddings"], flat_ids, d_emb.reshape(-1, cfg.emb_dim))
    grads["embeddings"][model.pad_index, :] = 0.0  # pad row stays zero
    return loss, grads


class _Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(arr) for name, arr in params}
        self.v = {name: np.zeros_like(arr) for name, arr in params}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        scale = math.sqrt(1.0 - self.beta2**self.t) / (1.0 - self.beta1**self.t)
        for name, arr in params:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            arr -= self.lr * scale * self.m[name] / (np.sqrt(self.v[name]) + self.eps)


def train_cnn(sequences, labels, config: CnnConfig, vocab: Vocabulary,
              embeddings: Optional[EmbeddingMatrix] = None) -> CnnModel:
    """Minibatch Adam training with a best-validation-epoch checkpoint.

    A seeded slice of the data is held out; after every epoch the validation
    loss and accuracy are recorded and the parameters of the lowest-loss
    epoch (earliest on ties) are restored at the end.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if len(sequences) != len(labels):
        raise ValueError("one label per sequence required")
    if len(sequences) < 2:
        raise ValueError("need at least two sequences")
    model = make_cnn(vocab, config, embeddings)
    ids, lengths = encode_sequences(model, sequences)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(labels))
    n_valid = max(1, int(round(config.valid_fraction * len(labels))))
    if n_valid >= len(labels):
        n_valid = len(labels) - 1
    valid_idx, train_idx = order[:n_valid], order[n_valid:]
    optimizer = _Adam(_cnn_params(model), config.lr, config.beta1, config.beta2, config.eps)
    best = (math.inf, None)
    for epoch in range(config.epochs):
        rng.shuffle(train_idx)
        total, count = 0.0, 0
        for start in range(0, len(train_idx), config.batch):
            batch = train_idx[start : start + config.batch]
            loss, grads = _cnn_loss_and_grads(
                model, ids[batch], lengths[batch], labels[batch], rng
            )
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"epoch {epoch}: loss={loss!r}")
            optimizer.step(_cnn_params(model), grads)
            total += loss * len(batch)
            count += len(batch)
        # Checkpoint on validation loss: at this data scale per-epoch accuracy
        # on the held-out slice is too coarse to rank epochs reliably.
        val_logits, _ = _cnn_forward(model, ids[valid_idx], lengths[valid_idx])
        val_probs = _softmax(val_logits)
        val_loss = float(-np.log(val_probs[np.arange(n_valid), labels[valid_idx]]).mean())
        val_acc = float(np.mean(val_logits.argmax(axis=1) == labels[valid_idx]))
        model.history.append({
            "epoch": epoch,
            "train_loss": total / max(count, 1),
            "valid_loss": val_loss,
            "valid_accuracy": val_acc,
        })
        if val_loss < best[0]:
            best = (val_loss, [(n, a.copy()) for n, a in _cnn_params(model)])
    if best[1] is not None:
        for (_, arr), (_, saved) in zip(_cnn_params(model), best[1]):
            arr[...] = saved
    return model


def cnn_probabilities(model: CnnModel, sequences) -> np.ndarray:
    ids, lengths = encode_sequences(model, sequences)
    logits, _ = _cnn_forward(model, ids, lengths)
    return _softmax(logits)


def cnn_predict(model: CnnModel, sequences) -> np.ndarray:
    return cnn_probabilities(model, sequences).argmax(axis=1)


# ---------------------------------------------------------------------------
# Cross-validation and significance


@dataclasses.dataclass
class CvResult:
    model_id: str
    per_fold_accuracy: list[float]
    mean: float


@dataclasses.dataclass
class TTestResult:
    t: float
    p: float
    zero_variance: bool = False

    def __iter__(self):
        return iter((self.t, self.p))


def stratified_folds(labels, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Disjoint, exhaustive folds with per-class counts within one sample."""
    labels = np.asarray(labels)
    if folds < 2 or folds > len(labels):
        raise ValueError("folds must be between 2 and the number of samples")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(folds)]
    for value in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == value)
        rng.shuffle(members)
        for i, idx in enumerate(members):
            buckets[i % folds].append(int(idx))
    return [np.array(sorted(b), dtype=np.intp) for b in buckets]


def cross_validate(items, labels, trainer: Callable, folds: int = 10,
                   seed: int = 0, model_id: str = "model") -> CvResult:
    """Stratified k-fold accuracy for a trainer factory.

    trainer(train_items, train_labels) must return a predict function
    mapping a list of items to 0/1 labels, fitting any derived statistics
    (vocabulary, idf, embeddings) on the training data alone.
    """
    labels = np.asarray(labels, dtype=np.intp)
    accuracies = []
    for fold in stratified_folds(labels, folds, seed):
        mask = np.ones(len(labels), dtype=bool)
        mask[fold] = False
        train_items = [items[i] for i in np.flatnonzero(mask)]
        predict = trainer(train_items, labels[mask])
        predicted = np.asarray(predict([items[i] for i in fold]))
        accuracies.append(float(np.mean(predicted == labels[fold])))
    return CvResult(
        model_id=model_id,
        per_fold_accuracy=accuracies,
        mean=float(np.mean(accuracies)),
    )


def paired_t_test(a: CvResult, b: CvResult) -> TTestResult:
    """Two-sided paired t over per-fold accuracy differences (df = k-1)."""
    xs = np.asarray(a.per_fold_accuracy, dtype=np.float64)
    ys = np.asarray(b.per_fold_accuracy, dtype=np.float64)
    if xs.shape != ys.shape or len(xs) < 2:
        raise ValueError("need equal-length fold vectors of at least 2 folds")
    diff = xs - ys
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if float(diff.mean()) == 0.0:
            return TTestResult(t=0.0, p=1.0, zero_variance=True)
        t = math.copysign(math.inf, float(diff.mean()))
        return TTestResult(t=t, p=0.0, zero_variance=True)
    t = float(diff.mean()) / (sd / math.sqrt(len(diff)))
    p = 2.0 * float(_stats.t.sf(abs(t), len(diff) - 1))
    return TTestResult(t=t, p=p)


# ---------------------------------------------------------------------------
# Study harness


@dataclasses.dataclass
class StudyRow:
    family: str  # "LR" or "CNN"
    name: str
    marker: str
    cv: CvResult
    beats: tuple[str, ...]  # markers of same-family models this one beats


@dataclasses.dataclass
class StudyReport:
    attribute: str
    class_values: tuple[str, str]
    n_songs: int
    folds: int
    rows: list[StudyRow]


def lr_trainer(scheme: str, l2_lambda: float = 1e-3, seed: int = 0,
               emb_config: Optional[EmbeddingConfig] = None) -> Callable:
    """Trainer factory for one aggregate-vector representation."""
    if scheme not in LR_SCHEMES:
        raise ValueError(f"scheme must be one of {LR_SCHEMES}")

    def build(train_songs, train_labels):
        corpus = Corpus(songs=list(train_songs), provenance="cv fold")
        vocab = build_vocab(corpus)
        if scheme == "boc_count":
            featurize = lambda song: boc_count(song, vocab).values
        elif scheme == "boc_tfidf":
            idf = compute_idf(corpus, vocab)
            featurize = lambda song: boc_tfidf(song, vocab, idf).values
        elif scheme == "pr_agg":
            featurize = lambda song: pr_aggregate(song).values
        else:
            matrix = train_embeddings(corpus, vocab, emb_config or EmbeddingConfig())
            featurize = lambda song: ce_maxpool(song, matrix).values
        model = train_lr(
            np.array([featurize(s) for s in train_songs]), train_labels,
            l2_lambda=l2_lambda, seed=seed,
        )
        return lambda songs: lr_predict(model, np.array([featurize(s) for s in songs]))

    return build


def cnn_trainer(config: CnnConfig,
                emb_config: Optional[EmbeddingConfig] = None) -> Callable:
    """Trainer factory for the sequence classifier; CE inits fit their
    embeddings on the training fold."""

    def build(train_songs, train_labels):
        corpus = Corpus(songs=list(train_songs), provenance="cv fold")
        vocab = build_vocab(corpus)
        matrix = None
        if config.init in ("CE_cbow", "CE_sglm"):
            base = emb_config or EmbeddingConfig()
            mode = "cbow" if config.init == "CE_cbow" else "skipgram"
            base = dataclasses.replace(base, mode=mode, dim=config.emb_dim)
            matrix = train_embeddings(corpus, vocab, base)
        model = train_cnn(train_songs, train_labels, config, vocab, matrix)
        return lambda songs: cnn_predict(model, songs)

    return build


def run_attribute_study(
    corpus: Corpus,
    attribute: str,
    representations: Sequence[str] = LR_SCHEMES,
    models: Sequence[str] = INIT_MODES,
    l2_lambda: float = 1e-3,
    cnn_config: Optional[CnnConfig] = None,
    emb_config: Optional[EmbeddingConfig] = None,
    folds: int = 10,
    seed: int = 0,
) -> StudyReport:
    """Balanced cross-validated comparison of every requested model.

    Significance markers follow the pairwise scheme within each family: a
    row "beats" a same-family peer when its mean accuracy is higher and the
    paired t-test over fold accuracies has p < 0.05.
    """
    balanced = balance_classes(corpus, attribute, seed=seed)
    values = tuple(sorted({song.labels[attribute] for song in balanced.songs}))
    if len(values) != 2:
        raise ValueError(f"attribute {attribute!r} must have exactly two values")
    songs = balanced.songs
    labels = np.array([values.index(song.labels[attribute]) for song in songs])

    entries: list[tuple[str, str, CvResult]] = []
    for scheme in representations:
        trainer = lr_trainer(scheme, l2_lambda=l2_lambda, seed=seed, emb_config=emb_config)
        cv = cross_validate(songs, labels, trainer, folds, seed, model_id=f"LR {scheme}")
        entries.append(("LR", scheme, cv))
    for init in models:
        config = dataclasses.replace(cnn_config or CnnConfig(), init=init, seed=seed)
        trainer = cnn_trainer(config, emb_config=emb_config)
        cv = cross_validate(songs, labels, trainer, folds, seed, model_id=f"CNN {init}")
        entries.append(("CNN", init, cv))

    markers = "abcdefghijklmnopqrstuvwxyz"
    rows = []
    for i, (family, name, cv) in enumerate(entries):
        beats = []
        for j, (other_family, _, other_cv) in enumerate(entries):
            if j == i or other_family != family:
                continue
            result = paired_t_test(cv, other_cv)
            if cv.mean > other_cv.mean and result.p < 0.05:
                beats.append(markers[j])
        rows.append(StudyRow(
            family=family, name=name, marker=markers[i], cv=cv, beats=tuple(beats),
        ))
    return StudyReport(
        attribute=attribute,
        class_values=values,
        n_songs=len(songs),
        folds=folds,
        rows=rows,
    )
