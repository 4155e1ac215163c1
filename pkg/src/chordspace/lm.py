"""Next-chord LSTM language model.

A stacked LSTM trained by truncated backpropagation through time over a
boundary-joined token stream, with global gradient-norm clipping, plain SGD,
and learning-rate annealing on validation stalls. The encoder (embedding)
table can start from random values, pitch-slot encodings, or pre-trained
chord embeddings, and is always trainable.

Checkpoints are a single file: one JSON header line (config, token list,
vocabulary hash, tensor manifest) followed by raw little-endian float64
blobs, so identical models produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Optional, Sequence

import numpy as np

from . import chords as chord_core
from .corpus import Corpus, Vocabulary
from .embeddings import EmbeddingMatrix, EmptyCorpusError

BOUNDARY = "</s>"

INIT_MODES = ("NI", "PR", "CE_cbow", "CE_sglm")

CHECKPOINT_FORMAT = 1


class NonFiniteLossError(RuntimeError):
    """Raised when training produces a NaN or infinite loss."""


class VocabMismatchError(ValueError):
    """Raised when a checkpoint's vocabulary hash does not match."""


@dataclasses.dataclass(frozen=True)
class LMConfig:
    init: str = "NI"
    emb_dim: int = 200
    hidden_dim: Optional[int] = None
    layers: int = 2
    seq_len: int = 35
    batch: int = 20
    dropout: float = 0.2
    lr: float = 20.0
    clip: float = 0.25
    epochs: int = 40
    seed: int = 0
    valid_fraction: float = 0.1
    anneal: float = 4.0
    tie_weights: bool = False

    @property
    def hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else self.emb_dim


@dataclasses.dataclass
class LstmLayer:
    # Gate order along the last axis: input, forget, candidate, output.
    w_in: np.ndarray  # (d_in, 4h)
    w_rec: np.ndarray  # (h, 4h)
    bias: np.ndarray  # (4h,)


@dataclasses.dataclass
class LMModel:
    config: LMConfig
    tokens: list[str]
    index: dict[str, int]
    unk_index: int
    boundary_index: int
    encoder: np.ndarray
    layers: list[LstmLayer]
    dec_w: Optional[np.ndarray]  # None when tied to the encoder
    dec_b: np.ndarray
    history: list[dict] = dataclasses.field(default_factory=list)

    def decoder_weight(self) -> np.ndarray:
        return self.encoder.T if self.config.tie_weights else self.dec_w


def vocab_hash(tokens: Sequence[str]) -> str:
    return hashlib.sha256("\x00".join(tokens).encode("utf-8")).hexdigest()


def encoder_matrix(
    init: str,
    emb_dim: int,
    tokens: Sequence[str],
    embeddings: Optional[EmbeddingMatrix] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Embedding table for one of the four initialization schemes.

    NI draws uniform values; CE_* copies rows from a trained embedding matrix
    (tokens it lacks get random rows); PR writes each chord's five pitch
    slots, scaled by 1/12, into the leading dimensions over low noise.
    """
    if init not in INIT_MODES:
        raise ValueError(f"init must be one of {INIT_MODES}")
    if rng is None:
        rng = np.random.default_rng(0)
    n = len(tokens)
    encoder = rng.uniform(-0.1, 0.1, size=(n, emb_dim))
    if init == "NI":
        return encoder
    if init in ("CE_cbow", "CE_sglm"):
        if embeddings is None:
            raise ValueError(f"init {init} requires a trained embedding matrix")
        if embeddings.input_vectors.shape[1] != emb_dim:
            raise ValueError("embedding dim does not match emb_dim")
        for i, token in enumerate(tokens):
            j = embeddings.vocab.index.get(token)
            if j is not None:
                encoder[i] = embeddings.input_vectors[j]
        return encoder
    # PR: pitch slots over small noise; unparseable tokens keep zero slots.
    if emb_dim < 5:
        raise ValueError("PR init needs emb_dim >= 5")
    encoder = rng.uniform(-0.01, 0.01, size=(n, emb_dim))
    for i, token in enumerate(tokens):
        slots = (0, 0, 0, 0, 0)
        try:
            slots = chord_core.encode_pr(chord_core.parse_chord(token)).slots
        except chord_core.ParseError:
            pass
        encoder[i, :5] = np.asarray(slots, dtype=np.float64) / 12.0
    return encoder


def init_encoder(
    config: LMConfig,
    tokens: Sequence[str],
    embeddings: Optional[EmbeddingMatrix] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Build the model's encoder matrix for the configured initialization."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    return encoder_matrix(config.init, config.emb_dim, tokens, embeddings, rng)


def make_model(
    vocab: Vocabulary,
    config: LMConfig,
    embeddings: Optional[EmbeddingMatrix] = None,
) -> LMModel:
    """Assemble an untrained model over the vocabulary plus boundary token."""
    if config.tie_weights and config.hidden != config.emb_dim:
        raise ValueError("tied weights require hidden_dim == emb_dim")
    tokens = list(vocab.tokens) + [BOUNDARY]
    index = {t: i for i, t in enumerate(tokens)}
    rng = np.random.default_rng(config.seed)
    encoder = init_encoder(config, tokens, embeddings, rng)
    layers = []
    d_in = config.emb_dim
    h = config.hidden
    for _ in range(config.layers):
        layers.append(
            LstmLayer(
                w_in=rng.uniform(-0.1, 0.1, size=(d_in, 4 * h)),
                w_rec=rng.uniform(-0.1, 0.1, size=(h, 4 * h)),
                bias=np.zeros(4 * h),
            )
        )
        d_in = h
    dec_w = None if config.tie_weights else rng.uniform(-0.1, 0.1, size=(h, len(tokens)))
    dec_b = np.zeros(len(tokens))
    return LMModel(
        config=config,
        tokens=tokens,
        index=index,
        unk_index=index["UNK"] if "UNK" in index else 0,
        boundary_index=index[BOUNDARY],
        encoder=encoder,
        layers=layers,
        dec_w=dec_w,
        dec_b=dec_b,
    )


def _param_items(model: LMModel) -> list[tuple[str, np.ndarray]]:
    items = [("encoder", model.encoder)]
    for l, layer in enumerate(model.layers):
        items += [
            (f"layer{l}.w_in", layer.w_in),
            (f"layer{l}.w_rec", layer.w_rec),
            (f"layer{l}.bias", layer.bias),
        ]
    if not model.config.tie_weights:
        items.append(("dec_w", model.dec_w))
    items.append(("dec_b", model.dec_b))
    return items


def _zero_state(model: LMModel, batch: int) -> list[tuple[np.ndarray, np.ndarray]]:
    h = model.config.hidden
    return [(np.zeros((batch, h)), np.zeros((batch, h))) for _ in model.layers]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _forward(model, x, state, dropout_rng=None):
    """Run the stack over ids x (B, T). Returns (logits, new_state, cache).

    Dropout masks (inverted scaling) are applied on every non-recurrent
    connection when a dropout rng is supplied: encoder output, between
    layers, and before the decoder.
    """
    cfg = model.config
    batch, steps = x.shape
    h = cfg.hidden
    p = cfg.dropout
    layer_input = model.encoder[x]
    masks = []
    if dropout_rng is not None and p > 0:
        mask = (dropout_rng.random(layer_input.shape) >= p) / (1.0 - p)
        layer_input = layer_input * mask
        masks.append(mask)
    else:
        masks.append(None)
    layer_caches = []
    new_state = []
    for layer_idx, layer in enumerate(model.layers):
        h_prev, c_prev = state[layer_idx]
        gates_i = np.empty((batch, steps, h))
        gates_f = np.empty((batch, steps, h))
        gates_g = np.empty((batch, steps, h))
        gates_o = np.empty((batch, steps, h))
        cells = np.empty((batch, steps, h))
        tanh_c = np.empty((batch, steps, h))
        hs = np.empty((batch, steps, h))
        h_prevs = np.empty((batch, steps, h))
        c_prevs = np.empty((batch, steps, h))
        for t in range(steps):
            h_prevs[:, t] = h_prev
            c_prevs[:, t] = c_prev
            a = layer_input[:, t] @ layer.w_in + h_prev @ layer.w_rec + layer.bias
            ai, af, ag, ao = np.split(a, 4, axis=1)
            i_t = _sigmoid(ai)
            f_t = _sigmoid(af)
            g_t = np.tanh(ag)
            o_t = _sigmoid(ao)
            c_t = f_t * c_prev + i_t * g_t
            tc = np.tanh(c_t)
            h_t = o_t * tc
            gates_i[:, t], gates_f[:, t] = i_t, f_t
            gates_g[:, t], gates_o[:, t] = g_t, o_t
            cells[:, t], tanh_c[:, t], hs[:, t] = c_t, tc, h_t
            h_prev, c_prev = h_t, c_t
        new_state.append((h_prev, c_prev))
        layer_caches.append({
            "input": layer_input,
            "i": gates_i, "f": gates_f, "g": gates_g, "o": gates_o,
            "c": cells, "tanh_c": tanh_c, "h": hs,
            "h_prevs": h_prevs, "c_prevs": c_prevs,
        })
        layer_input = hs
        if dropout_rng is not None and p > 0:
            mask = (dropout_rng.random(layer_input.shape) >= p) / (1.0 - p)
            layer_input = layer_input * mask
            masks.append(mask)
        else:
            masks.append(None)
    logits = layer_input @ model.decoder_weight() + model.dec_b
    cache = {"x": x, "layers": layer_caches, "masks": masks, "top": layer_input}
    return logits, new_state, cache


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _loss_and_backward(model, x, y, state, dropout_rng=None):
    """Mean cross-entropy over the window plus gradients for every parameter.

    Returns (loss, grads dict keyed like _param_items, new detached state).
    """
    cfg = model.config
    logits, new_state, cache = _forward(model, x, state, dropout_rng)
    batch, steps = x.shape
    probs = _softmax(logits)
    count = batch * steps
    rows = np.arange(batch)[:, None], np.arange(steps)[None, :]
    loss = float(-np.log(probs[rows[0], rows[1], y]).sum() / count)

    dlogits = probs
    dlogits[rows[0], rows[1], y] -= 1.0
    dlogits /= count

    grads = {name: np.zeros_like(arr) for name, arr in _param_items(model)}
    top = cache["top"]
    dec_w = model.decoder_weight()
    flat_top = top.reshape(count, -1)
    flat_dlogits = dlogits.reshape(count, -1)
    dec_w_grad = flat_top.T @ flat_dlogits
    grads["dec_b"] += flat_dlogits.sum(axis=0)
    d_layer_out = (flat_dlogits @ dec_w.T).reshape(top.shape)
    if cfg.tie_weights:
        grads["encoder"] += dec_w_grad.T
    else:
        grads["dec_w"] += dec_w_grad

    for layer_idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[layer_idx]
        lc = cache["layers"][layer_idx]
        mask_above = cache["masks"][layer_idx + 1]
        dh_seq = d_layer_out * mask_above if mask_above is not None else d_layer_out.copy()
        d_input = np.zeros_like(lc["input"])
        dh_next = np.zeros((batch, cfg.hidden))
        dc_next = np.zeros((batch, cfg.hidden))
        w_in_grad = grads[f"layer{layer_idx}.w_in"]
        w_rec_grad = grads[f"layer{layer_idx}.w_rec"]
        bias_grad = grads[f"layer{layer_idx}.bias"]
        for t in range(x.shape[1] - 1, -1, -1):
            dh = dh_seq[:, t] + dh_next
            o_t, tc = lc["o"][:, t], lc["tanh_c"][:, t]
            i_t, f_t, g_t = lc["i"][:, t], lc["f"][:, t], lc["g"][:, t]
            do = dh * tc
            dc = dh * o_t * (1.0 - tc**2) + dc_next
            di = dc * g_t
            df = dc * lc["c_prevs"][:, t]
            dg = dc * i_t
            dc_next = dc * f_t
            da = np.concatenate(
                [
                    di * i_t * (1.0 - i_t),
                    df * f_t * (1.0 - f_t),
                    dg * (1.0 - g_t**2),
                    do * o_t * (1.0 - o_t),
                ],
                axis=1,
            )
            w_in_grad += lc["input"][:, t].T @ da
            w_rec_grad += lc["h_prevs"][:, t].T @ da
            bias_grad += da.sum(axis=0)
            d_input[:, t] = da @ layer.w_in.T
            dh_next = da @ layer.w_rec.T
        d_layer_out = d_input

    mask0 = cache["masks"][0]
    d_embed = d_layer_out * mask0 if mask0 is not None else d_layer_out
    flat_ids = cache["x"].reshape(-1)
    np.add.at(grads["encoder"], flat_ids, d_embed.reshape(count, -1))
    return loss, grads, new_state


def clip_gradients(grads: dict[str, np.ndarray], clip: float) -> float:
    """Scale all gradients in place so the global norm is at most clip.

    Returns the pre-clip global norm.
    """
    total = 0.0
    for g in grads.values():
        total += float((g**2).sum())
    norm = total**0.5
    if norm > clip > 0:
        scale = clip / norm
        for g in grads.values():
            g *= scale
    return norm


def lm_forward(model: LMModel, token_batch: np.ndarray) -> np.ndarray:
    """Inference logits of shape (batch, seq, |V|); no dropout, zero state."""
    x = np.asarray(token_batch, dtype=np.intp)
    if x.ndim != 2:
        raise ValueError("token_batch must be 2-dimensional (batch, seq)")
    logits, _, _ = _forward(model, x, _zero_state(model, x.shape[0]))
    return logits


def encode_stream(model_or_vocab, songs) -> np.ndarray:
    """Boundary-joined id stream: boundary, song, boundary, song, ..."""
    if isinstance(model_or_vocab, LMModel):
        index = model_or_vocab.index
        unk = model_or_vocab.unk_index
        boundary = model_or_vocab.boundary_index
    else:
        vocab = model_or_vocab
        index = dict(vocab.index)
        unk = vocab.unk_index
        boundary = len(vocab.tokens)
    ids = [boundary]
    for song in songs:
        ids.extend(index.get(t, unk) for t in song.chords)
        ids.append(boundary)
    return np.asarray(ids, dtype=np.intp)


def _stream_loss(model: LMModel, stream: np.ndarray) -> float:
    """Exact mean next-token loss over a full stream (batch of one)."""
    if len(stream) < 2:
        raise EmptyCorpusError("stream too short to evaluate")
    seq_len = model.config.seq_len
    state = _zero_state(model, 1)
    total, count = 0.0, 0
    for start in range(0, len(stream) - 1, seq_len):
        x = stream[start : start + seq_len][None, :]
        y = stream[start + 1 : start + 1 + x.shape[1]][None, :]
        if y.shape[1] < x.shape[1]:
            x = x[:, : y.shape[1]]
        if x.shape[1] == 0:
            break
        logits, state, _ = _forward(model, x, state)
        probs = _softmax(logits)
        total += float(-np.log(probs[0, np.arange(x.shape[1]), y[0]]).sum())
        count += x.shape[1]
    return total / count


def perplexity(model: LMModel, corpus: Corpus) -> tuple[float, float]:
    """Mean next-token cross-entropy and its exponential over the corpus."""
    stream = encode_stream(model, corpus.songs)
    loss = _stream_loss(model, stream)
    return loss, float(np.exp(loss))


def lm_train(
    corpus: Corpus,
    vocab: Vocabulary,
    config: LMConfig,
    embeddings: Optional[EmbeddingMatrix] = None,
) -> LMModel:
    """Train with truncated stateful BPTT and annealed, clipped SGD.

    A validation slice (config.valid_fraction of songs) is held out for the
    annealing rule: when validation loss fails to improve on its best, the
    learning rate is divided by config.anneal.
    """
    if len(corpus.songs) == 0:
        raise EmptyCorpusError("cannot train on an empty corpus")
    model = make_model(vocab, config, embeddings)
    songs = corpus.songs
    n_valid = int(len(songs) * config.valid_fraction)
    valid_songs = songs[len(songs) - n_valid :]
    train_songs = songs[: len(songs) - n_valid] or songs
    train_stream = encode_stream(model, train_songs)
    valid_stream = encode_stream(model, valid_songs) if valid_songs else None

    batch = min(config.batch, max(1, (len(train_stream) - 1) // 2))
    cols = len(train_stream) // batch
    if cols < 2:
        raise EmptyCorpusError("training stream shorter than one batch column")
    data = train_stream[: batch * cols].reshape(batch, cols)

    dropout_rng = np.random.default_rng(config.seed + 1) if config.dropout > 0 else None
    lr = config.lr
    best_valid = np.inf
    for epoch in range(config.epochs):
        state = _zero_state(model, batch)
        total, count = 0.0, 0
        for start in range(0, cols - 1, config.seq_len):
            stop = min(start + config.seq_len, cols - 1)
            x = data[:, start:stop]
            y = data[:, start + 1 : stop + 1]
            loss, grads, state = _loss_and_backward(model, x, y, state, dropout_rng)
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"epoch {epoch}, window at {start}: loss={loss!r}, lr={lr}"
                )
            clip_gradients(grads, config.clip)
            for name, param in _param_items(model):
                param -= lr * grads[name]
            total += loss * x.size
            count += x.size
        train_loss = total / max(count, 1)
        entry = {"epoch": epoch, "train_loss": train_loss, "lr": lr}
        if valid_stream is not None:
            valid_loss = _stream_loss(model, valid_stream)
            entry["valid_loss"] = valid_loss
            if valid_loss < best_valid:
                best_valid = valid_loss
            else:
                lr /= config.anneal
        model.history.append(entry)
    return model


def predict_next(
    model: LMModel, progression: Sequence[str], k: int
) -> list[tuple[str, float]]:
    """Top-k next-token distribution after consuming the progression.

    The progression is fed after a song-boundary token, mirroring how songs
    appear in the training stream.
    """
    if not progression:
        raise ValueError("progression must be non-empty")
    ids = [model.boundary_index] + [
        model.index.get(t, model.unk_index) for t in progression
    ]
    x = np.asarray(ids, dtype=np.intp)[None, :]
    logits, _, _ = _forward(model, x, _zero_state(model, 1))
    probs = _softmax(logits)[0, -1]
    order = np.argsort(-probs, kind="stable")[:k]
    return [(model.tokens[i], float(probs[i])) for i in order]


def save_model(model: LMModel, path) -> None:
    """Write the checkpoint: JSON header line, then raw float64 blobs."""
    items = _param_items(model)
    header = {
        "format": CHECKPOINT_FORMAT,
        "kind": "chordspace-lm",
        "config": dataclasses.asdict(model.config),
        "tokens": model.tokens,
        "vocab_sha256": vocab_hash(model.tokens),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in items],
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for _, arr in items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path, expected_tokens: Optional[Sequence[str]] = None) -> LMModel:
    """Read a checkpoint; refuses on vocabulary-hash mismatch."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("kind") != "chordspace-lm" or header.get("format") != CHECKPOINT_FORMAT:
            raise VocabMismatchError("not a chordspace-lm checkpoint")
        tokens = header["tokens"]
        stored_hash = header["vocab_sha256"]
        if vocab_hash(tokens) != stored_hash:
            raise VocabMismatchError("checkpoint token list does not match its hash")
        if expected_tokens is not None and vocab_hash(expected_tokens) != stored_hash:
            raise VocabMismatchError("checkpoint was trained on a different vocabulary")
        config = LMConfig(**{
            k: (tuple(v) if isinstance(v, list) else v)
            for k, v in header["config"].items()
        })
        arrays = {}
        for spec in header["tensors"]:
            size = int(np.prod(spec["shape"])) if spec["shape"] else 1
            blob = fh.read(size * 8)
            if len(blob) != size * 8:
                raise VocabMismatchError("checkpoint truncated")
            arrays[spec["name"]] = np.frombuffer(blob, dtype="<f8").reshape(spec["shape"]).copy()
    index = {t: i for i, t in enumerate(tokens)}
    layers = []
    for l in range(config.layers):
        layers.append(
            LstmLayer(
                w_in=arrays[f"layer{l}.w_in"],
                w_rec=arrays[f"layer{l}.w_rec"],
                bias=arrays[f"layer{l}.bias"],
            )
        )
    return LMModel(
        config=config,
        tokens=tokens,
        index=index,
        unk_index=index.get("UNK", 0),
        boundary_index=index[BOUNDARY],
        encoder=arrays["encoder"],
        layers=layers,
        dec_w=None if config.tie_weights else arrays["dec_w"],
        dec_b=arrays["dec_b"],
    )
