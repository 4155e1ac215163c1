"""Embedding kernel gradients, training behavior, queries, and file format."""

import math

import numpy as np
import pytest

from chordspace.corpus import (
    Corpus,
    FormatError,
    Song,
    Vocabulary,
    build_vocab,
    generate_synthetic_corpus,
)
from chordspace.embeddings import (
    DimZeroError,
    EmbeddingConfig,
    EmbeddingMatrix,
    EmptyCorpusError,
    _song_pairs,
    cbow_loss_and_grad,
    load_embeddings,
    nearest,
    ns_loss_and_grad,
    save_embeddings,
    similarity,
    train_embeddings,
)
from gradcheck import numeric_partial, assert_entry_close


def make_vocab(tokens):
    if "UNK" not in tokens:
        tokens = list(tokens) + ["UNK"]
    index = {t: i for i, t in enumerate(tokens)}
    return Vocabulary(list(tokens), index, {t: 1 for t in tokens}, index["UNK"])


def make_matrix(tokens, vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    vocab = Vocabulary(
        list(tokens),
        {t: i for i, t in enumerate(tokens)},
        {},
        tokens.index("UNK") if "UNK" in tokens else 0,
    )
    return EmbeddingMatrix(vocab, vectors, np.zeros_like(vectors))


class TestNsKernel:
    def test_zero_scores_loss(self):
        inp = np.ones((3, 4))
        out = np.zeros((3, 4))
        loss, _, _ = ns_loss_and_grad(0, 1, [2, 2, 1], inp, out)
        assert loss == pytest.approx(4 * math.log(2), abs=1e-12)

    def test_zero_negatives_loss(self):
        rng = np.random.default_rng(0)
        inp = rng.normal(size=(3, 4))
        out = rng.normal(size=(3, 4))
        loss, _, _ = ns_loss_and_grad(0, 1, [], inp, out)
        score = float(inp[0] @ out[1])
        assert loss == pytest.approx(-math.log(1 / (1 + math.exp(-score))), rel=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            size, dim = 6, 4
            inp = rng.normal(scale=0.8, size=(size, dim))
            out = rng.normal(scale=0.8, size=(size, dim))
            center = int(rng.integers(size))
            context = int(rng.integers(size))
            negatives = [int(x) for x in rng.integers(size, size=int(rng.integers(0, 4)))]

            loss, grad_v, grad_out = ns_loss_and_grad(center, context, negatives, inp, out)

            def loss_fn():
                return ns_loss_and_grad(center, context, negatives, inp, out)[0]

            for d in range(dim):
                numeric = numeric_partial(loss_fn, inp, (center, d))
                assert_entry_close(grad_v[d], numeric, label=f"t{trial} in")
            for row, grad in grad_out.items():
                for d in range(dim):
                    numeric = numeric_partial(loss_fn, out, (row, d))
                    assert_entry_close(grad[d], numeric, label=f"t{trial} out{row}")

    def test_loss_is_finite_and_positive(self):
        rng = np.random.default_rng(1)
        inp = rng.normal(size=(5, 3))
        out = rng.normal(size=(5, 3))
        loss, _, _ = ns_loss_and_grad(2, 3, [0, 1, 4], inp, out)
        assert np.isfinite(loss) and loss > 0


class TestCbowKernel:
    def test_identical_context_reduces_to_skipgram(self):
        rng = np.random.default_rng(3)
        inp = rng.normal(size=(5, 4))
        out = rng.normal(size=(5, 4))
        negatives = [0, 4]
        sg_loss, sg_grad_v, sg_grad_out = ns_loss_and_grad(2, 1, negatives, inp, out)
        for m in (1, 3):
            loss, grad_in, grad_out = cbow_loss_and_grad([2] * m, 1, negatives, inp, out)
            assert loss == pytest.approx(sg_loss, rel=1e-12)
            np.testing.assert_allclose(grad_in[2], sg_grad_v, rtol=1e-12)
            for row in sg_grad_out:
                np.testing.assert_allclose(grad_out[row], sg_grad_out[row], rtol=1e-12)

    def test_empty_context_rejected(self):
        inp = np.zeros((2, 2))
        with pytest.raises(ValueError):
            cbow_loss_and_grad([], 0, [1], inp, inp.copy())

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for trial in range(100):
            size, dim = 6, 4
            inp = rng.normal(scale=0.8, size=(size, dim))
            out = rng.normal(scale=0.8, size=(size, dim))
            context = [int(x) for x in rng.integers(size, size=int(rng.integers(1, 5)))]
            target = int(rng.integers(size))
            negatives = [int(x) for x in rng.integers(size, size=2)]

            loss, grad_in, grad_out = cbow_loss_and_grad(context, target, negatives, inp, out)

            def loss_fn():
                return cbow_loss_and_grad(context, target, negatives, inp, out)[0]

            for row, grad in grad_in.items():
                for d in range(dim):
                    numeric = numeric_partial(loss_fn, inp, (row, d))
                    assert_entry_close(grad[d], numeric, label=f"t{trial} in{row}")
            for row, grad in grad_out.items():
                for d in range(dim):
                    numeric = numeric_partial(loss_fn, out, (row, d))
                    assert_entry_close(grad[d], numeric, label=f"t{trial} out{row}")


class TestSongPairs:
    def test_matches_brute_force_enumeration(self):
        from collections import Counter

        rng = np.random.default_rng(11)
        for _ in range(50):
            length = int(rng.integers(1, 12))
            window = int(rng.integers(1, 5))
            ids = rng.integers(0, 9, size=length)
            bounds = rng.integers(1, window + 1, size=length)
            centers, contexts = _song_pairs(ids, bounds, window)
            got = Counter(zip(centers.tolist(), contexts.tolist()))
            want = Counter()
            for t in range(length):
                for j in range(max(0, t - bounds[t]), min(length, t + bounds[t] + 1)):
                    if j != t:
                        want[(int(ids[t]), int(ids[j]))] += 1
            assert got == want


class TestTraining:
    def bigram_corpus(self):
        songs = [Song(f"s{i}", ("C", "G")) for i in range(1000)]
        return Corpus(songs, "bigram")

    def test_repeated_bigram_binds_center_to_context(self):
        corpus = self.bigram_corpus()
        vocab = build_vocab(corpus, df_threshold=0.0)
        config = EmbeddingConfig(mode="skipgram", window=2, dim=8, negatives=3,
                                 epochs=3, seed=5)
        m = train_embeddings(corpus, vocab, config)
        c_in = m.input_vectors[vocab.index["C"]]
        g_out = m.output_vectors[vocab.index["G"]]

        def cos(a, b):
            return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

        for token in vocab.tokens:
            if token == "G":
                continue
            row = m.output_vectors[vocab.index[token]]
            if np.linalg.norm(row) == 0:
                continue
            assert cos(c_in, g_out) > cos(c_in, row)

    def test_same_seed_is_byte_identical(self):
        corpus = generate_synthetic_corpus(9, 80)
        vocab = build_vocab(corpus, df_threshold=0.0)
        config = EmbeddingConfig(mode="cbow", window=3, dim=12, negatives=2, epochs=2, seed=21)
        a = train_embeddings(corpus, vocab, config)
        b = train_embeddings(corpus, vocab, config)
        assert a.input_vectors.tobytes() == b.input_vectors.tobytes()
        assert a.output_vectors.tobytes() == b.output_vectors.tobytes()

    @pytest.mark.parametrize("mode", ["cbow", "skipgram"])
    def test_epoch_loss_non_increasing(self, mode):
        corpus = generate_synthetic_corpus(13, 200)
        vocab = build_vocab(corpus, df_threshold=0.0)
        config = EmbeddingConfig(mode=mode, window=3, dim=16, negatives=3, epochs=3, seed=2)
        m = train_embeddings(corpus, vocab, config)
        assert len(m.epoch_losses) == 3
        for earlier, later in zip(m.epoch_losses, m.epoch_losses[1:]):
            assert later <= earlier * 1.01

    def test_matrix_shape_and_finiteness(self):
        corpus = generate_synthetic_corpus(4, 50)
        vocab = build_vocab(corpus, df_threshold=0.0)
        m = train_embeddings(corpus, vocab, EmbeddingConfig(dim=10, epochs=1, window=2))
        assert m.input_vectors.shape == (len(vocab), 10)
        assert m.output_vectors.shape == (len(vocab), 10)
        assert np.isfinite(m.input_vectors).all()

    def test_subsampling_smoke(self):
        corpus = generate_synthetic_corpus(4, 60)
        vocab = build_vocab(corpus, df_threshold=0.0)
        config = EmbeddingConfig(dim=8, epochs=2, window=2, subsample_threshold=0.05, seed=3)
        a = train_embeddings(corpus, vocab, config)
        b = train_embeddings(corpus, vocab, config)
        assert a.input_vectors.tobytes() == b.input_vectors.tobytes()

    def test_error_conditions(self):
        corpus = generate_synthetic_corpus(1, 10)
        vocab = build_vocab(corpus, df_threshold=0.0)
        with pytest.raises(EmptyCorpusError):
            train_embeddings(Corpus([]), vocab, EmbeddingConfig(dim=4))
        with pytest.raises(DimZeroError):
            train_embeddings(corpus, vocab, EmbeddingConfig(dim=0))
        with pytest.raises(ValueError):
            train_embeddings(corpus, vocab, EmbeddingConfig(dim=4, mode="glove"))
        with pytest.raises(ValueError):
            train_embeddings(corpus, vocab, EmbeddingConfig(dim=4, negatives=0))


class TestQueries:
    def test_similarity_basics(self):
        m = make_matrix(["C", "G", "UNK"], [[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
        assert similarity(m, "C", "C") == pytest.approx(1.0)
        assert similarity(m, "C", "G") == pytest.approx(0.0)
        assert similarity(m, "C", "UNK") == pytest.approx(similarity(m, "UNK", "C"))

    def test_nearest_excludes_query(self):
        m = make_matrix(["C", "G", "D", "UNK"],
                        [[1, 0], [0.9, 0.1], [-1, 0], [0.5, 0.5]])
        top = nearest(m, "C", 1)
        assert top[0][0] == "G"
        everything = nearest(m, "C", 10)
        assert len(everything) == 3
        assert [t for t, _ in everything] == ["G", "UNK", "D"]

    def test_duplicate_vector_has_cosine_one(self):
        m = make_matrix(["C", "G", "UNK"], [[1, 2], [1, 2], [0, 1]])
        assert nearest(m, "C", 1)[0] == ("G", pytest.approx(1.0))


class TestSaveLoad:
    def test_round_trip_lossless(self, tmp_path):
        corpus = generate_synthetic_corpus(6, 40)
        vocab = build_vocab(corpus, df_threshold=0.0)
        m = train_embeddings(corpus, vocab, EmbeddingConfig(dim=6, epochs=1, window=2))
        path = tmp_path / "emb.txt"
        save_embeddings(m, path)
        loaded = load_embeddings(path)
        assert loaded.vocab.tokens == m.vocab.tokens
        # Values survive the 9-significant-digit format to within print precision.
        np.testing.assert_allclose(loaded.input_vectors, m.input_vectors, rtol=1e-8)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        m = make_matrix(["C", "G", "UNK"],
                        np.random.default_rng(0).normal(size=(3, 5)))
        first = tmp_path / "a.txt"
        second = tmp_path / "b.txt"
        save_embeddings(m, first)
        save_embeddings(load_embeddings(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_missing_file_raises_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_embeddings(tmp_path / "absent.txt")

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3 2\nC 1 2\nG 3 4\n")
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_wrong_width_row_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 3\nC 1 2\n")
        with pytest.raises(FormatError):
            load_embeddings(path)
