"""Tokenization, TSV input and raw embedding providers."""

from dataclasses import replace

import numpy as np
import pytest

from collective_kd.codec import token_seed, write_embedding_file
from collective_kd.embeddings import (
    RawEmbeddingStore, build_corpus, encode_raw, export_embeddings, get_provider, read_tsv, tokenize,
)
from collective_kd.errors import DimensionMismatchError, EmptyInputError, FormatError, UnknownIdError
from collective_kd.models import (
    EmbeddingProviderConfig, EncodingCounter, EncodingRole, ProviderKind, RawEmbeddingMatrix, Vocabulary,
)


def _base(seed, surface, dim):
    vector = np.random.default_rng(token_seed(seed, surface)).standard_normal(dim)
    return vector / np.linalg.norm(vector)


class TestTextInput:

    def test_tokenize_lowercases(self):
        assert tokenize("The  Quick\tFox") == ["the", "quick", "fox"]

    def test_read_tsv(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("# header\n3\tHello World\n\n1\tfoo\n", encoding="utf-8")
        assert read_tsv(path) == [(3, "Hello World"), (1, "foo")]

    @pytest.mark.parametrize("body, message", [
        ("1 no tab\n", ":1: expected"),
        ("x\ttext\n", "not an integer"),
        ("-2\ttext\n", "negative"),
        ("1\ta\n1\tb\n", ":2: duplicate"),
        ("4\t   \n", "no tokens"),
    ])
    def test_malformed_lines(self, tmp_path, body, message):
        path = tmp_path / "bad.tsv"
        path.write_text(body, encoding="utf-8")
        with pytest.raises(FormatError, match=message):
            read_tsv(path)

    def test_shared_vocabulary_interns_once(self):
        vocab = Vocabulary()
        corpus = build_corpus([(0, "a b a"), (1, "b c")], vocab)
        assert len(vocab) == 3
        assert corpus.doc_freq[vocab.get("b").id] == 2
        assert corpus.doc_freq[vocab.get("a").id] == 1


class TestHashedProvider:

    def test_deterministic(self, provider_cfg, vocab):
        tokens = vocab.intern_all(["alpha", "beta", "gamma"])
        first = encode_raw(tokens, provider_cfg)
        second = encode_raw(tokens, provider_cfg)
        np.testing.assert_array_equal(first.values, second.values)

    def test_independent_of_interning_order(self, provider_cfg):
        one, two = Vocabulary(["zeta", "alpha"]), Vocabulary(["alpha", "zeta"])
        a = encode_raw(one.intern_all(["alpha", "zeta"]), provider_cfg)
        b = encode_raw(two.intern_all(["alpha", "zeta"]), provider_cfg)
        np.testing.assert_array_equal(a.values, b.values)

    def test_no_context_returns_base_vectors(self, flat_cfg, vocab):
        tokens = vocab.intern_all(["red", "green", "red"])
        values = encode_raw(tokens, flat_cfg).values
        np.testing.assert_allclose(values[0], _base(flat_cfg.seed, "red", flat_cfg.dim_in), atol=1e-15)
        np.testing.assert_array_equal(values[0], values[2])

    def test_context_mixing_matches_hand_computation(self, vocab):
        cfg = EmbeddingProviderConfig(dim_in=8, seed=21, context_window=1)
        tokens = vocab.intern_all(["x", "y", "z"])
        values = encode_raw(tokens, cfg).values
        bx, by, bz = (_base(21, s, 8) for s in ("x", "y", "z"))

        assert values.shape == (3, 8)
        np.testing.assert_allclose(values[0], 0.7 * bx + 0.3 * by, atol=1e-12)
        np.testing.assert_allclose(values[1], 0.7 * by + 0.3 * (bx + bz) / 2, atol=1e-12)
        np.testing.assert_allclose(values[2], 0.7 * bz + 0.3 * by, atol=1e-12)

    def test_empty_input(self, provider_cfg):
        with pytest.raises(EmptyInputError, match="empty input"):
            encode_raw((), provider_cfg)

    def test_counter_counts_each_call_once(self, provider_cfg, vocab):
        counter = EncodingCounter()
        tokens = vocab.intern_all(["a", "b", "c", "d"])
        encode_raw(tokens, provider_cfg, counter, EncodingRole.QUERY)
        encode_raw(tokens, provider_cfg, counter, EncodingRole.PASSAGE)
        encode_raw(tokens, provider_cfg, counter, EncodingRole.PASSAGE)
        assert counter.snapshot() == (1, 2)


class TestFileBackedProvider:

    @pytest.fixture
    def file_cfg(self, tmp_path, rng):
        passages = tmp_path / "passages.crnk"
        queries = tmp_path / "queries.crnk"
        write_embedding_file([(0, RawEmbeddingMatrix(rng.standard_normal((2, 6)))),
                              (1, RawEmbeddingMatrix(rng.standard_normal((3, 6))))], passages)
        write_embedding_file([(7, RawEmbeddingMatrix(rng.standard_normal((1, 6))))], queries)
        return EmbeddingProviderConfig(kind=ProviderKind.FILE, dim_in=6, path=str(passages), query_path=str(queries))

    def test_lookup_by_role_and_id(self, file_cfg, vocab):
        matrix = encode_raw(vocab.intern_all(["a", "b", "c"]), file_cfg, role=EncodingRole.PASSAGE, record_id=1)
        assert matrix.values.shape == (3, 6)
        query = encode_raw(vocab.intern_all(["q"]), file_cfg, role=EncodingRole.QUERY, record_id=7)
        assert query.token_count == 1

    def test_unknown_id(self, file_cfg, vocab):
        with pytest.raises(UnknownIdError, match="id 9"):
            encode_raw(vocab.intern_all(["a"]), file_cfg, role=EncodingRole.PASSAGE, record_id=9)

    def test_row_count_must_match_tokens(self, file_cfg, vocab):
        with pytest.raises(DimensionMismatchError):
            encode_raw(vocab.intern_all(["a"]), file_cfg, role=EncodingRole.PASSAGE, record_id=1)

    def test_exported_hashed_embeddings_reload(self, tmp_path, provider_cfg, tiny_corpus):
        path = tmp_path / "export.crnk"
        export_embeddings(path, provider_cfg, tiny_corpus.passages)
        cfg = EmbeddingProviderConfig(kind=ProviderKind.FILE, dim_in=provider_cfg.dim_in, path=str(path))
        for pid, tokens in tiny_corpus.passages.items():
            expected = encode_raw(tokens, provider_cfg).values.astype(np.float32)
            np.testing.assert_array_equal(encode_raw(tokens, cfg, record_id=pid).values, expected)

    def test_static_vectors_average_occurrences(self, file_cfg):
        vocab = Vocabulary()
        corpus = build_corpus([(0, "a b"), (1, "a c d")], vocab)
        statics = get_provider(file_cfg).static_vectors(corpus)
        p0 = encode_raw(corpus.passages[0], file_cfg, record_id=0).values
        p1 = encode_raw(corpus.passages[1], file_cfg, record_id=1).values
        np.testing.assert_allclose(statics[vocab.get("a").id], (p0[0] + p1[0]) / 2)


class TestRawStore:

    def test_build_and_lookup(self, provider_cfg, tiny_corpus, vocab):
        queries = {5: vocab.intern_all(["fox", "dog"])}
        store = RawEmbeddingStore.build(provider_cfg, tiny_corpus.passages, queries)
        assert len(store) == len(tiny_corpus) + 1
        assert store.query(5).token_count == 2
        with pytest.raises(UnknownIdError):
            store.passage(99)

    def test_validation_of_provider_config(self):
        with pytest.raises(ValueError):
            replace(EmbeddingProviderConfig(), dim_in=0).validate()
