"""Index construction, exact MaxSim retrieval, run files and persistence."""

import math

import numpy as np
import pytest

from collective_kd.embeddings import build_corpus
from collective_kd.errors import DimensionMismatchError, EmptyInputError, UnknownIdError, ValidationError
from collective_kd.index import (
    EncodedIndex, build_idf, build_index, feedback_passages, load_index, rank_queries, read_run,
    retrieve, save_index, write_run,
)
from collective_kd.models import (
    EmbeddingProviderConfig, EncodedQuery, EncodingCounter, Projection, Ranking, Vocabulary,
)


def _unit(rng, rows, dim):
    values = rng.standard_normal((rows, dim))
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def _naive_ranking(query_rows, passages, depth):
    scores = {
        pid: sum(max(float(np.dot(q, p)) for p in rows) for q in query_rows)
        for pid, rows in passages.items()
    }
    order = sorted(scores, key=lambda pid: (-scores[pid], pid))
    return [(pid, scores[pid]) for pid in order[:depth]]


class TestIdf:

    def test_rare_token_in_hundred_passages(self):
        records = [(i, "common filler") for i in range(99)] + [(99, "common rare")]
        corpus = build_corpus(records, Vocabulary())
        idf = build_idf(corpus)
        rare = corpus.passages[99][1].id
        assert idf[rare] == pytest.approx(math.log(101 / 2), abs=1e-12)
        assert idf[rare] == pytest.approx(3.9220, abs=1e-4)

    def test_token_in_every_passage_is_zero(self):
        records = [(0, "x a"), (1, "x b")]
        corpus = build_corpus(records, Vocabulary())
        assert build_idf(corpus)[corpus.passages[0][0].id] == 0.0

    def test_more_passages_means_lower_idf(self):
        records = [(0, "one two three"), (1, "two three filler"), (2, "three filler"), (3, "filler")]
        corpus = build_corpus(records, Vocabulary())
        idf = build_idf(corpus)
        one, two, three = (token.id for token in corpus.passages[0])
        assert idf[one] > idf[two] > idf[three] > 0.0

    def test_empty_corpus(self):
        with pytest.raises(EmptyInputError):
            build_idf(build_corpus([], Vocabulary()))


class TestBuildIndex:

    def test_rows_are_unit_and_aligned(self, tiny_index, tiny_corpus):
        assert tiny_index.passage_ids == sorted(tiny_corpus.passages)
        for pid, tokens in tiny_corpus.passages.items():
            rows = tiny_index.passage(pid).rows
            assert rows.shape == (len(tokens), 8)
            np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)

    def test_static_vectors_cover_vocabulary(self, tiny_index, tiny_corpus):
        assert tiny_index.static_token_ids.tolist() == tiny_corpus.token_ids
        np.testing.assert_allclose(np.linalg.norm(tiny_index.static_matrix, axis=1), 1.0, atol=1e-9)

    def test_counter_records_one_encoding_per_passage(self, tiny_corpus, provider_cfg):
        counter = EncodingCounter()
        build_index(tiny_corpus, provider_cfg, Projection.random(4, 16, seed=0), counter)
        assert counter.snapshot() == (0, len(tiny_corpus))

    def test_projection_must_match_provider(self, tiny_corpus, provider_cfg):
        with pytest.raises(DimensionMismatchError, match="dim_in"):
            build_index(tiny_corpus, provider_cfg, Projection.random(4, 12, seed=0))

    def test_unknown_passage(self, tiny_index):
        with pytest.raises(UnknownIdError):
            tiny_index.passage(404)

    def test_rows_are_read_only(self, tiny_index):
        with pytest.raises(ValueError):
            tiny_index.passage(0).rows[0, 0] = 1.0


class TestRetrieve:

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            passages = {pid: _unit(rng, int(rng.integers(1, 8)), 6) for pid in range(int(rng.integers(5, 30)))}
            index = EncodedIndex(passages, {}, Projection(np.eye(6)), EmbeddingProviderConfig(dim_in=6))
            query_rows = _unit(rng, int(rng.integers(1, 5)), 6)
            depth = int(rng.integers(1, len(passages) + 3))

            ranking = retrieve(EncodedQuery(0, query_rows), index, depth)
            expected = _naive_ranking(query_rows, passages, depth)
            assert ranking.passage_ids == [pid for pid, _ in expected]
            np.testing.assert_allclose(ranking.scores, [s for _, s in expected], rtol=0, atol=1e-12)

    def test_scores_descending_and_depth_clipped(self, tiny_index, tiny_corpus, vocab):
        query = tiny_index.encode_query(0, vocab.intern_all(["brown", "fox"]))
        ranking = retrieve(query, tiny_index, depth=100)
        assert len(ranking) == len(tiny_corpus)
        assert ranking.scores == sorted(ranking.scores, reverse=True)

    def test_ties_break_by_ascending_id(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        index = EncodedIndex({5: rows, 2: rows, 9: rows[:1]}, {}, Projection(np.eye(2)), EmbeddingProviderConfig(dim_in=2))
        ranking = retrieve(EncodedQuery(0, [[1.0, 0.0]]), index, depth=3)
        assert ranking.passage_ids == [2, 5, 9]

    def test_exact_token_match_scores_query_length(self, flat_cfg):
        vocab = Vocabulary()
        corpus = build_corpus([(0, "the fox and the dog"), (1, "a cat")], vocab)
        index = build_index(corpus, flat_cfg, Projection.random(8, 16, seed=3))
        query = index.encode_query(0, vocab.intern_all(["fox", "dog"]))
        ranking = retrieve(query, index, depth=2)
        assert ranking.passage_ids[0] == 0
        assert ranking.scores[0] == pytest.approx(2.0, abs=1e-9)

    @pytest.mark.parametrize("depth, extra", [(1, 1), (5, 10), (20, 48)])
    def test_shallow_ranking_is_prefix_of_deeper(self, small_setup, depth, extra):
        index = small_setup["index"]
        for qid, tokens in small_setup["queries"].items():
            query = index.encode_query(qid, tokens)
            shallow, deep = retrieve(query, index, depth), retrieve(query, index, depth + extra)
            assert deep.items[:depth] == shallow.items

    def test_invalid_depth(self, tiny_index):
        with pytest.raises(ValidationError):
            retrieve(EncodedQuery(0, [[1.0] + [0.0] * 7]), tiny_index, depth=0)

    def test_dim_mismatch(self, tiny_index):
        with pytest.raises(DimensionMismatchError):
            retrieve(EncodedQuery(0, [[1.0, 0.0]]), tiny_index, depth=3)

    def test_rank_queries_threads_agree(self, small_setup):
        single = rank_queries(small_setup["index"], small_setup["queries"], depth=20)
        pooled = rank_queries(small_setup["index"], small_setup["queries"], depth=20, threads=4)
        assert [r.query_id for r in single] == sorted(small_setup["queries"])
        assert [r.items for r in single] == [r.items for r in pooled]

    def test_query_counter(self, small_setup):
        counter = EncodingCounter()
        rank_queries(small_setup["index"], small_setup["queries"], depth=5, counter=counter)
        assert counter.snapshot() == (len(small_setup["queries"]), 0)


class TestFeedbackPassages:

    def test_prefix(self):
        ranking = Ranking(1, [(7, 3.0), (2, 2.0), (4, 1.0)], 3)
        assert feedback_passages(ranking, 2) == [7, 2]

    @pytest.mark.parametrize("f_p", [0, 4])
    def test_out_of_range(self, f_p):
        with pytest.raises(ValidationError):
            feedback_passages(Ranking(1, [(7, 3.0), (2, 2.0), (4, 1.0)], 3), f_p)


class TestRunFiles:

    def test_trec_lines_and_reload(self, tmp_path):
        path = tmp_path / "run.trec"
        rankings = [Ranking(3, [(10, 2.5), (11, 1.25)], 2), Ranking(1, [(12, 0.5)], 1)]
        write_run(path, rankings, "ckd-test", meta={"seed": 1})

        assert path.read_text().splitlines()[0] == "3 Q0 10 1 2.500000 ckd-test"
        loaded = read_run(path)
        assert list(loaded) == [1, 3]
        assert loaded[3].items == [(10, 2.5), (11, 1.25)]
        assert (tmp_path / "run.trec.meta.json").exists()


class TestPersistence:

    def test_round_trip(self, tmp_path, tiny_index, tiny_corpus, vocab):
        idf = build_idf(tiny_corpus)
        save_index(tmp_path / "idx", tiny_index, vocab, idf, meta={"config_hash": "abc"})
        index, loaded_vocab, loaded_idf, manifest = load_index(tmp_path / "idx")

        assert index.passage_ids == tiny_index.passage_ids
        assert loaded_vocab.surfaces == vocab.surfaces
        assert loaded_idf.values == idf.values
        assert manifest["config_hash"] == "abc"
        assert manifest["passages"] == len(tiny_corpus)
        np.testing.assert_allclose(index.passage(3).rows, tiny_index.passage(3).rows, atol=1e-6)

        query = index.encode_query(0, loaded_vocab.intern_all(["fox"]))
        original = tiny_index.encode_query(0, vocab.intern_all(["fox"]))
        np.testing.assert_allclose(index.score_all(query.rows), tiny_index.score_all(original.rows), atol=1e-5)

    def test_rebuild_is_byte_identical(self, tmp_path, provider_cfg):
        def build(target):
            vocab = Vocabulary()
            corpus = build_corpus([(0, "one two"), (1, "two three four")], vocab)
            index = build_index(corpus, provider_cfg, Projection.random(4, 16, seed=9))
            save_index(target, index, vocab, build_idf(corpus), meta={"seed": 9})

        build(tmp_path / "a")
        build(tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ValidationError, match="not an index directory"):
            load_index(tmp_path)
