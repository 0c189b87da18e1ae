"""Synthetic topic corpus with planted unlabeled positives."""

import pytest

from collective_kd.config import load_config
from collective_kd.evalkit import read_qrels
from collective_kd.synthetic import (
    STOPWORDS, SYNTHETIC_F_P, SYNTHETIC_NEGATIVES_PER_QUERY, generate, planted_from_qrels, write_dataset,
)


@pytest.fixture(scope="module")
def dataset():
    return generate(seed=0)


class TestGenerate:

    def test_default_sizes(self, dataset):
        assert len(dataset.passages) == 950
        assert len(dataset.queries) == 50
        assert sorted(dataset.passages) == list(range(950))
        assert all(len(body.split()) == 28 for body in dataset.passages.values())

    def test_every_passage_has_stopwords(self, dataset):
        assert all(set(body.split()) & set(STOPWORDS) for body in dataset.passages.values())

    def test_roles_are_disjoint(self, dataset):
        seen = set()
        for plan in dataset.plans.values():
            roles = plan.passages
            assert len(set(roles)) == len(roles) == 17
            assert not seen & set(roles)
            seen.update(roles)

    def test_passage_roles_follow_query_terms(self, dataset):
        for qid, plan in dataset.plans.items():
            head, *asked = dataset.queries[qid].split()
            labeled = set(dataset.passages[plan.labeled].split())
            assert {head, *asked, *plan.unasked} <= labeled
            for pid in plan.planted:
                words = dataset.passages[pid].split()
                assert head in words
                assert len(set(words) & set(asked)) == 1
                assert all(words.count(term) == 2 for term in plan.unasked)
            for pid in plan.decoys:
                words = set(dataset.passages[pid].split())
                assert head in words
                assert len(words & set(asked)) == 1
                assert not words & set(plan.unasked)
            assert len(set(dataset.passages[plan.related].split()) & {head, *asked}) == 1

    def test_judgments(self, dataset):
        for qid, plan in dataset.plans.items():
            assert dataset.train_qrels.for_query(qid) == {plan.labeled: 3}
            judged = dataset.eval_qrels.for_query(qid)
            assert judged[plan.labeled] == 3
            assert all(judged[pid] in (2, 3) for pid in plan.planted)
            assert judged[plan.related] == 1
            assert all(judged[pid] == 0 for pid in plan.decoys)

    def test_planted_from_qrels(self, dataset):
        assert planted_from_qrels(dataset.train_qrels, dataset.eval_qrels) == dataset.planted

    def test_seeded(self, dataset):
        assert generate(seed=0).passages == dataset.passages
        assert generate(seed=1).passages != dataset.passages

    def test_scaled_down(self):
        small = generate(seed=2, n_queries=3, planted_per_query=2, decoys_per_query=1, background_passages=5)
        assert (len(small.queries), len(small.passages)) == (3, 3 * 5 + 5)


class TestWriteDataset:

    def test_files_and_config(self, tmp_path, dataset):
        config_path = write_dataset(dataset, tmp_path / "data", seed=3)
        config = load_config(config_path).validate("pretrain")

        assert config.run.seed == 3
        assert config.path("corpus").read_text().count("\n") == 950
        assert config.prf.f_p == SYNTHETIC_F_P
        assert config.prf.negatives_per_query == SYNTHETIC_NEGATIVES_PER_QUERY
        assert read_qrels(config.path("eval_qrels")).judgments == dataset.eval_qrels.judgments
        assert config.path("checkpoint") == tmp_path / "data" / "out" / "theta.crwt"
