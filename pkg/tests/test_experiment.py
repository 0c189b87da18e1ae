"""Multi-seed comparison of the training strategies."""

import pytest

from collective_kd.config import load_config
from collective_kd.embeddings import build_corpus, tokenize_records
from collective_kd.experiment import ComparisonReport, ComparisonSettings, StrategyOutcome, compare_strategies
from collective_kd.models import EmbeddingProviderConfig, PrfConfig, Strategy, TrainConfig, Vocabulary
from collective_kd.synthetic import SYNTHETIC_NEGATIVES_PER_QUERY, generate


def _outcome(seed, strategy, recall):
    return StrategyOutcome(seed, strategy, recall, 0.5, 0.5, 0.1)


def _run(dataset, settings, seeds):
    vocab = Vocabulary()
    corpus = build_corpus(dataset.passages.items(), vocab)
    queries = tokenize_records(dataset.queries.items(), vocab)
    return compare_strategies(corpus, queries, dataset.train_qrels, dataset.eval_qrels, dataset.planted,
                              settings, seeds)


class TestComparisonReport:

    def test_wins_and_improvements(self):
        report = ComparisonReport([
            _outcome(0, Strategy.COLLECTIVE, 0.6), _outcome(0, Strategy.SELF_KD, 0.5),
            _outcome(1, Strategy.COLLECTIVE, 0.4), _outcome(1, Strategy.SELF_KD, 0.5),
            _outcome(2, Strategy.COLLECTIVE, 0.5), _outcome(2, Strategy.SELF_KD, 0.5),
        ])
        assert report.seeds == [0, 1, 2]
        assert report.improvements(Strategy.SELF_KD) == pytest.approx([0.1, -0.1, 0.0])
        assert report.wins(Strategy.SELF_KD) == 1
        assert report.mean(Strategy.COLLECTIVE) == pytest.approx(0.5)


class TestCompareStrategies:

    def test_one_seed_on_small_dataset(self):
        dataset = generate(seed=4, n_queries=4, decoys_per_query=2, background_passages=30)
        settings = ComparisonSettings(
            provider=EmbeddingProviderConfig(dim_in=16, seed=3, context_window=1),
            prf=PrfConfig(3, 8, 4, 1.0),
            train=TrainConfig(epochs=2),
            dim_out=8,
            pretrain_epochs=2,
            depth=50,
        )
        report = _run(dataset, settings, seeds=[0])

        assert [o.strategy for o in report.outcomes] == [
            Strategy.PRETRAINED, Strategy.HARD_NEGATIVES, Strategy.SELF_KD, Strategy.COLLECTIVE,
        ]
        assert all(0.0 <= o.planted_recall_at_10 <= 1.0 for o in report.outcomes)
        assert "collective vs hard_negatives" in str(report)

    def test_settings_follow_config(self, synthetic_config):
        config = load_config(synthetic_config, ["train.epochs=7", "retrieval.depth=200"])
        settings = ComparisonSettings.from_config(config, threads=2)
        assert settings.prf == config.prf_config()
        assert settings.negatives_per_query == SYNTHETIC_NEGATIVES_PER_QUERY
        assert settings.train.epochs == 7
        assert (settings.depth, settings.threads) == (200, 2)
        assert settings.pretrain_epochs == config.train.pretrain_epochs

    @pytest.mark.slow
    def test_collective_student_finds_more_planted_positives(self, synthetic_config):
        settings = ComparisonSettings.from_config(load_config(synthetic_config))
        report = _run(generate(seed=0), settings, seeds=[0, 1, 2, 3, 4])

        assert report.wins(Strategy.HARD_NEGATIVES) >= 4, str(report)
        assert report.wins(Strategy.SELF_KD) >= 4, str(report)
        assert report.mean(Strategy.COLLECTIVE) > report.mean(Strategy.HARD_NEGATIVES)
        assert report.mean(Strategy.COLLECTIVE) > report.mean(Strategy.SELF_KD)
