"""
Collective KD - Strategy Comparison

Per seed: pre-train theta, train the hard-negative, self-KD and collective
students from it, rank every query with each projection and score them,
chiefly by Recall@10 over the planted (unlabeled) positives.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Sequence, Set

import numpy as np

from .config import PipelineConfig
from .constants import DEFAULT_DEPTH, DEFAULT_DIM_OUT, DEFAULT_INIT_SEED, DEFAULT_NEGATIVES_PER_QUERY, DEFAULT_PRETRAIN_EPOCHS
from .distill import init_student, pretrain, train_strategy
from .embeddings import RawEmbeddingStore
from .evalkit import evaluate, planted_recall_at_k
from .index import build_index, rank_queries
from .models import (
    Corpus, EmbeddingProviderConfig, PrfConfig, Qrels, Strategy, Token, TrainConfig,
)

logger = logging.getLogger("collective_kd.experiment")

STUDENT_STRATEGIES = (Strategy.HARD_NEGATIVES, Strategy.SELF_KD, Strategy.COLLECTIVE)


@dataclass
class ComparisonSettings:
    provider: EmbeddingProviderConfig
    prf: PrfConfig = field(default_factory=PrfConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dim_out: int = DEFAULT_DIM_OUT
    pretrain_epochs: int = DEFAULT_PRETRAIN_EPOCHS
    init_seed: int = DEFAULT_INIT_SEED
    negatives_per_query: int = DEFAULT_NEGATIVES_PER_QUERY
    depth: int = DEFAULT_DEPTH
    threads: int = 1

    @classmethod
    def from_config(cls, cfg: PipelineConfig, threads: int = 1) -> "ComparisonSettings":
        return cls(
            provider=cfg.provider_config(),
            prf=cfg.prf_config(),
            train=cfg.train_config(),
            dim_out=cfg.projection.dim_out,
            pretrain_epochs=cfg.train.pretrain_epochs,
            init_seed=cfg.projection.init_seed,
            negatives_per_query=cfg.prf.negatives_per_query,
            depth=cfg.retrieval.depth,
            threads=threads,
        )


@dataclass
class StrategyOutcome:
    seed: int
    strategy: Strategy
    planted_recall_at_10: float
    mrr_at_10: float
    ndcg_at_10: float
    final_loss: float


@dataclass
class ComparisonReport:
    outcomes: List[StrategyOutcome]

    def outcome(self, seed: int, strategy: Strategy) -> StrategyOutcome:
        return next(o for o in self.outcomes if o.seed == seed and o.strategy == strategy)

    @property
    def seeds(self) -> List[int]:
        return sorted({o.seed for o in self.outcomes})

    def mean(self, strategy: Strategy, metric: str = "planted_recall_at_10") -> float:
        return float(np.mean([getattr(o, metric) for o in self.outcomes if o.strategy == strategy]))

    def improvements(self, baseline: Strategy, metric: str = "planted_recall_at_10") -> List[float]:
        """Per-seed gain of the collective student over `baseline`"""
        return [
            getattr(self.outcome(s, Strategy.COLLECTIVE), metric) - getattr(self.outcome(s, baseline), metric)
            for s in self.seeds
        ]

    def wins(self, baseline: Strategy, metric: str = "planted_recall_at_10") -> int:
        return sum(1 for gain in self.improvements(baseline, metric) if gain > 0)

    def __str__(self):
        lines = [
            "═" * 66,
            f"{'strategy':<16} {'planted R@10':>13} {'MRR@10':>8} {'NDCG@10':>8} {'final loss':>11}",
            "─" * 66,
        ]
        for strategy in Strategy:
            if not any(o.strategy == strategy for o in self.outcomes):
                continue
            lines.append(
                f"{strategy.value:<16} {self.mean(strategy):>13.4f} {self.mean(strategy, 'mrr_at_10'):>8.4f} "
                f"{self.mean(strategy, 'ndcg_at_10'):>8.4f} {self.mean(strategy, 'final_loss'):>11.5f}"
            )
        lines.append("─" * 66)
        for baseline in (Strategy.HARD_NEGATIVES, Strategy.SELF_KD):
            gains = ", ".join(f"{g:+.3f}" for g in self.improvements(baseline))
            lines.append(f"collective vs {baseline.value}: {self.wins(baseline)}/{len(self.seeds)} seeds [{gains}]")
        lines.append("═" * 66)
        return "\n".join(lines)


def compare_strategies(corpus: Corpus, queries: Mapping[int, Sequence[Token]], train_qrels: Qrels,
                       eval_qrels: Qrels, planted: Mapping[int, Set[int]],
                       settings: ComparisonSettings, seeds: Sequence[int]) -> ComparisonReport:
    """
    Run every strategy for every seed

    Training and evaluation use the same queries; planted positives never
    appear in the training judgments.
    """
    store = RawEmbeddingStore.build(settings.provider, corpus.passages, queries)
    outcomes: List[StrategyOutcome] = []

    def score(seed: int, strategy: Strategy, projection, final_loss: float):
        index = build_index(corpus, settings.provider, projection)
        rankings = rank_queries(index, queries, settings.depth, threads=settings.threads)
        report = evaluate(rankings, eval_qrels)
        outcome = StrategyOutcome(seed, strategy, planted_recall_at_k(rankings, planted),
                                  report.mrr_at_10, report.ndcg_at_10, final_loss)
        logger.info(f"seed {seed} {strategy.value}: planted R@10 {outcome.planted_recall_at_10:.4f}")
        outcomes.append(outcome)
        return index

    for seed in seeds:
        pretrain_cfg = replace(settings.train, epochs=settings.pretrain_epochs, seed=settings.train.seed + seed)
        theta, pre_report = pretrain(
            corpus, queries, train_qrels, settings.provider, settings.dim_out, settings.prf, pretrain_cfg,
            store, seed, init_seed=settings.init_seed + seed,
            negatives_per_query=settings.negatives_per_query, threads=settings.threads,
        )
        theta_index = score(seed, Strategy.PRETRAINED, theta.projection, pre_report.epoch_losses[-1])

        student_cfg = replace(settings.train, seed=settings.train.seed + seed)
        for strategy in STUDENT_STRATEGIES:
            report, _ = train_strategy(
                strategy, init_student(theta), corpus, queries, train_qrels, settings.provider,
                settings.prf, student_cfg, store, seed,
                negatives_per_query=settings.negatives_per_query, threads=settings.threads,
                index=theta_index,
            )
            score(seed, strategy, report.projection, report.epoch_losses[-1])

    return ComparisonReport(outcomes)
