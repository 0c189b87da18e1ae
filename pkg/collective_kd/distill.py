"""
Collective KD - Student Training

A student is a projection W initialized from the pre-trained snapshot theta
and trained by plain per-query gradient descent, either towards the
teacher's distribution (kd_kl) or with the hard loss on the observed
positive (hard_ce).
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .codec import build_checkpoint, parse_checkpoint, read_sidecar, write_sidecar
from .collective import annotate_queries
from .constants import DEFAULT_INIT_SEED, DEFAULT_NEGATIVES_PER_QUERY, THETA_LABEL
from .embeddings import RawEmbeddingStore
from .errors import EmptyInputError
from .index import EncodedIndex, build_idf, build_index
from .models import (
    Corpus, EmbeddingProviderConfig, NegativesSource, Objective, ParameterSnapshot,
    PrfConfig, Projection, Qrels, RawEmbeddingMatrix, RelevanceDistribution, Strategy,
    TeacherLabelSet, Token, TrainConfig, TrainReport,
)
from .relevance import grad_hard_loss, grad_kd_loss, kl_divergence, student_distribution

logger = logging.getLogger("collective_kd.distill")


# ═══════════════════════════════════════════════════════════════════════════════
# TRAINER
# ═══════════════════════════════════════════════════════════════════════════════

def init_student(snapshot: ParameterSnapshot) -> Projection:
    """Writable deep copy of theta"""
    return snapshot.projection.copy()


def _resolve(labels: Sequence[TeacherLabelSet], store: RawEmbeddingStore) -> List[Tuple[RawEmbeddingMatrix, List[RawEmbeddingMatrix]]]:
    return [(store.query(label.query_id), [store.passage(pid) for pid in label.candidates]) for label in labels]


def train_student(labels: Sequence[TeacherLabelSet], store: RawEmbeddingStore, init: Projection,
                  cfg: TrainConfig) -> TrainReport:
    """
    Train a student projection

    Args:
        labels: Teacher label sets (targets for kd_kl, positives for hard_ce)
        store: Raw embeddings of every query and candidate
        init: Starting projection (copied, never modified)
        cfg: Training settings

    Returns:
        TrainReport with one mean loss per epoch

    Raises:
        UnknownIdError: a label references an id missing from the store
    """
    cfg.validate()
    if not labels:
        raise EmptyInputError("no label sets to train on")
    resolved = _resolve(labels, store)

    projection = init.copy()
    rng = np.random.default_rng(cfg.seed)
    epoch_losses: List[float] = []
    steps = 0

    for epoch in range(1, cfg.epochs + 1):
        losses = np.zeros(len(labels))
        for position in rng.permutation(len(labels)):
            label = labels[position]
            query_raw, candidate_raws = resolved[position]
            if cfg.objective == Objective.KD_KL:
                loss, grad = grad_kd_loss(projection, query_raw, candidate_raws, label.target)
            else:
                loss, grad = grad_hard_loss(projection, query_raw, candidate_raws, label.positive_index)

            if cfg.gradient_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > cfg.gradient_clip:
                    grad = grad * (cfg.gradient_clip / norm)

            projection.weights -= cfg.learning_rate * grad
            losses[position] = loss
            steps += 1

        epoch_losses.append(float(losses.mean()))
        logger.info(f"epoch {epoch}/{cfg.epochs}: mean {cfg.objective.value} loss {epoch_losses[-1]:.6f}")

    return TrainReport(epoch_losses, projection, steps)


def residual_gap(teacher_target: RelevanceDistribution, student_dist: RelevanceDistribution) -> float:
    """KL(teacher || student), the part of the teacher the student has not absorbed"""
    return kl_divergence(teacher_target, student_dist)


def residual_gaps(labels: Sequence[TeacherLabelSet], store: RawEmbeddingStore,
                  projection: Projection) -> Dict[int, float]:
    """Per-query residual gap of a projection"""
    gaps = {}
    for label, (query_raw, candidate_raws) in zip(labels, _resolve(labels, store)):
        student = student_distribution(projection, query_raw, candidate_raws, label.candidates)
        gaps[label.query_id] = residual_gap(label.target, student)
    return gaps


# ═══════════════════════════════════════════════════════════════════════════════
# CHECKPOINTS
# ═══════════════════════════════════════════════════════════════════════════════

def write_checkpoint(path, projection: Projection, meta: Optional[dict] = None):
    """Write W as a CRWT file plus its `.meta.json` sidecar"""
    Path(path).write_bytes(build_checkpoint(projection.weights))
    write_sidecar(path, {"dim_out": projection.dim_out, "dim_in": projection.dim_in, **(meta or {})})


def read_checkpoint(path) -> Tuple[Projection, dict]:
    return Projection(parse_checkpoint(Path(path).read_bytes())), read_sidecar(path)


# ═══════════════════════════════════════════════════════════════════════════════
# STRATEGIES
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class StrategyPreset:
    """How a training strategy labels and trains"""
    objective: Objective
    negatives_source: NegativesSource
    collective: bool        # teacher uses the collective centroids (beta > 0)


STRATEGY_PRESETS: Dict[Strategy, StrategyPreset] = {
    Strategy.PRETRAINED: StrategyPreset(Objective.HARD_CE, NegativesSource.RANDOM, False),
    Strategy.HARD_NEGATIVES: StrategyPreset(Objective.HARD_CE, NegativesSource.TOP100, False),
    Strategy.SELF_KD: StrategyPreset(Objective.KD_KL, NegativesSource.TOP100, False),
    Strategy.COLLECTIVE: StrategyPreset(Objective.KD_KL, NegativesSource.TOP100, True),
}


def preset_configs(strategy: Strategy, prf: PrfConfig, train: TrainConfig) -> Tuple[PrfConfig, TrainConfig]:
    """Apply a strategy preset to base feedback and training settings"""
    preset = STRATEGY_PRESETS[strategy]
    prf = prf if preset.collective else replace(prf, beta=0.0)
    train = replace(train, objective=preset.objective, negatives_source=preset.negatives_source)
    return prf, train


def train_strategy(strategy: Strategy, init: Projection, corpus: Corpus, queries: Mapping[int, Sequence[Token]],
                   qrels: Qrels, provider: EmbeddingProviderConfig, prf: PrfConfig, train: TrainConfig,
                   store: RawEmbeddingStore, seed: int,
                   negatives_per_query: int = DEFAULT_NEGATIVES_PER_QUERY,
                   threads: int = 1, index: Optional[EncodedIndex] = None) -> Tuple[TrainReport, List[TeacherLabelSet]]:
    """
    Label with the init projection's own index, then train a student from it

    Returns:
        (training report, the label sets used)
    """
    prf, train = preset_configs(strategy, prf, train)
    if index is None:
        index = build_index(corpus, provider, init)
    labels, _ = annotate_queries(
        queries, index, build_idf(corpus), prf, qrels, seed,
        negatives_per_query=negatives_per_query,
        negatives_source=train.negatives_source,
        threads=threads,
    )
    logger.info(f"Training {strategy.value} student on {len(labels)} queries")
    return train_student(labels, store, init, train), labels


def pretrain(corpus: Corpus, queries: Mapping[int, Sequence[Token]], qrels: Qrels,
             provider: EmbeddingProviderConfig, dim_out: int, prf: PrfConfig, train: TrainConfig,
             store: RawEmbeddingStore, seed: int, init_seed: int = DEFAULT_INIT_SEED,
             negatives_per_query: int = DEFAULT_NEGATIVES_PER_QUERY,
             threads: int = 1) -> Tuple[ParameterSnapshot, TrainReport]:
    """
    Produce theta: hard loss on random top-1000 negatives from a random W

    Returns:
        (snapshot of theta, training report)
    """
    start = Projection.random(dim_out, provider.dim_in, init_seed)
    report, _ = train_strategy(
        Strategy.PRETRAINED, start, corpus, queries, qrels, provider, prf, train, store, seed,
        negatives_per_query=negatives_per_query, threads=threads,
    )
    return ParameterSnapshot(report.projection, THETA_LABEL), report
