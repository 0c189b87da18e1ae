"""
Collective KD - Relevance Scoring, Losses and Gradients

Scores are late-interaction MaxSim over projected, row-normalized token
embeddings:

    phi_q(p) = sum_i max_j < W q_i / |W q_i| , W p_j / |W p_j| >

Only W is trainable. Gradients are analytic: they flow through the softmax,
through each query token's designated argmax passage token (smallest index
on ties), through the row normalization and through W.
"""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, rel_entr, softmax

from .constants import NORM_FLOOR
from .errors import DimensionMismatchError, EmptyInputError, ValidationError
from .models import (
    EncodedPassage, EncodedQuery, Projection, RawEmbeddingMatrix, RelevanceDistribution,
)

RawLike = Union[RawEmbeddingMatrix, np.ndarray]


def _raw_values(raw: RawLike) -> np.ndarray:
    return raw.values if isinstance(raw, RawEmbeddingMatrix) else np.asarray(raw, dtype=np.float64)


# ═══════════════════════════════════════════════════════════════════════════════
# PROJECTION
# ═══════════════════════════════════════════════════════════════════════════════

def _forward(weights: np.ndarray, raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (normalized rows, row norms of W x)"""
    if raw.shape[1] != weights.shape[1]:
        raise DimensionMismatchError(f"raw dim {raw.shape[1]} does not match projection dim_in {weights.shape[1]}")
    projected = raw @ weights.T
    norms = np.maximum(np.linalg.norm(projected, axis=1), NORM_FLOOR)
    return projected / norms[:, None], norms


def project_rows(projection: Projection, raw: RawLike) -> np.ndarray:
    """W x for every row, then L2-normalized"""
    rows, _ = _forward(projection.weights, _raw_values(raw))
    return rows


def encode_query(projection: Projection, query_id: int, raw: RawLike) -> EncodedQuery:
    return EncodedQuery(query_id, project_rows(projection, raw))


def encode_passage(projection: Projection, passage_id: int, raw: RawLike) -> EncodedPassage:
    return EncodedPassage(passage_id, project_rows(projection, raw))


# ═══════════════════════════════════════════════════════════════════════════════
# SCORING
# ═══════════════════════════════════════════════════════════════════════════════

def maxsim_rows(query_rows: np.ndarray, passage_rows: np.ndarray) -> float:
    if query_rows.shape[1] != passage_rows.shape[1]:
        raise DimensionMismatchError(
            f"query dim {query_rows.shape[1]} does not match passage dim {passage_rows.shape[1]}"
        )
    return float(np.sum(np.max(query_rows @ passage_rows.T, axis=1)))


def maxsim(query: EncodedQuery, passage: EncodedPassage) -> float:
    """
    Late-interaction relevance phi_q(p)

    Example:
        q rows {[1,0],[0,1]}, p rows {[0.6,0.8],[1,0]} -> 1.0 + 0.8 = 1.8
    """
    return maxsim_rows(query.rows, passage.rows)


def softmax_distribution(scores: Sequence[float], candidates: Optional[Sequence[int]] = None) -> RelevanceDistribution:
    """Max-shifted softmax over candidate scores"""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyInputError("empty input")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("non-finite score")
    if candidates is None:
        candidates = range(scores.size)
    return RelevanceDistribution(tuple(candidates), softmax(scores))


def kl_divergence(target: RelevanceDistribution, student: RelevanceDistribution) -> float:
    """KL(target || student) = sum target * ln(target / student)"""
    if target.candidates != student.candidates:
        raise ValidationError("target and student candidates differ")
    return float(np.sum(rel_entr(target.probabilities, student.probabilities)))


def hard_loss(positive_score: float, negative_scores: Sequence[float]) -> float:
    """-ln( e^{s+} / (e^{s+} + sum e^{s-}) )"""
    scores = np.concatenate([[positive_score], np.asarray(negative_scores, dtype=np.float64)])
    if not np.all(np.isfinite(scores)):
        raise ValidationError("non-finite score")
    return float(logsumexp(scores) - positive_score)


# ═══════════════════════════════════════════════════════════════════════════════
# GRADIENTS
# ═══════════════════════════════════════════════════════════════════════════════

class _Chain:
    """Forward pass of one query against its candidates, kept for backprop"""

    def __init__(self, projection: Projection, query_raw: RawLike, candidate_raws: Sequence[RawLike]):
        if not candidate_raws:
            raise EmptyInputError("no candidates")
        self.weights = projection.weights
        self.xq = _raw_values(query_raw)
        self.xc = [_raw_values(raw) for raw in candidate_raws]
        self.yq, self.nq = _forward(self.weights, self.xq)
        self.yc, self.nc, self.argmax = [], [], []
        scores = []
        rows = np.arange(self.yq.shape[0])
        for x in self.xc:
            y, n = _forward(self.weights, x)
            sim = self.yq @ y.T
            best = np.argmax(sim, axis=1)      # first maximum = smallest index
            self.yc.append(y)
            self.nc.append(n)
            self.argmax.append(best)
            scores.append(float(np.sum(sim[rows, best])))
        self.scores = np.asarray(scores)

    def backward(self, score_grad: np.ndarray) -> np.ndarray:
        """dL/dW given dL/dscore per candidate"""
        grad_yq = np.zeros_like(self.yq)
        grad_w = np.zeros_like(self.weights)
        for g, y, n, x, best in zip(score_grad, self.yc, self.nc, self.xc, self.argmax):
            if g == 0.0:
                continue
            grad_yq += g * y[best]
            grad_y = np.zeros_like(y)
            np.add.at(grad_y, best, g * self.yq)
            grad_w += _normalize_backward(grad_y, y, n).T @ x
        grad_w += _normalize_backward(grad_yq, self.yq, self.nq).T @ self.xq
        return grad_w


def _normalize_backward(grad_y: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # y = z / |z|  =>  dz = (dy - (dy . y) y) / |z|
    return (grad_y - np.sum(grad_y * y, axis=1, keepdims=True) * y) / norms[:, None]


def student_scores(projection: Projection, query_raw: RawLike, candidate_raws: Sequence[RawLike]) -> np.ndarray:
    return _Chain(projection, query_raw, candidate_raws).scores


def student_distribution(projection: Projection, query_raw: RawLike,
                         candidate_raws: Sequence[RawLike], candidates: Sequence[int]) -> RelevanceDistribution:
    return softmax_distribution(student_scores(projection, query_raw, candidate_raws), candidates)


def argmax_pattern(projection: Projection, query_raw: RawLike, candidate_raws: Sequence[RawLike]) -> List[np.ndarray]:
    """Designated argmax passage row of every query row, per candidate"""
    return _Chain(projection, query_raw, candidate_raws).argmax


def grad_kd_loss(projection: Projection, query_raw: RawLike, candidate_raws: Sequence[RawLike],
                 target: RelevanceDistribution) -> Tuple[float, np.ndarray]:
    """
    KL(target || softmax(phi)) and its gradient w.r.t. W

    Args:
        projection: Current W
        query_raw: Raw query matrix
        candidate_raws: Raw candidate matrices, aligned with target.candidates
        target: Teacher distribution

    Returns:
        (loss, gradient with W's shape)
    """
    if len(candidate_raws) != len(target):
        raise DimensionMismatchError(f"{len(candidate_raws)} candidates for a target of size {len(target)}")
    chain = _Chain(projection, query_raw, candidate_raws)
    student = RelevanceDistribution(target.candidates, softmax(chain.scores))
    loss = kl_divergence(target, student)
    return loss, chain.backward(student.probabilities - target.probabilities)


def grad_hard_loss(projection: Projection, query_raw: RawLike, candidate_raws: Sequence[RawLike],
                   positive_index: int = 0) -> Tuple[float, np.ndarray]:
    """hard_loss of the candidate at `positive_index` and its gradient w.r.t. W"""
    chain = _Chain(projection, query_raw, candidate_raws)
    negatives = np.delete(chain.scores, positive_index)
    loss = hard_loss(chain.scores[positive_index], negatives)
    score_grad = softmax(chain.scores)
    score_grad[positive_index] -= 1.0
    return loss, chain.backward(score_grad)
