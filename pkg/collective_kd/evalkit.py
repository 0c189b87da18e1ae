"""
Collective KD - Evaluation

Graded qrels (0..3), MRR@k / NDCG@k / Recall@k, mean response time,
precision-recall curves at graded cutoffs and the one-at-a-time sweep of
the collective teacher's settings.
"""

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .codec import provenance_line, strip_provenance
from .collective import rerank_with_teacher
from .constants import (
    DEFAULT_BINARY_CUTOFF, DEFAULT_DEPTH, DEFAULT_MRT_REPETITIONS, MRR_DEPTH,
    NDCG_DEPTH, PLANTED_RECALL_DEPTH, PR_CUTOFFS, RECALL_DEPTH, SWEEP_GRID,
)
from .errors import EmptyInputError, FormatError, ValidationError
from .index import EncodedIndex, retrieve
from .models import (
    EncodedQuery, IdfTable, MetricsReport, PrCurve, PrfConfig, Qrels, Ranking,
    SweepResult, SweepRow,
)

logger = logging.getLogger("collective_kd.evalkit")


# ═══════════════════════════════════════════════════════════════════════════════
# QRELS
# ═══════════════════════════════════════════════════════════════════════════════

def read_qrels(path) -> Qrels:
    """TREC qrels: `qid 0 pid grade`"""
    qrels = Qrels()
    with open(path, encoding="utf-8") as handle:
        for number, line in strip_provenance(handle):
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"{path}:{number}: expected 'qid 0 pid grade'")
            try:
                qid, pid, grade = int(parts[0]), int(parts[2]), int(parts[3])
            except ValueError:
                raise FormatError(f"{path}:{number}: malformed qrels line") from None
            try:
                qrels.add(qid, pid, grade)
            except ValidationError as exc:
                raise FormatError(f"{path}:{number}: {exc}") from None
    return qrels


def write_qrels(path, qrels: Qrels):
    with open(path, "w", encoding="utf-8") as handle:
        for (qid, pid), grade in sorted(qrels.judgments.items()):
            handle.write(f"{qid} 0 {pid} {grade}\n")


# ═══════════════════════════════════════════════════════════════════════════════
# METRICS
# ═══════════════════════════════════════════════════════════════════════════════

def _check_k(k: int):
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")


def mrr_at_k(ranking: Ranking, qrels: Qrels, k: int = MRR_DEPTH, binary_cutoff: int = DEFAULT_BINARY_CUTOFF) -> float:
    """1/rank of the first passage with grade >= cutoff within the top k, else 0"""
    _check_k(k)
    for rank, pid in enumerate(ranking.passage_ids[:k], 1):
        if qrels.grade(ranking.query_id, pid) >= binary_cutoff:
            return 1.0 / rank
    return 0.0


def _dcg(grades: Iterable[int]) -> float:
    return sum((2 ** g - 1) / math.log2(rank + 1) for rank, g in enumerate(grades, 1))


def ndcg_at_k(ranking: Ranking, qrels: Qrels, k: int = NDCG_DEPTH) -> Optional[float]:
    """
    Graded NDCG with gain 2^g - 1 and discount 1/log2(rank + 1)

    Returns None when the query has no passage of grade >= 1.
    """
    _check_k(k)
    judged = qrels.for_query(ranking.query_id)
    ideal = _dcg(sorted(judged.values(), reverse=True)[:k])
    if ideal == 0:
        return None
    return _dcg(judged.get(pid, 0) for pid in ranking.passage_ids[:k]) / ideal


def recall_at_k(ranking: Ranking, qrels: Qrels, k: int = RECALL_DEPTH,
                binary_cutoff: int = DEFAULT_BINARY_CUTOFF) -> Optional[float]:
    """Returns None when the query has no passage of grade >= cutoff"""
    _check_k(k)
    relevant = set(qrels.relevant(ranking.query_id, binary_cutoff))
    if not relevant:
        return None
    return len(relevant.intersection(ranking.passage_ids[:k])) / len(relevant)


def _mean(values: Iterable[Optional[float]]) -> float:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else 0.0


def evaluate(rankings: Iterable[Ranking], qrels: Qrels, binary_cutoff: int = DEFAULT_BINARY_CUTOFF,
             mrt_ms: float = 0.0, label: str = "") -> MetricsReport:
    """
    Aggregate metrics over the rankings of judged queries

    Raises:
        ValidationError: no ranked query is judged
    """
    judged = set(qrels.query_ids)
    per_query: Dict[int, Dict[str, Optional[float]]] = {}
    for ranking in rankings:
        if ranking.query_id not in judged:
            continue
        per_query[ranking.query_id] = {
            "mrr_at_10": mrr_at_k(ranking, qrels, MRR_DEPTH, binary_cutoff),
            "ndcg_at_10": ndcg_at_k(ranking, qrels, NDCG_DEPTH),
            "recall_at_1000": recall_at_k(ranking, qrels, RECALL_DEPTH, binary_cutoff),
        }
    if not per_query:
        raise ValidationError("run and qrels share no query ids")
    missing = len(judged.difference(per_query))
    if missing:
        logger.warning(f"{missing} judged queries have no ranking in the run")

    return MetricsReport(
        mrr_at_10=_mean(m["mrr_at_10"] for m in per_query.values()),
        ndcg_at_10=_mean(m["ndcg_at_10"] for m in per_query.values()),
        recall_at_1000=_mean(m["recall_at_1000"] for m in per_query.values()),
        mrt_ms=mrt_ms,
        per_query=dict(sorted(per_query.items())),
        label=label,
    )


def planted_recall_at_k(rankings: Iterable[Ranking], planted: Mapping[int, Set[int]],
                        k: int = PLANTED_RECALL_DEPTH) -> float:
    """Mean Recall@k over each query's planted (unlabeled) positives"""
    _check_k(k)
    values = []
    for ranking in rankings:
        targets = planted.get(ranking.query_id)
        if targets:
            values.append(len(set(targets).intersection(ranking.passage_ids[:k])) / len(targets))
    return _mean(values)


def measure_mrt(queries: Sequence[EncodedQuery], index: EncodedIndex, depth: int,
                repetitions: int = DEFAULT_MRT_REPETITIONS) -> float:
    """
    Mean retrieval time per query, in milliseconds

    Queries are pre-encoded, so encoding is excluded. One warm-up pass is
    discarded; retrieval runs single-threaded.
    """
    if repetitions < 1:
        raise ValidationError(f"repetitions must be >= 1, got {repetitions}")
    if not queries:
        return 0.0
    for query in queries:
        retrieve(query, index, depth)

    start = time.perf_counter()
    for _ in range(repetitions):
        for query in queries:
            retrieve(query, index, depth)
    elapsed = time.perf_counter() - start
    return elapsed * 1000.0 / (repetitions * len(queries))


# ═══════════════════════════════════════════════════════════════════════════════
# PRECISION / RECALL CURVES
# ═══════════════════════════════════════════════════════════════════════════════

def pr_curve(scores: Mapping[Hashable, float], qrels: Union[Qrels, Mapping[Hashable, int]],
             cutoff: int, label: str = "") -> PrCurve:
    """
    Precision and recall of {score >= t} against {grade >= cutoff}

    One point per distinct score value over the judged keys, ascending
    threshold; the first point accepts everything.

    Args:
        scores: key -> score; keys are usually (qid, pid)
        qrels: Qrels, or key -> grade
        cutoff: binary relevance boundary, one of 1, 2, 3
    """
    if cutoff not in PR_CUTOFFS:
        raise ValidationError(f"cutoff must be one of {PR_CUTOFFS}, got {cutoff}")
    grades = qrels.judgments if isinstance(qrels, Qrels) else qrels
    keys = [key for key in scores if key in grades]
    if not keys:
        raise EmptyInputError("no judged passages to build a curve from")

    values = np.array([scores[key] for key in keys], dtype=np.float64)
    positive = np.array([grades[key] >= cutoff for key in keys])
    total_positive = int(positive.sum())
    if total_positive == 0:
        raise ValidationError(f"no judged passage has grade >= {cutoff}")

    points = []
    for threshold in np.unique(values):
        selected = values >= threshold
        hits = int(np.sum(positive & selected))
        points.append((float(threshold), hits / int(selected.sum()), hits / total_positive))
    return PrCurve(cutoff, points, label)


def write_pr_curve_tsv(path, curve: PrCurve, meta: Optional[dict] = None):
    with open(path, "w", encoding="utf-8") as handle:
        if meta:
            handle.write(provenance_line(meta) + "\n")
        handle.write("threshold\tprecision\trecall\n")
        for threshold, precision, recall in curve.points:
            handle.write(f"{threshold:.6f}\t{precision:.6f}\t{recall:.6f}\n")


# ═══════════════════════════════════════════════════════════════════════════════
# SWEEP
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass
class EvalSet:
    """Queries and judgments the teacher is evaluated on"""
    queries: List[EncodedQuery]
    index: EncodedIndex
    idf: IdfTable
    qrels: Qrels
    seed: int
    depth: int = DEFAULT_DEPTH
    binary_cutoff: int = DEFAULT_BINARY_CUTOFF

    def __post_init__(self):
        if not self.queries:
            raise EmptyInputError("eval set has no queries")


def teacher_rankings(cfg: PrfConfig, eval_set: EvalSet) -> List[Ranking]:
    """Retrieve at eval_set.depth, then re-rank with the teacher under cfg"""
    return [
        rerank_with_teacher(query, retrieve(query, eval_set.index, eval_set.depth),
                            eval_set.index, eval_set.idf, cfg, eval_set.seed)
        for query in eval_set.queries
    ]


def evaluate_teacher(cfg: PrfConfig, eval_set: EvalSet) -> Tuple[float, float]:
    """(NDCG@10, Recall@1000) of the teacher under cfg"""
    report = evaluate(teacher_rankings(cfg, eval_set), eval_set.qrels, eval_set.binary_cutoff)
    return report.ndcg_at_10, report.recall_at_1000


def sweep(defaults: PrfConfig, eval_set: EvalSet,
          grid: Mapping[str, Sequence] = SWEEP_GRID) -> SweepResult:
    """
    One-at-a-time sweep around `defaults`

    Emits the default row, then one row per off-default grid value in grid
    order. Values that make the config invalid (f_e > f_c) are skipped with
    a warning.
    """
    defaults.validate()
    ndcg, recall = evaluate_teacher(defaults, eval_set)
    rows = [SweepRow(defaults, ndcg, recall)]
    logger.info(f"sweep default {defaults}: NDCG@10 {ndcg:.4f}, R@1k {recall:.4f}")

    for name, values in grid.items():
        for value in values:
            if value == getattr(defaults, name):
                continue
            variant = replace(defaults, **{name: value})
            try:
                variant.validate()
            except ValidationError as exc:
                logger.warning(f"sweep: skipping {name}={value}: {exc}")
                continue
            ndcg, recall = evaluate_teacher(variant, eval_set)
            rows.append(SweepRow(variant, ndcg, recall, varied=name))
            logger.info(f"sweep {name}={value}: NDCG@10 {ndcg:.4f}, R@1k {recall:.4f}")

    return SweepResult(rows)


# ═══════════════════════════════════════════════════════════════════════════════
# REPORTS
# ═══════════════════════════════════════════════════════════════════════════════

def _fmt(value: Optional[float]) -> str:
    return "NA" if value is None else f"{value:.6f}"


def write_report_tsv(path, report: MetricsReport, meta: Optional[dict] = None):
    with open(path, "w", encoding="utf-8") as handle:
        if meta:
            handle.write(provenance_line(meta) + "\n")
        handle.write("query\tmrr_at_10\tndcg_at_10\trecall_at_1000\n")
        for qid, metrics in report.per_query.items():
            handle.write(
                f"{qid}\t{_fmt(metrics['mrr_at_10'])}\t{_fmt(metrics['ndcg_at_10'])}\t{_fmt(metrics['recall_at_1000'])}\n"
            )
        handle.write(
            f"all\t{report.mrr_at_10:.6f}\t{report.ndcg_at_10:.6f}\t{report.recall_at_1000:.6f}\n"
        )
        handle.write(f"mrt_ms\t{report.mrt_ms:.6f}\n")


def write_sweep_tsv(path, result: SweepResult, meta: Optional[dict] = None):
    with open(path, "w", encoding="utf-8") as handle:
        if meta:
            handle.write(provenance_line(meta) + "\n")
        handle.write("varied\tf_p\tf_c\tf_e\tbeta\tndcg_at_10\trecall_at_1000\n")
        for row in result.rows:
            c = row.config
            handle.write(
                f"{row.varied or 'default'}\t{c.f_p}\t{c.f_c}\t{c.f_e}\t{c.beta}\t"
                f"{row.ndcg_at_10:.6f}\t{row.recall_at_1k:.6f}\n"
            )
