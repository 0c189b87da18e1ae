"""
Collective KD - Collective Teacher

Pipeline per training query:
    retrieve -> feedback passages -> k-means over their token rows
             -> keep the f_e centroids whose nearest vocabulary token is rarest
             -> teacher score = phi_q(p) + beta * sum_n idf_n * max_j <e_n, p_j>
             -> softmax over {observed positive} + mined negatives
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
from sklearn.cluster import kmeans_plusplus

from .codec import provenance_line, strip_provenance
from .constants import (
    DEFAULT_NEGATIVES_PER_QUERY, HARD_NEGATIVE_POOL, KMEANS_MAX_ITERS, KMEANS_TOL,
    RANDOM_NEGATIVE_POOL,
)
from .errors import (
    DimensionMismatchError, EmptyInputError, FormatError, InsufficientPointsError, ValidationError,
)
from .index import EncodedIndex, feedback_passages, retrieve
from .models import (
    CentroidSet, CollectiveCentroids, EncodedPassage, EncodedQuery, EncodingCounter,
    IdfTable, NegativesSource, PrfConfig, Qrels, Ranking, RelevanceDistribution,
    TeacherLabelSet, Token,
)
from .relevance import maxsim, softmax_distribution

logger = logging.getLogger("collective_kd.collective")

# SeedSequence stream tags, one per random consumer of a query
_KMEANS_STREAM = 0
_NEGATIVES_STREAM = 1


def query_seed(seed: int, query_id: int, stream: int = _KMEANS_STREAM) -> int:
    """Per-query seed derived from the run seed"""
    return int(np.random.SeedSequence([seed, query_id, stream]).generate_state(1)[0])


# ═══════════════════════════════════════════════════════════════════════════════
# K-MEANS
# ═══════════════════════════════════════════════════════════════════════════════

def kmeans(points: np.ndarray, k: int, seed: int,
           max_iters: int = KMEANS_MAX_ITERS, tol: float = KMEANS_TOL) -> CentroidSet:
    """
    Seeded k-means++ initialization followed by Lloyd iterations

    An empty cluster is re-seeded with the point farthest from its own
    centroid (among clusters that can spare one). SSE is recorded after
    every update step and never increases.

    Raises:
        InsufficientPointsError: k larger than the number of points
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise EmptyInputError("kmeans needs at least one point")
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    n = points.shape[0]
    if k > n:
        raise InsufficientPointsError(f"insufficient points: k={k} but only {n} points")

    centroids, _ = kmeans_plusplus(points, n_clusters=k, random_state=seed % (2 ** 32))
    centroids = centroids.astype(np.float64)
    history: List[float] = []
    labels = np.zeros(n, dtype=np.int64)
    iterations = 0

    for iterations in range(1, max_iters + 1):
        dist = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)
        _repair_empty(labels, dist[np.arange(n), labels], k)

        updated = np.stack([points[labels == c].mean(axis=0) for c in range(k)])
        movement = float(np.linalg.norm(updated - centroids))
        centroids = updated
        history.append(float(((points - centroids[labels]) ** 2).sum()))
        if movement < tol:
            break

    logger.debug(f"kmeans k={k} n={n}: {iterations} iterations, SSE {history[-1]:.6g}")
    return CentroidSet(None, centroids, labels, history, iterations)


def _repair_empty(labels: np.ndarray, distances: np.ndarray, k: int):
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return
    # farthest first, smallest index on ties
    order = np.lexsort((np.arange(labels.size), -distances))
    cursor = 0
    for cluster in empty:
        while counts[labels[order[cursor]]] < 2:
            cursor += 1
        point = order[cursor]
        counts[labels[point]] -= 1
        labels[point] = cluster
        counts[cluster] = 1
        cursor += 1


def extract_centroids(query_id: int, ranking: Ranking, index: EncodedIndex, cfg: PrfConfig, seed: int) -> CentroidSet:
    """k-means (k = f_c) over the pooled token rows of the top-f_p passages"""
    pool = np.vstack([index.passage(pid).rows for pid in feedback_passages(ranking, cfg.f_p)])
    if pool.shape[0] < cfg.f_c:
        raise InsufficientPointsError(
            f"insufficient points: query {query_id} pools {pool.shape[0]} feedback tokens for f_c={cfg.f_c}"
        )
    centroids = kmeans(pool, cfg.f_c, query_seed(seed, query_id))
    centroids.query_id = query_id
    return centroids


def select_by_idf(centroids: CentroidSet, index: EncodedIndex, idf: IdfTable, f_e: int) -> CollectiveCentroids:
    """
    Keep the f_e centroids whose nearest vocabulary token has the highest IDF

    Nearest token is by inner product against the static token vectors
    (smaller token id on ties); centroid order breaks IDF ties.
    """
    if index.static_matrix.shape[0] == 0:
        raise EmptyInputError("empty vocabulary table")
    if f_e > centroids.k:
        raise ValidationError(f"f_e ({f_e}) exceeds the number of centroids ({centroids.k})")

    sims = centroids.centroids @ index.static_matrix.T
    nearest = index.static_token_ids[np.argmax(sims, axis=1)].tolist()
    weights = [idf[tid] for tid in nearest]
    keep = sorted(range(centroids.k), key=lambda m: (-weights[m], m))[:f_e]

    return CollectiveCentroids(
        query_id=centroids.query_id,
        vectors=centroids.centroids[keep],
        weights=np.array([weights[m] for m in keep]),
        nearest_tokens=tuple(nearest[m] for m in keep),
        source_indices=tuple(keep),
    )


def empty_centroids(query_id: Optional[int], dim: int) -> CollectiveCentroids:
    return CollectiveCentroids(query_id, np.zeros((0, dim)), np.zeros(0), ())


# ═══════════════════════════════════════════════════════════════════════════════
# TEACHER SCORE
# ═══════════════════════════════════════════════════════════════════════════════

def teacher_score(query: EncodedQuery, passage: EncodedPassage, cc: CollectiveCentroids, beta: float) -> float:
    """phi_q(p) + beta * sum_n sigma_n * max_j <e_n, p_j>"""
    phi = maxsim(query, passage)
    if len(cc) == 0:
        return phi
    if cc.vectors.shape[1] != passage.rows.shape[1]:
        raise DimensionMismatchError(
            f"centroid dim {cc.vectors.shape[1]} does not match passage dim {passage.rows.shape[1]}"
        )
    augmentation = float(np.dot(cc.weights, np.max(cc.vectors @ passage.rows.T, axis=1)))
    return phi + beta * augmentation


def collective_centroids(query_id: int, ranking: Ranking, index: EncodedIndex, idf: IdfTable,
                         cfg: PrfConfig, seed: int) -> CollectiveCentroids:
    """extract_centroids + select_by_idf; skipped entirely when beta is 0"""
    if cfg.beta == 0:
        return empty_centroids(query_id, index.dim_out)
    return select_by_idf(extract_centroids(query_id, ranking, index, cfg, seed), index, idf, cfg.f_e)


def rerank_with_teacher(query: EncodedQuery, ranking: Ranking, index: EncodedIndex, idf: IdfTable,
                        cfg: PrfConfig, seed: int) -> Ranking:
    """Re-score a ranking with the teacher (evaluation of the teacher only)"""
    cc = collective_centroids(query.query_id, ranking, index, idf, cfg, seed)
    scored = [(pid, teacher_score(query, index.passage(pid), cc, cfg.beta)) for pid in ranking.passage_ids]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return Ranking(ranking.query_id, scored, ranking.depth)


# ═══════════════════════════════════════════════════════════════════════════════
# NEGATIVES
# ═══════════════════════════════════════════════════════════════════════════════

def _sample_pool(ranking: Ranking, positives: Set[int], count: int, seed: int, pool_depth: int) -> List[int]:
    pool = [pid for pid in ranking.passage_ids[:pool_depth] if pid not in positives]
    if count > len(pool):
        raise InsufficientPointsError(f"negative pool has {len(pool)} passages, {count} requested")
    rng = np.random.default_rng(seed)
    return [pool[i] for i in rng.choice(len(pool), size=count, replace=False)]


def mine_hard_negatives(ranking: Ranking, positives: Set[int], count: int, seed: int) -> List[int]:
    """Uniform sample without replacement from the top-100, positives excluded"""
    return _sample_pool(ranking, set(positives), count, seed, HARD_NEGATIVE_POOL)


def sample_random_negatives(ranking: Ranking, positives: Set[int], count: int, seed: int) -> List[int]:
    """Uniform sample without replacement from the top-1000, positives excluded"""
    return _sample_pool(ranking, set(positives), count, seed, RANDOM_NEGATIVE_POOL)


_NEGATIVE_SAMPLERS = {
    NegativesSource.TOP100: (mine_hard_negatives, HARD_NEGATIVE_POOL),
    NegativesSource.RANDOM: (sample_random_negatives, RANDOM_NEGATIVE_POOL),
}


def observed_positive(judged: Mapping[int, int]) -> Optional[int]:
    """Highest-grade judged passage with grade >= 1 (smaller pid on ties)"""
    relevant = [(grade, pid) for pid, grade in judged.items() if grade >= 1]
    if not relevant:
        return None
    return min(relevant, key=lambda item: (-item[0], item[1]))[1]


# ═══════════════════════════════════════════════════════════════════════════════
# ANNOTATION
# ═══════════════════════════════════════════════════════════════════════════════

def annotate(query_id: int, index: EncodedIndex, idf: IdfTable, cfg: PrfConfig,
             negatives_per_query: int, seed: int,
             query: Union[EncodedQuery, Sequence[Token]],
             judged: Mapping[int, int],
             counter: Optional[EncodingCounter] = None,
             negatives_source: NegativesSource = NegativesSource.TOP100) -> TeacherLabelSet:
    """
    Soft labels of one training query

    Args:
        query_id: Query id
        index: Passage index (encodings are reused, never recomputed)
        idf: Corpus IDF table
        cfg: Feedback settings
        negatives_per_query: Negatives sampled per query
        seed: Run seed (k-means and sampling streams derive from it)
        query: Encoded query, or its tokens (encoded here, counted once)
        judged: The query's judgments, pid -> grade
        counter: Encoding counter
        negatives_source: top-100 hard negatives or top-1000 random ones

    Returns:
        TeacherLabelSet with the observed positive first, then negatives by
        descending teacher score (pid ascending on ties)
    """
    positive = observed_positive(judged)
    if positive is None:
        raise ValidationError(f"query {query_id} has no observed positive")
    positive_entry = index.passage(positive)

    if not isinstance(query, EncodedQuery):
        query = index.encode_query(query_id, query, counter)

    sampler, pool_depth = _NEGATIVE_SAMPLERS[negatives_source]
    ranking = retrieve(query, index, max(pool_depth, cfg.f_p))
    cc = collective_centroids(query_id, ranking, index, idf, cfg, seed)

    positives = {pid for pid, grade in judged.items() if grade >= 1}
    negatives = sampler(ranking, positives, negatives_per_query, query_seed(seed, query_id, _NEGATIVES_STREAM))

    positive_score = teacher_score(query, positive_entry, cc, cfg.beta)
    scored = sorted(
        ((pid, teacher_score(query, index.passage(pid), cc, cfg.beta)) for pid in negatives),
        key=lambda item: (-item[1], item[0]),
    )
    candidates = (positive,) + tuple(pid for pid, _ in scored)
    scores = np.array([positive_score] + [score for _, score in scored])

    logger.debug(f"q{query_id}: {len(candidates)} candidates, {len(cc)} centroids")
    return TeacherLabelSet(
        query_id=query_id,
        candidates=candidates,
        teacher_scores=scores,
        target=softmax_distribution(scores, candidates),
        observed_positive=positive,
    )


def annotate_queries(queries: Mapping[int, Sequence[Token]], index: EncodedIndex, idf: IdfTable,
                     cfg: PrfConfig, qrels: Qrels, seed: int,
                     negatives_per_query: int = DEFAULT_NEGATIVES_PER_QUERY,
                     counter: Optional[EncodingCounter] = None,
                     negatives_source: NegativesSource = NegativesSource.TOP100,
                     threads: int = 1) -> Tuple[List[TeacherLabelSet], int]:
    """
    Annotate every query that has an observed positive

    Each annotated query is encoded exactly once. Output order is ascending
    query id regardless of the thread count.

    Returns:
        (label sets, number of skipped queries)
    """
    cfg.validate()
    qids = [qid for qid in sorted(queries) if observed_positive(qrels.for_query(qid)) is not None]
    skipped = len(queries) - len(qids)
    if skipped:
        logger.warning(f"Skipped {skipped} queries without an observed positive")

    def run(qid: int) -> TeacherLabelSet:
        return annotate(qid, index, idf, cfg, negatives_per_query, seed, queries[qid],
                        qrels.for_query(qid), counter, negatives_source)

    if threads <= 1:
        labels = [run(qid) for qid in qids]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            labels = list(pool.map(run, qids))

    logger.info(f"Annotated {len(labels)} queries with beta={cfg.beta} ({negatives_source.value})")
    return labels, skipped


# ═══════════════════════════════════════════════════════════════════════════════
# LABEL FILE
# ═══════════════════════════════════════════════════════════════════════════════

def write_labels(path, labels: Sequence[TeacherLabelSet], meta: Optional[dict] = None):
    """`qid pid teacher_score target_prob is_observed_positive`, grouped by qid"""
    with open(path, "w", encoding="utf-8") as handle:
        if meta:
            handle.write(provenance_line(meta) + "\n")
        for label in labels:
            for pid, score, prob in zip(label.candidates, label.teacher_scores, label.target.probabilities):
                is_positive = int(pid == label.observed_positive)
                handle.write(f"{label.query_id}\t{pid}\t{float(score)!r}\t{float(prob)!r}\t{is_positive}\n")


def read_labels(path) -> List[TeacherLabelSet]:
    blocks: Dict[int, List[Tuple[int, float, float, int]]] = {}
    with open(path, encoding="utf-8") as handle:
        for number, line in strip_provenance(handle):
            parts = line.split("\t")
            if len(parts) != 5:
                raise FormatError(f"{path}:{number}: expected 5 tab-separated fields")
            try:
                qid, pid, score, prob, flag = int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]), int(parts[4])
            except ValueError:
                raise FormatError(f"{path}:{number}: malformed label line") from None
            blocks.setdefault(qid, []).append((pid, score, prob, flag))

    labels = []
    for qid, rows in blocks.items():
        positives = [pid for pid, _, _, flag in rows if flag]
        if len(positives) != 1:
            raise FormatError(f"{path}: query {qid} has {len(positives)} observed positives")
        candidates = tuple(pid for pid, _, _, _ in rows)
        labels.append(TeacherLabelSet(
            query_id=qid,
            candidates=candidates,
            teacher_scores=np.array([score for _, score, _, _ in rows]),
            target=RelevanceDistribution(candidates, np.array([prob for _, _, prob, _ in rows])),
            observed_positive=positives[0],
        ))
    return labels
