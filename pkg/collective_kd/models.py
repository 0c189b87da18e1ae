"""
Collective KD - Data Models
"""

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import (
    CONTEXT_NEIGHBOR_WEIGHT, CONTEXT_SELF_WEIGHT, DEFAULT_BETA, DEFAULT_CONTEXT_WINDOW, DEFAULT_DIM_IN,
    DEFAULT_EPOCHS, DEFAULT_F_C, DEFAULT_F_E, DEFAULT_F_P, DEFAULT_LEARNING_RATE, DEFAULT_PROVIDER_SEED,
    DEFAULT_TRAIN_SEED, MAX_GRADE, ROW_NORM_TOLERANCE, THETA_LABEL,
)
from .errors import DimensionMismatchError, EmptyInputError, ValidationError


# ═══════════════════════════════════════════════════════════════════════════════
# ENUMS
# ═══════════════════════════════════════════════════════════════════════════════

class ProviderKind(str, Enum):
    """Where raw token embeddings come from"""
    HASHED = "hashed_deterministic"     # seeded, desk-scale stand-in for an encoder
    FILE = "file_backed"                # external embedding file


class EncodingRole(str, Enum):
    """Which side of the bi-encoder an encoding belongs to"""
    QUERY = "query"
    PASSAGE = "passage"


class Objective(str, Enum):
    """Student training objective"""
    KD_KL = "kd_kl"        # KL to the teacher distribution
    HARD_CE = "hard_ce"    # cross-entropy on the observed positive


class NegativesSource(str, Enum):
    """Pool the candidate negatives are drawn from"""
    RANDOM = "bm25_like_random"    # uniform from the depth-1000 ranking
    TOP100 = "top100_hard"         # uniform from the top-100 ranking


class Strategy(str, Enum):
    """
    Training strategies compared by the experiment harness

    - PRETRAINED: hard loss on random negatives from a random init (theta)
    - HARD_NEGATIVES: theta fine-tuned with hard loss on top-100 negatives
    - SELF_KD: theta distilled from itself (teacher with beta = 0)
    - COLLECTIVE: theta distilled from the collective teacher (beta > 0)
    """
    PRETRAINED = "pretrained"
    HARD_NEGATIVES = "hard_negatives"
    SELF_KD = "self_kd"
    COLLECTIVE = "collective"


# ═══════════════════════════════════════════════════════════════════════════════
# TOKENS AND RAW EMBEDDINGS
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class Token:
    """An interned token"""
    id: int
    surface: str

    def __str__(self):
        return f"{self.surface}#{self.id}"


class Vocabulary:
    """
    Interning table mapping surfaces to dense ids

    Equal surfaces always map to the same id within one vocabulary.
    """

    def __init__(self, surfaces: Sequence[str] = ()):
        self._ids: Dict[str, int] = {}
        self._surfaces: List[str] = []
        for surface in surfaces:
            self.intern(surface)

    def intern(self, surface: str) -> Token:
        token_id = self._ids.get(surface)
        if token_id is None:
            token_id = len(self._surfaces)
            self._ids[surface] = token_id
            self._surfaces.append(surface)
        return Token(token_id, surface)

    def intern_all(self, surfaces: Sequence[str]) -> Tuple[Token, ...]:
        return tuple(self.intern(s) for s in surfaces)

    def get(self, surface: str) -> Optional[Token]:
        token_id = self._ids.get(surface)
        return None if token_id is None else Token(token_id, surface)

    def token(self, token_id: int) -> Token:
        return Token(token_id, self._surfaces[token_id])

    @property
    def surfaces(self) -> List[str]:
        return list(self._surfaces)

    def __len__(self):
        return len(self._surfaces)

    def __contains__(self, surface: str):
        return surface in self._ids


@dataclass(frozen=True)
class RawEmbeddingMatrix:
    """Per-token raw (pre-projection) embeddings of one text"""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise EmptyInputError(f"raw embedding matrix must be non-empty 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("raw embedding matrix has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def token_count(self) -> int:
        return self.values.shape[0]

    @property
    def dim_in(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    """How to produce raw embeddings"""
    kind: ProviderKind = ProviderKind.HASHED
    dim_in: int = DEFAULT_DIM_IN
    seed: int = DEFAULT_PROVIDER_SEED
    context_window: int = DEFAULT_CONTEXT_WINDOW
    path: Optional[str] = None          # passages, file_backed only
    query_path: Optional[str] = None    # queries, file_backed only
    self_weight: float = CONTEXT_SELF_WEIGHT
    neighbor_weight: float = CONTEXT_NEIGHBOR_WEIGHT

    def validate(self) -> "EmbeddingProviderConfig":
        if self.dim_in < 1:
            raise ValidationError(f"dim_in must be positive, got {self.dim_in}")
        if self.context_window < 0:
            raise ValidationError(f"context_window must be non-negative, got {self.context_window}")
        if self.kind == ProviderKind.FILE and not self.path:
            raise ValidationError("file_backed provider needs a path")
        return self

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "dim_in": self.dim_in,
            "seed": self.seed,
            "context_window": self.context_window,
            "path": self.path,
            "query_path": self.query_path,
        }


@dataclass
class EncodingCounter:
    """
    Encoder invocation counts

    Thread-safe; counts only ever go up.
    """
    query_encodings: int = 0
    passage_encodings: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, role: EncodingRole, count: int = 1):
        with self._lock:
            if role == EncodingRole.QUERY:
                self.query_encodings += count
            else:
                self.passage_encodings += count

    @property
    def total(self) -> int:
        return self.query_encodings + self.passage_encodings

    def snapshot(self) -> Tuple[int, int]:
        with self._lock:
            return self.query_encodings, self.passage_encodings

    def to_dict(self) -> dict:
        q, p = self.snapshot()
        return {"query_encodings": q, "passage_encodings": p}

    def __str__(self):
        q, p = self.snapshot()
        return f"encodings: {q} query / {p} passage"


# ═══════════════════════════════════════════════════════════════════════════════
# CORPUS AND RANKINGS
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass
class Corpus:
    """Tokenized passages plus document frequencies"""
    passages: Dict[int, Tuple[Token, ...]]
    doc_freq: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.doc_freq:
            for tokens in self.passages.values():
                for token_id in {t.id for t in tokens}:
                    self.doc_freq[token_id] = self.doc_freq.get(token_id, 0) + 1

    @property
    def passage_count(self) -> int:
        return len(self.passages)

    @property
    def token_ids(self) -> List[int]:
        return sorted(self.doc_freq)

    def __len__(self):
        return len(self.passages)


@dataclass
class IdfTable:
    """Token id -> inverse document frequency"""
    values: Dict[int, float]

    def __getitem__(self, token_id: int) -> float:
        return self.values[token_id]

    def get(self, token_id: int, default: float = 0.0) -> float:
        return self.values.get(token_id, default)

    def __len__(self):
        return len(self.values)

    def __contains__(self, token_id: int):
        return token_id in self.values


@dataclass
class Ranking:
    """A query's passages in descending score order"""
    query_id: int
    items: List[Tuple[int, float]]
    depth: int

    @property
    def passage_ids(self) -> List[int]:
        return [pid for pid, _ in self.items]

    @property
    def scores(self) -> List[float]:
        return [score for _, score in self.items]

    def head(self, n: int) -> "Ranking":
        return Ranking(self.query_id, self.items[:n], min(n, self.depth))

    def __len__(self):
        return len(self.items)

    def __str__(self):
        top = ", ".join(f"{pid}:{score:.3f}" for pid, score in self.items[:5])
        return f"q{self.query_id} [{top}{', ...' if len(self.items) > 5 else ''}]"


# ═══════════════════════════════════════════════════════════════════════════════
# PROJECTION AND ENCODED TEXTS
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass
class Projection:
    """The trainable linear map W (dim_out x dim_in)"""
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or 0 in self.weights.shape:
            raise DimensionMismatchError(f"projection must be a non-empty matrix, got shape {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValidationError("projection has non-finite entries")

    @property
    def dim_out(self) -> int:
        return self.weights.shape[0]

    @property
    def dim_in(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def random(cls, dim_out: int, dim_in: int, seed: int) -> "Projection":
        """Seeded Gaussian init scaled by 1/sqrt(dim_in)"""
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((dim_out, dim_in)) / np.sqrt(dim_in))

    def copy(self) -> "Projection":
        return Projection(self.weights.copy())

    def __str__(self):
        return f"Projection({self.dim_out}x{self.dim_in}, |W|={np.linalg.norm(self.weights):.4f})"


def _check_unit_rows(rows: np.ndarray, what: str):
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyInputError(f"{what} needs at least one row, got shape {rows.shape}")
    norms = np.linalg.norm(rows, axis=1)
    if np.any(np.abs(norms - 1.0) > ROW_NORM_TOLERANCE):
        raise ValidationError(f"{what} rows must be unit-normalized")


@dataclass
class EncodedQuery:
    """Projected, row-normalized query token embeddings"""
    query_id: int
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        _check_unit_rows(self.rows, f"query {self.query_id}")

    @property
    def dim_out(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class EncodedPassage:
    """Projected, row-normalized passage token embeddings"""
    passage_id: int
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        _check_unit_rows(self.rows, f"passage {self.passage_id}")

    @property
    def dim_out(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class RelevanceDistribution:
    """A probability distribution over candidate passages"""
    candidates: Tuple[int, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        self.candidates = tuple(self.candidates)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if len(self.candidates) != len(self.probabilities):
            raise DimensionMismatchError(
                f"{len(self.candidates)} candidates but {len(self.probabilities)} probabilities"
            )
        if abs(float(np.sum(self.probabilities)) - 1.0) > 1e-9:
            raise ValidationError("probabilities must sum to 1")

    def probability(self, passage_id: int) -> float:
        return float(self.probabilities[self.candidates.index(passage_id)])

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class ParameterSnapshot:
    """
    Frozen copy of a projection (theta)

    The stored weights are a private, read-only copy, so training a
    student never alters the snapshot.
    """
    projection: Projection
    label: str = THETA_LABEL

    def __post_init__(self):
        frozen = self.projection.copy()
        frozen.weights.setflags(write=False)
        object.__setattr__(self, "projection", frozen)


# ═══════════════════════════════════════════════════════════════════════════════
# COLLECTIVE TEACHER
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class PrfConfig:
    """Pseudo-relevance feedback settings of the collective teacher"""
    f_p: int = DEFAULT_F_P
    f_c: int = DEFAULT_F_C
    f_e: int = DEFAULT_F_E
    beta: float = DEFAULT_BETA

    def validate(self) -> "PrfConfig":
        for name in ("f_p", "f_c", "f_e"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.f_e > self.f_c:
            raise ValidationError(f"f_e ({self.f_e}) must not exceed f_c ({self.f_c})")
        if self.beta < 0:
            raise ValidationError(f"beta must be non-negative, got {self.beta}")
        return self

    def as_tuple(self) -> Tuple[int, int, int, float]:
        return (self.f_p, self.f_c, self.f_e, self.beta)

    def to_dict(self) -> dict:
        return {"f_p": self.f_p, "f_c": self.f_c, "f_e": self.f_e, "beta": self.beta}

    def __str__(self):
        return f"(f_p={self.f_p}, f_c={self.f_c}, f_e={self.f_e}, beta={self.beta})"


@dataclass
class CentroidSet:
    """k-means output over a query's feedback token embeddings"""
    query_id: Optional[int]
    centroids: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sse_history: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def sse(self) -> float:
        return self.sse_history[-1] if self.sse_history else 0.0


@dataclass
class CollectiveCentroids:
    """IDF-selected centroids with their weights"""
    query_id: Optional[int]
    vectors: np.ndarray
    weights: np.ndarray
    nearest_tokens: Tuple[int, ...]
    source_indices: Tuple[int, ...] = ()

    def __len__(self):
        return len(self.nearest_tokens)


@dataclass
class TeacherLabelSet:
    """Soft labels of one training query"""
    query_id: int
    candidates: Tuple[int, ...]
    teacher_scores: np.ndarray
    target: RelevanceDistribution
    observed_positive: int

    def __post_init__(self):
        self.candidates = tuple(self.candidates)
        self.teacher_scores = np.asarray(self.teacher_scores, dtype=np.float64)
        if self.candidates.count(self.observed_positive) != 1:
            raise ValidationError(
                f"query {self.query_id}: candidates must contain the observed positive "
                f"{self.observed_positive} exactly once"
            )
        if self.target.candidates != self.candidates:
            raise ValidationError(f"query {self.query_id}: target is not aligned with candidates")

    @property
    def positive_index(self) -> int:
        return self.candidates.index(self.observed_positive)

    def __len__(self):
        return len(self.candidates)


# ═══════════════════════════════════════════════════════════════════════════════
# TRAINING
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TrainConfig:
    """Student training settings"""
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    seed: int = DEFAULT_TRAIN_SEED
    objective: Objective = Objective.KD_KL
    negatives_source: NegativesSource = NegativesSource.TOP100
    gradient_clip: Optional[float] = None

    def validate(self) -> "TrainConfig":
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must not be negative, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be positive, got {self.epochs}")
        if self.gradient_clip is not None and self.gradient_clip <= 0:
            raise ValidationError(f"gradient_clip must be positive, got {self.gradient_clip}")
        return self

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "objective": self.objective.value,
            "negatives_source": self.negatives_source.value,
            "gradient_clip": self.gradient_clip,
        }


@dataclass
class TrainReport:
    """Outcome of one training run"""
    epoch_losses: List[float]
    projection: Projection
    steps: int

    def __str__(self):
        first = self.epoch_losses[0] if self.epoch_losses else float("nan")
        last = self.epoch_losses[-1] if self.epoch_losses else float("nan")
        return f"{len(self.epoch_losses)} epochs, {self.steps} steps, loss {first:.5f} -> {last:.5f}"


# ═══════════════════════════════════════════════════════════════════════════════
# EVALUATION
# ═══════════════════════════════════════════════════════════════════════════════

class Qrels:
    """Graded relevance judgments, grades 0..3"""

    def __init__(self, judgments: Dict[Tuple[int, int], int] = None):
        self.judgments: Dict[Tuple[int, int], int] = {}
        self._by_query: Dict[int, Dict[int, int]] = {}
        for (qid, pid), grade in (judgments or {}).items():
            self.add(qid, pid, grade)

    def add(self, query_id: int, passage_id: int, grade: int):
        if not 0 <= grade <= MAX_GRADE:
            raise ValidationError(f"grade {grade} outside 0..{MAX_GRADE} for ({query_id}, {passage_id})")
        self.judgments[(query_id, passage_id)] = grade
        self._by_query.setdefault(query_id, {})[passage_id] = grade

    def grade(self, query_id: int, passage_id: int) -> int:
        return self.judgments.get((query_id, passage_id), 0)

    def for_query(self, query_id: int) -> Dict[int, int]:
        return dict(self._by_query.get(query_id, {}))

    def relevant(self, query_id: int, cutoff: int = 1) -> List[int]:
        return sorted(pid for pid, g in self._by_query.get(query_id, {}).items() if g >= cutoff)

    @property
    def query_ids(self) -> List[int]:
        return sorted(self._by_query)

    def __len__(self):
        return len(self.judgments)


@dataclass
class MetricsReport:
    """Aggregate and per-query effectiveness"""
    mrr_at_10: float
    ndcg_at_10: float
    recall_at_1000: float
    mrt_ms: float
    per_query: Dict[int, Dict[str, Optional[float]]] = field(default_factory=dict)
    label: str = ""

    def __str__(self):
        lines = [
            "═" * 50,
            f"📊 METRICS{': ' + self.label if self.label else ''}",
            "═" * 50,
            f"   Queries      : {len(self.per_query)}",
            f"   MRR@10       : {self.mrr_at_10:.4f}",
            f"   NDCG@10      : {self.ndcg_at_10:.4f}",
            f"   Recall@1000  : {self.recall_at_1000:.4f}",
            f"   MRT (ms)     : {self.mrt_ms:.3f}",
            "═" * 50,
        ]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "mrr_at_10": self.mrr_at_10,
            "ndcg_at_10": self.ndcg_at_10,
            "recall_at_1000": self.recall_at_1000,
            "mrt_ms": self.mrt_ms,
            "queries": len(self.per_query),
        }


@dataclass
class PrCurve:
    """Precision/recall of {score >= threshold} against {grade >= cutoff}"""
    cutoff: int
    points: List[Tuple[float, float, float]]   # (threshold, precision, recall)
    label: str = ""

    @property
    def thresholds(self) -> List[float]:
        return [t for t, _, _ in self.points]

    @property
    def precisions(self) -> List[float]:
        return [p for _, p, _ in self.points]

    @property
    def recalls(self) -> List[float]:
        return [r for _, _, r in self.points]


@dataclass
class SweepRow:
    """One configuration of the one-at-a-time sweep"""
    config: PrfConfig
    ndcg_at_10: float
    recall_at_1k: float
    varied: Optional[str] = None     # None for the default row


@dataclass
class SweepResult:
    rows: List[SweepRow]

    @property
    def default(self) -> SweepRow:
        return next(row for row in self.rows if row.varied is None)

    def __str__(self):
        lines = [f"{'varied':<8} {'f_p':>4} {'f_c':>4} {'f_e':>4} {'beta':>5} {'NDCG@10':>8} {'R@1k':>7}"]
        for row in self.rows:
            c = row.config
            lines.append(
                f"{row.varied or 'default':<8} {c.f_p:>4} {c.f_c:>4} {c.f_e:>4} {c.beta:>5.2f} "
                f"{row.ndcg_at_10:>8.4f} {row.recall_at_1k:>7.4f}"
            )
        return "\n".join(lines)


