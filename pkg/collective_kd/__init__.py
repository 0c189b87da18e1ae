"""
Collective KD
Late-interaction passage retrieval with collective-teacher distillation

Usage:
    from collective_kd import (
        Vocabulary, EmbeddingProviderConfig, Projection, EncodingCounter, PrfConfig,
        build_corpus, build_idf, build_index, annotate_queries, train_student,
    )

    vocab = Vocabulary()
    corpus = build_corpus(read_tsv("corpus.tsv"), vocab)
    counter = EncodingCounter()
    index = build_index(corpus, provider, theta, counter)
    labels, skipped = annotate_queries(queries, index, build_idf(corpus),
                                       PrfConfig(), qrels, seed=0, counter=counter)
    report = train_student(labels, store, init_student(snapshot), TrainConfig())
"""

from .models import (
    ProviderKind,
    EncodingRole,
    Objective,
    NegativesSource,
    Strategy,
    Token,
    Vocabulary,
    RawEmbeddingMatrix,
    EmbeddingProviderConfig,
    EncodingCounter,
    Corpus,
    IdfTable,
    Ranking,
    Projection,
    EncodedQuery,
    EncodedPassage,
    RelevanceDistribution,
    ParameterSnapshot,
    PrfConfig,
    CentroidSet,
    CollectiveCentroids,
    TeacherLabelSet,
    TrainConfig,
    TrainReport,
    Qrels,
    MetricsReport,
    PrCurve,
    SweepRow,
    SweepResult,
)

from .errors import (
    CollectiveKDError,
    ValidationError,
    FormatError,
    DimensionMismatchError,
    EmptyInputError,
    InsufficientPointsError,
    UnknownIdError,
)

from .embeddings import (
    tokenize,
    read_tsv,
    build_corpus,
    encode_raw,
    RawEmbeddingStore,
    read_embedding_file,
    write_embedding_file,
)

from .index import (
    EncodedIndex,
    build_idf,
    build_index,
    retrieve,
    feedback_passages,
    rank_queries,
    save_index,
    load_index,
    write_run,
    read_run,
)

from .relevance import (
    maxsim,
    softmax_distribution,
    kl_divergence,
    hard_loss,
    grad_kd_loss,
    grad_hard_loss,
)

from .collective import (
    kmeans,
    extract_centroids,
    select_by_idf,
    teacher_score,
    mine_hard_negatives,
    annotate,
    annotate_queries,
)

from .distill import (
    init_student,
    train_student,
    residual_gap,
    pretrain,
    read_checkpoint,
    write_checkpoint,
)

from .evalkit import (
    read_qrels,
    mrr_at_k,
    ndcg_at_k,
    recall_at_k,
    measure_mrt,
    pr_curve,
    sweep,
    evaluate,
)

from .config import PipelineConfig, load_config

__version__ = "0.3.0"
__all__ = [
    # Models
    "ProviderKind",
    "EncodingRole",
    "Objective",
    "NegativesSource",
    "Strategy",
    "Token",
    "Vocabulary",
    "RawEmbeddingMatrix",
    "EmbeddingProviderConfig",
    "EncodingCounter",
    "Corpus",
    "IdfTable",
    "Ranking",
    "Projection",
    "EncodedQuery",
    "EncodedPassage",
    "RelevanceDistribution",
    "ParameterSnapshot",
    "PrfConfig",
    "CentroidSet",
    "CollectiveCentroids",
    "TeacherLabelSet",
    "TrainConfig",
    "TrainReport",
    "Qrels",
    "MetricsReport",
    "PrCurve",
    "SweepRow",
    "SweepResult",
    # Errors
    "CollectiveKDError",
    "ValidationError",
    "FormatError",
    "DimensionMismatchError",
    "EmptyInputError",
    "InsufficientPointsError",
    "UnknownIdError",
    # Embeddings
    "tokenize",
    "read_tsv",
    "build_corpus",
    "encode_raw",
    "RawEmbeddingStore",
    "read_embedding_file",
    "write_embedding_file",
    # Index
    "EncodedIndex",
    "build_idf",
    "build_index",
    "retrieve",
    "feedback_passages",
    "rank_queries",
    "save_index",
    "load_index",
    "write_run",
    "read_run",
    # Relevance
    "maxsim",
    "softmax_distribution",
    "kl_divergence",
    "hard_loss",
    "grad_kd_loss",
    "grad_hard_loss",
    # Collective teacher
    "kmeans",
    "extract_centroids",
    "select_by_idf",
    "teacher_score",
    "mine_hard_negatives",
    "annotate",
    "annotate_queries",
    # Distillation
    "init_student",
    "train_student",
    "residual_gap",
    "pretrain",
    "read_checkpoint",
    "write_checkpoint",
    # Evaluation
    "read_qrels",
    "mrr_at_k",
    "ndcg_at_k",
    "recall_at_k",
    "measure_mrt",
    "pr_curve",
    "sweep",
    "evaluate",
    # Config
    "PipelineConfig",
    "load_config",
]
