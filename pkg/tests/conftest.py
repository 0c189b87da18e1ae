"""Shared fixtures: small provider configs, a tiny corpus and synthetic datasets."""

import numpy as np
import pytest

from collective_kd.embeddings import build_corpus, tokenize_records
from collective_kd.index import build_idf, build_index
from collective_kd.models import EmbeddingProviderConfig, Projection, Vocabulary
from collective_kd.synthetic import generate, write_dataset


TINY_PASSAGES = [
    (0, "the quick brown fox jumps"),
    (1, "a lazy dog sleeps in the sun"),
    (2, "brown bears eat honey"),
    (3, "the fox and the dog"),
    (4, "honey bees make honey"),
    (5, "quick thinking saves the day"),
]


@pytest.fixture
def provider_cfg():
    return EmbeddingProviderConfig(dim_in=16, seed=5, context_window=1)


@pytest.fixture
def flat_cfg():
    """No context mixing: every token row is its base vector"""
    return EmbeddingProviderConfig(dim_in=16, seed=5, context_window=0)


@pytest.fixture
def vocab():
    return Vocabulary()


@pytest.fixture
def tiny_corpus(vocab):
    return build_corpus(TINY_PASSAGES, vocab)


@pytest.fixture
def tiny_index(tiny_corpus, provider_cfg):
    return build_index(tiny_corpus, provider_cfg, Projection.random(8, provider_cfg.dim_in, seed=1))


@pytest.fixture
def small_dataset():
    """8 queries, 68 passages"""
    return generate(seed=3, n_queries=8, planted_per_query=3, decoys_per_query=1, background_passages=20)


@pytest.fixture
def small_setup(small_dataset):
    """Index, IDF and tokenized queries over the small synthetic dataset"""
    vocab = Vocabulary()
    corpus = build_corpus(small_dataset.passages.items(), vocab)
    queries = tokenize_records(small_dataset.queries.items(), vocab)
    cfg = EmbeddingProviderConfig(dim_in=16, seed=11, context_window=1)
    index = build_index(corpus, cfg, Projection.random(8, 16, seed=2))
    return {
        "corpus": corpus,
        "queries": queries,
        "provider": cfg,
        "index": index,
        "idf": build_idf(corpus),
        "train_qrels": small_dataset.train_qrels,
        "eval_qrels": small_dataset.eval_qrels,
    }


@pytest.fixture
def synthetic_config(tmp_path):
    """Default synthetic dataset on disk; returns the config path"""
    return write_dataset(generate(seed=0), tmp_path / "data", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)

