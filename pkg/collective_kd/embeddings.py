"""
Collective KD - Token Embeddings

Raw (pre-projection) token embeddings come from one of two providers:

- hashed_deterministic: each surface gets a unit base vector drawn from a
  generator seeded by SHA-256(seed || surface); rows are then mixed with the
  mean of their neighbours' base vectors for cheap contextualization.
- file_backed: matrices are looked up by record id in embedding files
  (one for passages, optionally one for queries).

Every encode_raw call bumps the EncodingCounter by exactly one.
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .codec import read_embedding_file, token_seed, write_embedding_file
from .errors import DimensionMismatchError, EmptyInputError, FormatError, UnknownIdError, ValidationError
from .models import (
    Corpus, EmbeddingProviderConfig, EncodingCounter, EncodingRole,
    ProviderKind, RawEmbeddingMatrix, Token, Vocabulary,
)

logger = logging.getLogger("collective_kd.embeddings")

__all__ = [
    "tokenize", "read_tsv", "tokenize_records", "build_corpus",
    "HashedProvider", "FileBackedProvider", "get_provider", "encode_raw",
    "RawEmbeddingStore", "read_embedding_file", "write_embedding_file",
]


# ═══════════════════════════════════════════════════════════════════════════════
# TEXT INPUT
# ═══════════════════════════════════════════════════════════════════════════════

def tokenize(text: str) -> List[str]:
    """Lowercase + whitespace split"""
    return text.lower().split()


def read_tsv(path) -> List[Tuple[int, str]]:
    """
    Read `id<TAB>text` records

    Blank lines and `#` comment lines are skipped.

    Raises:
        FormatError: malformed line (reported with its line number)
    """
    records = []
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise FormatError(f"{path}:{number}: expected 'id<TAB>text'")
            try:
                record_id = int(parts[0])
            except ValueError:
                raise FormatError(f"{path}:{number}: id {parts[0]!r} is not an integer") from None
            if record_id < 0:
                raise FormatError(f"{path}:{number}: id {record_id} is negative")
            if record_id in seen:
                raise FormatError(f"{path}:{number}: duplicate id {record_id}")
            if not tokenize(parts[1]):
                raise FormatError(f"{path}:{number}: record {record_id} has no tokens")
            seen.add(record_id)
            records.append((record_id, parts[1]))
    return records


def tokenize_records(records: Iterable[Tuple[int, str]], vocab: Vocabulary) -> Dict[int, Tuple[Token, ...]]:
    return {record_id: vocab.intern_all(tokenize(text)) for record_id, text in records}


def build_corpus(records: Iterable[Tuple[int, str]], vocab: Vocabulary) -> Corpus:
    passages = tokenize_records(records, vocab)
    if not passages:
        raise EmptyInputError("corpus is empty")
    return Corpus(passages)


# ═══════════════════════════════════════════════════════════════════════════════
# PROVIDERS
# ═══════════════════════════════════════════════════════════════════════════════

@lru_cache(maxsize=65536)
def _base_vector(seed: int, surface: str, dim_in: int) -> np.ndarray:
    rng = np.random.default_rng(token_seed(seed, surface))
    vector = rng.standard_normal(dim_in)
    vector /= np.linalg.norm(vector)
    vector.setflags(write=False)
    return vector


class HashedProvider:
    """
    Seeded desk-scale stand-in for a contextual encoder

    Output is a pure function of (token surfaces, dim_in, seed, context_window).
    """

    def __init__(self, cfg: EmbeddingProviderConfig):
        self.cfg = cfg.validate()

    def base_vector(self, surface: str) -> np.ndarray:
        return _base_vector(self.cfg.seed, surface, self.cfg.dim_in)

    def encode(self, tokens: Sequence[Token], role: EncodingRole = EncodingRole.PASSAGE,
               record_id: Optional[int] = None) -> RawEmbeddingMatrix:
        base = np.stack([self.base_vector(t.surface) for t in tokens])
        window = self.cfg.context_window
        n = base.shape[0]
        if window == 0 or n == 1:
            return RawEmbeddingMatrix(base)

        # window sums via prefix sums, minus the token itself
        prefix = np.vstack([np.zeros((1, base.shape[1])), np.cumsum(base, axis=0)])
        idx = np.arange(n)
        lo = np.maximum(idx - window, 0)
        hi = np.minimum(idx + window, n - 1)
        sums = prefix[hi + 1] - prefix[lo] - base
        counts = (hi - lo)[:, None]

        mixed = self.cfg.self_weight * base + self.cfg.neighbor_weight * sums / counts
        return RawEmbeddingMatrix(mixed)

    def static_vectors(self, corpus: Corpus) -> Dict[int, np.ndarray]:
        """Context-free encoding of every corpus token"""
        surfaces = {t.id: t.surface for tokens in corpus.passages.values() for t in tokens}
        return {tid: self.base_vector(surfaces[tid]) for tid in sorted(surfaces)}


class FileBackedProvider:
    """
    Embeddings ingested from embedding files

    Passages are looked up in `cfg.path`, queries in `cfg.query_path`
    (falling back to `cfg.path` when no query file is configured).
    """

    def __init__(self, cfg: EmbeddingProviderConfig):
        self.cfg = cfg.validate()
        self._tables: Dict[EncodingRole, Dict[int, RawEmbeddingMatrix]] = {}

    def _table(self, role: EncodingRole) -> Dict[int, RawEmbeddingMatrix]:
        if role not in self._tables:
            path = self.cfg.query_path if role == EncodingRole.QUERY and self.cfg.query_path else self.cfg.path
            table = {}
            for record_id, matrix in read_embedding_file(path):
                if matrix.dim_in != self.cfg.dim_in:
                    raise DimensionMismatchError(
                        f"{path}: entry {record_id} has dim {matrix.dim_in}, provider expects {self.cfg.dim_in}"
                    )
                table[record_id] = matrix
            logger.info(f"Loaded {len(table)} {role.value} embeddings from {path}")
            self._tables[role] = table
        return self._tables[role]

    def encode(self, tokens: Sequence[Token], role: EncodingRole = EncodingRole.PASSAGE,
               record_id: Optional[int] = None) -> RawEmbeddingMatrix:
        if record_id is None:
            raise ValidationError("file_backed provider needs a record id")
        matrix = self._table(role).get(record_id)
        if matrix is None:
            raise UnknownIdError(f"no {role.value} embedding for id {record_id}")
        if matrix.token_count != len(tokens):
            raise DimensionMismatchError(
                f"{role.value} {record_id}: file has {matrix.token_count} rows for {len(tokens)} tokens"
            )
        return matrix

    def static_vectors(self, corpus: Corpus) -> Dict[int, np.ndarray]:
        """Mean raw occurrence vector of every corpus token"""
        sums: Dict[int, np.ndarray] = {}
        counts: Dict[int, int] = {}
        for pid, tokens in corpus.passages.items():
            matrix = self.encode(tokens, EncodingRole.PASSAGE, pid)
            for row, token in zip(matrix.values, tokens):
                if token.id in sums:
                    sums[token.id] = sums[token.id] + row
                else:
                    sums[token.id] = row.copy()
                counts[token.id] = counts.get(token.id, 0) + 1
        return {tid: sums[tid] / counts[tid] for tid in sorted(sums)}


_PROVIDERS = {
    ProviderKind.HASHED: HashedProvider,
    ProviderKind.FILE: FileBackedProvider,
}


@lru_cache(maxsize=16)
def get_provider(cfg: EmbeddingProviderConfig):
    """Shared provider instance per config (providers are immutable)"""
    return _PROVIDERS[cfg.kind](cfg)


def encode_raw(tokens: Sequence[Token], cfg: EmbeddingProviderConfig,
               counter: Optional[EncodingCounter] = None,
               role: EncodingRole = EncodingRole.PASSAGE,
               record_id: Optional[int] = None) -> RawEmbeddingMatrix:
    """
    Encode one text into its raw token matrix

    Args:
        tokens: Token sequence of the text
        cfg: Provider configuration
        counter: Incremented by exactly one for `role` (None: untracked)
        role: query or passage
        record_id: Record id, required by the file-backed provider

    Returns:
        One row per token
    """
    if not tokens:
        raise EmptyInputError("empty input")
    matrix = get_provider(cfg).encode(tokens, role, record_id)
    if counter is not None:
        counter.record(role)
    return matrix


# ═══════════════════════════════════════════════════════════════════════════════
# RAW STORE (TRAINING)
# ═══════════════════════════════════════════════════════════════════════════════

class RawEmbeddingStore:
    """
    Raw matrices of queries and passages, keyed by (role, id)

    Built once so training never re-encodes a text.
    """

    def __init__(self):
        self._entries: Dict[Tuple[EncodingRole, int], RawEmbeddingMatrix] = {}

    @classmethod
    def build(cls, cfg: EmbeddingProviderConfig,
              passages: Dict[int, Sequence[Token]],
              queries: Dict[int, Sequence[Token]]) -> "RawEmbeddingStore":
        store = cls()
        for pid, tokens in passages.items():
            store.add(EncodingRole.PASSAGE, pid, encode_raw(tokens, cfg, None, EncodingRole.PASSAGE, pid))
        for qid, tokens in queries.items():
            store.add(EncodingRole.QUERY, qid, encode_raw(tokens, cfg, None, EncodingRole.QUERY, qid))
        logger.debug(f"Raw store: {len(passages)} passages, {len(queries)} queries")
        return store

    def add(self, role: EncodingRole, record_id: int, matrix: RawEmbeddingMatrix):
        self._entries[(role, record_id)] = matrix

    def get(self, role: EncodingRole, record_id: int) -> RawEmbeddingMatrix:
        matrix = self._entries.get((role, record_id))
        if matrix is None:
            raise UnknownIdError(f"{role.value} {record_id} is not in the raw embedding store")
        return matrix

    def query(self, query_id: int) -> RawEmbeddingMatrix:
        return self.get(EncodingRole.QUERY, query_id)

    def passage(self, passage_id: int) -> RawEmbeddingMatrix:
        return self.get(EncodingRole.PASSAGE, passage_id)

    def __contains__(self, key: Tuple[EncodingRole, int]):
        return key in self._entries

    def __len__(self):
        return len(self._entries)


def export_embeddings(path, cfg: EmbeddingProviderConfig, records: Dict[int, Sequence[Token]],
                      role: EncodingRole = EncodingRole.PASSAGE):
    """Write provider output for `records` as an embedding file"""
    entries = [(rid, encode_raw(tokens, cfg, None, role, rid)) for rid, tokens in sorted(records.items())]
    write_embedding_file(entries, Path(path), cfg.dim_in)
    logger.info(f"Wrote {len(entries)} {role.value} embeddings to {path}")
