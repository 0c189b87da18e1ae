"""
Collective KD - Encoded Index and Exact Retrieval
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .codec import (
    build_checkpoint, parse_checkpoint, provenance_line, read_embedding_file,
    strip_provenance, write_embedding_file, write_sidecar,
)
from .constants import (
    INDEX_IDF, INDEX_MANIFEST, INDEX_PASSAGES, INDEX_PROJECTION,
    INDEX_STATIC_TOKENS, INDEX_VOCAB, NORM_FLOOR,
)
from .embeddings import encode_raw, get_provider
from .errors import DimensionMismatchError, EmptyInputError, FormatError, UnknownIdError, ValidationError
from .models import (
    Corpus, EmbeddingProviderConfig, EncodedPassage, EncodedQuery, EncodingCounter,
    EncodingRole, IdfTable, ProviderKind, Projection, Ranking, RawEmbeddingMatrix,
    Token, Vocabulary,
)
from .relevance import encode_query, project_rows

logger = logging.getLogger("collective_kd.index")


class EncodedIndex:
    """
    Projected passage token rows plus context-free token vectors

    Passage rows are stored concatenated in ascending passage-id order so a
    query scores the whole corpus with one matrix product. The index is
    immutable after construction and safe to share between threads.

    Usage:
        index = build_index(corpus, provider_cfg, projection, counter)
        query = index.encode_query(qid, tokens, counter)
        ranking = retrieve(query, index, depth=100)
    """

    def __init__(self, passages: Mapping[int, np.ndarray], static_vectors: Mapping[int, np.ndarray],
                 projection: Projection, provider: EmbeddingProviderConfig):
        if not passages:
            raise EmptyInputError("index needs at least one passage")
        self.projection = projection
        self.provider = provider

        self._pids = np.array(sorted(passages), dtype=np.int64)
        blocks = [np.asarray(passages[pid], dtype=np.float64) for pid in self._pids.tolist()]
        dims = {block.shape[1] for block in blocks}
        if len(dims) != 1:
            raise DimensionMismatchError(f"passages have mixed dims {sorted(dims)}")
        self._dim_out = dims.pop()

        lengths = np.array([block.shape[0] for block in blocks], dtype=np.int64)
        self._offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        self._rows = np.vstack(blocks)
        self._rows.setflags(write=False)
        self._entries = {
            pid: EncodedPassage(pid, self._rows[start:start + length])
            for pid, start, length in zip(self._pids.tolist(), self._offsets.tolist(), lengths.tolist())
        }

        self._static_ids = np.array(sorted(static_vectors), dtype=np.int64)
        if self._static_ids.size:
            self._static = np.vstack([static_vectors[tid] for tid in self._static_ids.tolist()])
            if self._static.shape[1] != self._dim_out:
                raise DimensionMismatchError(
                    f"static token dim {self._static.shape[1]} does not match passage dim {self._dim_out}"
                )
        else:
            self._static = np.zeros((0, self._dim_out))
        self._static.setflags(write=False)

    # ─────────────────────────────────────────────────────────────────────────
    # PROPERTIES
    # ─────────────────────────────────────────────────────────────────────────

    @property
    def dim_out(self) -> int:
        return self._dim_out

    @property
    def passage_ids(self) -> List[int]:
        return self._pids.tolist()

    @property
    def entries(self) -> Mapping[int, EncodedPassage]:
        return self._entries

    @property
    def static_token_ids(self) -> np.ndarray:
        return self._static_ids

    @property
    def static_matrix(self) -> np.ndarray:
        """Unit rows aligned with static_token_ids"""
        return self._static

    @property
    def static_token_vectors(self) -> Dict[int, np.ndarray]:
        return {tid: row for tid, row in zip(self._static_ids.tolist(), self._static)}

    def __len__(self):
        return len(self._pids)

    def __contains__(self, passage_id: int):
        return passage_id in self._entries

    # ─────────────────────────────────────────────────────────────────────────
    # ACCESS
    # ─────────────────────────────────────────────────────────────────────────

    def passage(self, passage_id: int) -> EncodedPassage:
        entry = self._entries.get(passage_id)
        if entry is None:
            raise UnknownIdError(f"passage {passage_id} is not in the index")
        return entry

    def encode_query(self, query_id: int, tokens: Sequence[Token],
                     counter: Optional[EncodingCounter] = None) -> EncodedQuery:
        """Encode a query with the index's provider and projection"""
        raw = encode_raw(tokens, self.provider, counter, EncodingRole.QUERY, query_id)
        return encode_query(self.projection, query_id, raw)

    def score_all(self, query_rows: np.ndarray) -> np.ndarray:
        """MaxSim of the query against every passage, aligned with passage_ids"""
        if query_rows.shape[1] != self._dim_out:
            raise DimensionMismatchError(f"query dim {query_rows.shape[1]} does not match index dim {self._dim_out}")
        sim = query_rows @ self._rows.T
        per_passage = np.maximum.reduceat(sim, self._offsets, axis=1)
        return per_passage.sum(axis=0)


# ═══════════════════════════════════════════════════════════════════════════════
# BUILD
# ═══════════════════════════════════════════════════════════════════════════════

def build_idf(corpus: Corpus) -> IdfTable:
    """idf(t) = ln((N + 1) / (df(t) + 1))"""
    if corpus.passage_count == 0:
        raise EmptyInputError("corpus is empty")
    n = corpus.passage_count
    return IdfTable({tid: math.log((n + 1) / (df + 1)) for tid, df in sorted(corpus.doc_freq.items())})


def _normalize(vector: np.ndarray) -> np.ndarray:
    return vector / max(float(np.linalg.norm(vector)), NORM_FLOOR)


def build_index(corpus: Corpus, provider: EmbeddingProviderConfig, projection: Projection,
                counter: Optional[EncodingCounter] = None) -> EncodedIndex:
    """
    Encode every passage once and project it with W

    Args:
        corpus: Tokenized passages
        provider: Raw embedding provider
        projection: W; dim_in must match the provider
        counter: Receives exactly |P| passage encodings

    Returns:
        EncodedIndex with static token vectors for every corpus token
    """
    if projection.dim_in != provider.dim_in:
        raise DimensionMismatchError(
            f"projection dim_in {projection.dim_in} does not match provider dim_in {provider.dim_in}"
        )
    if corpus.passage_count == 0:
        raise EmptyInputError("corpus is empty")

    rows = {}
    for pid in sorted(corpus.passages):
        raw = encode_raw(corpus.passages[pid], provider, counter, EncodingRole.PASSAGE, pid)
        rows[pid] = project_rows(projection, raw)

    statics = {
        tid: _normalize(projection.weights @ vector)
        for tid, vector in get_provider(provider).static_vectors(corpus).items()
    }
    logger.info(f"Indexed {len(rows)} passages, {len(statics)} vocabulary tokens, dim {projection.dim_out}")
    return EncodedIndex(rows, statics, projection, provider)


# ═══════════════════════════════════════════════════════════════════════════════
# RETRIEVAL
# ═══════════════════════════════════════════════════════════════════════════════

def retrieve(query: EncodedQuery, index: EncodedIndex, depth: int) -> Ranking:
    """
    Exact top-`depth` ranking by MaxSim

    Ties are broken by ascending passage id.
    """
    if depth < 1:
        raise ValidationError(f"depth must be >= 1, got {depth}")
    scores = index.score_all(query.rows)
    pids = index._pids
    order = np.lexsort((pids, -scores))[:depth]
    items = [(int(pids[i]), float(scores[i])) for i in order]
    return Ranking(query.query_id, items, depth)


def retrieve_many(queries: Sequence[EncodedQuery], index: EncodedIndex, depth: int,
                  threads: int = 1) -> List[Ranking]:
    """retrieve for each query; output order follows input order"""
    if threads <= 1:
        return [retrieve(q, index, depth) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: retrieve(q, index, depth), queries))


def rank_queries(index: EncodedIndex, queries: Mapping[int, Sequence[Token]], depth: int,
                 counter: Optional[EncodingCounter] = None, threads: int = 1) -> List[Ranking]:
    """Encode each query once and rank the corpus, in ascending query-id order"""
    encoded = [index.encode_query(qid, queries[qid], counter) for qid in sorted(queries)]
    return retrieve_many(encoded, index, depth, threads)


def feedback_passages(ranking: Ranking, f_p: int) -> List[int]:
    """The top-f_p passages of a ranking, order preserved"""
    if f_p < 1:
        raise ValidationError(f"f_p must be positive, got {f_p}")
    if f_p > len(ranking.items):
        raise ValidationError(f"f_p={f_p} exceeds ranking length {len(ranking.items)}")
    return ranking.passage_ids[:f_p]


# ═══════════════════════════════════════════════════════════════════════════════
# RUN FILES
# ═══════════════════════════════════════════════════════════════════════════════

def write_run(path, rankings: Iterable[Ranking], tag: str, meta: Optional[dict] = None):
    """TREC run file: `qid Q0 pid rank score tag`"""
    with open(path, "w", encoding="utf-8") as handle:
        for ranking in rankings:
            for rank, (pid, score) in enumerate(ranking.items, 1):
                handle.write(f"{ranking.query_id} Q0 {pid} {rank} {score:.6f} {tag}\n")
    if meta is not None:
        write_sidecar(path, meta)


def read_run(path) -> Dict[int, Ranking]:
    per_query: Dict[int, List[Tuple[int, int, float]]] = {}
    with open(path, encoding="utf-8") as handle:
        for number, line in strip_provenance(handle):
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(f"{path}:{number}: expected 'qid Q0 pid rank score tag'")
            try:
                qid, pid, rank, score = int(parts[0]), int(parts[2]), int(parts[3]), float(parts[4])
            except ValueError:
                raise FormatError(f"{path}:{number}: malformed run line") from None
            per_query.setdefault(qid, []).append((rank, pid, score))
    return {
        qid: Ranking(qid, [(pid, score) for _, pid, score in sorted(rows)], len(rows))
        for qid, rows in sorted(per_query.items())
    }


# ═══════════════════════════════════════════════════════════════════════════════
# PERSISTENCE
# ═══════════════════════════════════════════════════════════════════════════════

def save_index(directory, index: EncodedIndex, vocab: Vocabulary, idf: IdfTable, meta: Optional[dict] = None):
    """
    Persist an index directory

    Layout: passages.crnk, static_tokens.crnk, vocab.tsv, idf.tsv,
    projection.crwt and manifest.json. No timestamps are written, so
    equal inputs give byte-identical directories.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})

    passages = [(pid, RawEmbeddingMatrix(entry.rows)) for pid, entry in index.entries.items()]
    write_embedding_file(passages, directory / INDEX_PASSAGES, index.dim_out)
    statics = [(tid, RawEmbeddingMatrix(row[None, :])) for tid, row in index.static_token_vectors.items()]
    write_embedding_file(statics, directory / INDEX_STATIC_TOKENS, index.dim_out)
    (directory / INDEX_PROJECTION).write_bytes(build_checkpoint(index.projection.weights))

    header = provenance_line(meta) + "\n" if meta else ""
    with open(directory / INDEX_VOCAB, "w", encoding="utf-8") as handle:
        handle.write(header)
        for tid, surface in enumerate(vocab.surfaces):
            handle.write(f"{tid}\t{surface}\n")
    with open(directory / INDEX_IDF, "w", encoding="utf-8") as handle:
        handle.write(header)
        for tid, value in sorted(idf.values.items()):
            handle.write(f"{tid}\t{value!r}\n")

    manifest = {
        **meta,
        "passages": len(index),
        "vocabulary": len(vocab),
        "dim_out": index.dim_out,
        "provider": index.provider.to_dict(),
    }
    (directory / INDEX_MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Saved index to {directory}")


def _read_pairs(path, cast) -> List[Tuple[int, object]]:
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for number, line in strip_provenance(handle):
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{number}: expected two tab-separated fields")
            try:
                pairs.append((int(parts[0]), cast(parts[1])))
            except ValueError:
                raise FormatError(f"{path}:{number}: malformed value") from None
    return pairs


def load_index(directory) -> Tuple[EncodedIndex, Vocabulary, IdfTable, dict]:
    """
    Load a directory written by save_index

    Returns:
        (index, vocabulary, idf table, manifest)
    """
    directory = Path(directory)
    manifest_path = directory / INDEX_MANIFEST
    if not manifest_path.exists():
        raise ValidationError(f"{directory} is not an index directory (no {INDEX_MANIFEST})")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    provider_meta = manifest["provider"]
    provider = EmbeddingProviderConfig(
        kind=ProviderKind(provider_meta["kind"]),
        dim_in=provider_meta["dim_in"],
        seed=provider_meta["seed"],
        context_window=provider_meta["context_window"],
        path=provider_meta.get("path"),
        query_path=provider_meta.get("query_path"),
    )
    projection = Projection(parse_checkpoint((directory / INDEX_PROJECTION).read_bytes()))
    passages = {pid: m.values for pid, m in read_embedding_file(directory / INDEX_PASSAGES)}
    statics = {tid: m.values[0] for tid, m in read_embedding_file(directory / INDEX_STATIC_TOKENS)}
    index = EncodedIndex(passages, statics, projection, provider)

    surfaces = [surface for _, surface in sorted(_read_pairs(directory / INDEX_VOCAB, str))]
    vocab = Vocabulary(surfaces)
    idf = IdfTable(dict(_read_pairs(directory / INDEX_IDF, float)))
    return index, vocab, idf, manifest
