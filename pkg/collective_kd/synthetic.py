"""
Collective KD - Synthetic Dataset

Corpus with unlabeled positives. Each query is `head asked1 asked2` and owns
a few unasked terms that only its on-topic passages use. For every query:

- labeled positive (grade 3, the only training judgment): every query term
  plus every unasked term
- planted positives (grade 2-3, evaluation only): the head, one asked term
  and every unasked term twice
- decoys (grade 0): the head and one asked term in background text, so they
  match the query exactly as well as a planted positive does
- related passage (grade 1): one asked term in background text

Planted positives and decoys tie under plain MaxSim; only the unasked terms
they share with the labeled passage tell them apart. Background filler pads
the corpus; every passage carries stopwords.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Set, Tuple

import numpy as np

from .constants import DEFAULT_BETA, DEFAULT_F_C, DEFAULT_F_E
from .evalkit import write_qrels
from .models import Qrels

logger = logging.getLogger("collective_kd.synthetic")

STOPWORDS = ("the", "of", "and", "a", "in", "to", "is", "for")
_SYLLABLES = (
    "ka", "lo", "mi", "ten", "sor", "vu", "ra", "bel", "dor", "fi", "gan", "hu",
    "ir", "jo", "ne", "pa", "qui", "ru", "sa", "ti", "mor", "zel", "op", "ul",
)

# [prf] values of the bundled config
SYNTHETIC_F_P = 10
SYNTHETIC_NEGATIVES_PER_QUERY = 48

CORPUS_FILE = "corpus.tsv"
QUERIES_FILE = "queries.tsv"
TRAIN_QRELS_FILE = "qrels.train.tsv"
EVAL_QRELS_FILE = "qrels.eval.tsv"
CONFIG_FILE = "config.toml"


@dataclass
class QueryPlan:
    """Which passages play which role for one query"""
    labeled: int
    planted: List[int]
    related: int
    decoys: List[int]
    unasked: Tuple[str, ...] = ()

    @property
    def passages(self) -> List[int]:
        return [self.labeled, *self.planted, self.related, *self.decoys]


@dataclass
class SyntheticDataset:
    passages: Dict[int, str]
    queries: Dict[int, str]
    train_qrels: Qrels
    eval_qrels: Qrels
    plans: Dict[int, QueryPlan] = field(default_factory=dict)

    @property
    def planted(self) -> Dict[int, Set[int]]:
        return {qid: set(plan.planted) for qid, plan in self.plans.items()}

    def __str__(self):
        return f"{len(self.passages)} passages, {len(self.queries)} queries, {len(self.eval_qrels)} judgments"


def _vocabulary(rng: np.random.Generator, count: int, taken: Set[str]) -> List[str]:
    words = []
    while len(words) < count:
        word = "".join(rng.choice(_SYLLABLES, size=int(rng.integers(2, 4))))
        if word not in taken and word not in STOPWORDS:
            taken.add(word)
            words.append(word)
    return words


def generate(seed: int = 0, n_queries: int = 50, unasked_terms: int = 4,
             planted_per_query: int = 5, decoys_per_query: int = 10,
             background_passages: int = 100, background_terms: int = 300,
             passage_length: int = 28) -> SyntheticDataset:
    """
    Build a synthetic dataset

    Defaults give 50 queries and 950 passages of `passage_length` tokens,
    enough for a single feedback passage to feed 24 clusters.
    """
    rng = np.random.default_rng(seed)
    taken: Set[str] = set()
    terms = [_vocabulary(rng, 3 + unasked_terms, taken) for _ in range(n_queries)]
    background = _vocabulary(rng, background_terms, taken)

    def text(words: List[str]) -> str:
        pad = max(passage_length - len(words) - 3, 0)
        words = list(words) + list(rng.choice(background, size=pad)) + list(rng.choice(STOPWORDS, size=3))
        return " ".join(rng.permutation(words))

    bodies: List[str] = []
    roles: List[Tuple[int, str]] = []       # (query id or -1, role)
    queries: Dict[int, str] = {}

    for qid in range(n_queries):
        head, *asked = terms[qid][:3]
        unasked = terms[qid][3:]
        queries[qid] = " ".join([head] + asked)

        bodies.append(text([head] + asked + unasked))
        roles.append((qid, "labeled"))
        for _ in range(planted_per_query):
            bodies.append(text([head, asked[int(rng.integers(2))]] + unasked + unasked))
            roles.append((qid, "planted"))
        for _ in range(decoys_per_query):
            bodies.append(text([head, asked[int(rng.integers(2))]]))
            roles.append((qid, "decoy"))
        bodies.append(text([asked[int(rng.integers(2))]]))
        roles.append((qid, "related"))

    for _ in range(background_passages):
        bodies.append(text([]))
        roles.append((-1, "background"))

    # shuffle ids so passage order carries no signal
    pids = rng.permutation(len(bodies)).tolist()
    passages = {pid: body for pid, body in sorted(zip(pids, bodies))}

    train, evaluation = Qrels(), Qrels()
    plans: Dict[int, QueryPlan] = {}
    found: Dict[int, Dict[str, List[int]]] = {}
    for pid, (qid, role) in zip(pids, roles):
        if qid >= 0:
            found.setdefault(qid, {}).setdefault(role, []).append(pid)

    for qid in sorted(found):
        slots = found[qid]
        labeled = slots["labeled"][0]
        train.add(qid, labeled, 3)
        evaluation.add(qid, labeled, 3)
        for pid in slots.get("planted", []):
            evaluation.add(qid, pid, int(rng.integers(2, 4)))
        evaluation.add(qid, slots["related"][0], 1)
        for pid in slots.get("decoy", []):
            evaluation.add(qid, pid, 0)
        plans[qid] = QueryPlan(labeled, sorted(slots.get("planted", [])), slots["related"][0],
                               sorted(slots.get("decoy", [])), tuple(terms[qid][3:]))

    dataset = SyntheticDataset(passages, queries, train, evaluation, plans)
    logger.info(f"Generated synthetic dataset: {dataset}")
    return dataset


def planted_from_qrels(train: Qrels, evaluation: Qrels, cutoff: int = 2) -> Dict[int, Set[int]]:
    """Evaluation positives (grade >= cutoff) that carry no training judgment"""
    return {
        qid: {pid for pid in evaluation.relevant(qid, cutoff) if (qid, pid) not in train.judgments}
        for qid in evaluation.query_ids
    }


def _write_tsv(path: Path, records: Dict[int, str]):
    with open(path, "w", encoding="utf-8") as handle:
        for record_id, body in sorted(records.items()):
            handle.write(f"{record_id}\t{body}\n")


def write_dataset(dataset: SyntheticDataset, directory, seed: int = 0) -> Path:
    """
    Write corpus, queries, both qrels files and a ready-to-run config.toml

    Returns:
        Path of the written config
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_tsv(directory / CORPUS_FILE, dataset.passages)
    _write_tsv(directory / QUERIES_FILE, dataset.queries)
    write_qrels(directory / TRAIN_QRELS_FILE, dataset.train_qrels)
    write_qrels(directory / EVAL_QRELS_FILE, dataset.eval_qrels)

    config = directory / CONFIG_FILE
    config.write_text(
        "# synthetic collective-kd run; paths are relative to this file\n"
        "[paths]\n"
        f'corpus = "{CORPUS_FILE}"\n'
        f'queries = "{QUERIES_FILE}"\n'
        f'qrels = "{TRAIN_QRELS_FILE}"\n'
        f'eval_qrels = "{EVAL_QRELS_FILE}"\n'
        'output = "out"\n'
        "\n[prf]\n"
        f"f_p = {SYNTHETIC_F_P}\nf_c = {DEFAULT_F_C}\nf_e = {DEFAULT_F_E}\nbeta = {DEFAULT_BETA}\n"
        f"negatives_per_query = {SYNTHETIC_NEGATIVES_PER_QUERY}\n"
        "\n[run]\n"
        f"seed = {seed}\n",
        encoding="utf-8",
    )
    logger.info(f"Wrote synthetic dataset to {directory}")
    return config
