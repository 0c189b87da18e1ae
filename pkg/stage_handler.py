"""
Collective KD Stage Handler - routes pipeline commands to library calls.

All retrieval/teacher/training logic lives in collective_kd/. This module
wraps it with one method per pipeline stage, each of which validates the
configuration first, then reads its inputs and persists its outputs with
provenance.
"""

import logging
import traceback
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from collective_kd.codec import provenance_line
from collective_kd.collective import annotate_queries, read_labels, rerank_with_teacher, write_labels
from collective_kd.config import PipelineConfig
from collective_kd.constants import HARD_NEGATIVE_POOL, PR_CUTOFFS, ExitCode
from collective_kd.distill import init_student, pretrain, read_checkpoint, train_student, write_checkpoint
from collective_kd.embeddings import RawEmbeddingStore, build_corpus, read_tsv, tokenize_records
from collective_kd.errors import DimensionMismatchError, UnknownIdError, ValidationError
from collective_kd.evalkit import (
    EvalSet, evaluate, measure_mrt, pr_curve, read_qrels, sweep,
    write_pr_curve_tsv, write_report_tsv, write_sweep_tsv,
)
from collective_kd.experiment import ComparisonSettings, compare_strategies
from collective_kd.index import (
    build_idf, build_index, load_index, rank_queries, read_run, retrieve, save_index, write_run,
)
from collective_kd.models import (
    EncodingCounter, ParameterSnapshot, Projection, Token, Vocabulary,
)
from collective_kd.synthetic import generate, planted_from_qrels, write_dataset

REPORT_FILE = "report.tsv"
SWEEP_FILE = "sweep.tsv"
COMPARE_FILE = "compare.txt"
PR_DIR = "pr"
LOSS_SUFFIX = ".loss.tsv"


class StageHandler:
    """Runs pipeline stages against one resolved configuration."""

    def __init__(self, config: Optional[PipelineConfig], emit: Callable[[str], None] = print):
        """
        Args:
            config: resolved pipeline configuration (None for gen-synthetic)
            emit: sink for human-readable results (stdout by default)
        """
        self.config = config
        self._emit = emit
        self._logger = logging.getLogger("collective_kd.stages")

    # ── helpers ────────────────────────────────────────────────────────────

    def _log(self, message: str, level: str = "info"):
        self._logger.log(logging.getLevelName(level.upper()), message)

    def _error(self, message: str):
        self._logger.error(message)

    @staticmethod
    def _prepare(path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _threads(self) -> int:
        return self.config.run.threads

    def _corpus(self, vocab: Vocabulary):
        return build_corpus(read_tsv(self.config.path("corpus")), vocab)

    def _queries(self, vocab: Vocabulary, only: Optional[Sequence[int]] = None) -> Dict[int, Tuple[Token, ...]]:
        queries = tokenize_records(read_tsv(self.config.path("queries")), vocab)
        if only is None:
            return queries
        missing = [qid for qid in only if qid not in queries]
        if missing:
            raise UnknownIdError(f"unknown query id {missing[0]}")
        return {qid: queries[qid] for qid in only}

    def _default_projection(self) -> Tuple[Projection, str]:
        theta = self.config.path("checkpoint")
        if theta.exists():
            projection, _ = read_checkpoint(theta)
            return projection, str(theta)
        cfg = self.config
        return Projection.random(cfg.projection.dim_out, cfg.provider.dim_in, cfg.projection.init_seed), "random-init"

    # ── public dispatch ───────────────────────────────────────────────────

    def handle(self, action: str, options: Optional[dict] = None) -> int:
        """Route a command to its stage; returns the process exit code."""
        options = options or {}
        stages = {
            "index": self.cmd_index,
            "rank": self.cmd_rank,
            "annotate": self.cmd_annotate,
            "pretrain": self.cmd_pretrain,
            "distill": self.cmd_distill,
            "eval": self.cmd_eval,
            "sweep": self.cmd_sweep,
            "pr": self.cmd_pr,
            "compare": self.cmd_compare,
            "gen-synthetic": self.cmd_gen_synthetic,
        }
        stage = stages.get(action)
        if stage is None:
            self._error(f"Unknown action: {action}")
            return ExitCode.VALIDATION
        try:
            stage(**options)
        except ValidationError as exc:
            self._error(f"{type(exc).__name__}: {exc}")
            return ExitCode.VALIDATION
        except Exception as exc:
            self._error(f"{type(exc).__name__}: {exc}")
            self._logger.debug(traceback.format_exc())
            return ExitCode.RUNTIME
        return ExitCode.OK

    # ── index / rank ──────────────────────────────────────────────────────

    def cmd_index(self, checkpoint: Optional[str] = None):
        """Encode the corpus and persist index, IDF table and static token vectors."""
        cfg = self.config.validate("index")
        if checkpoint is not None:
            if not Path(checkpoint).exists():
                raise ValidationError(f"index: checkpoint not found at {checkpoint}")
            projection, _ = read_checkpoint(checkpoint)
            source = checkpoint
        else:
            projection, source = self._default_projection()

        vocab = Vocabulary()
        corpus = self._corpus(vocab)
        counter = EncodingCounter()
        index = build_index(corpus, cfg.provider_config(), projection, counter)
        idf = build_idf(corpus)

        target = cfg.path("index")
        save_index(target, index, vocab, idf, cfg.provenance(projection=source, **counter.to_dict()))
        self._log(f"Indexed with projection {source}")
        self._emit(f"passages: {corpus.passage_count}  vocabulary: {len(vocab)}  {counter}")
        self._emit(f"index → {target}")

    def cmd_rank(self, query_ids: Optional[List[int]] = None, depth: Optional[int] = None):
        """Rank queries against the persisted index and write a TREC run."""
        cfg = self.config.validate("rank")
        depth = depth or cfg.retrieval.depth
        index, vocab, _, manifest = load_index(cfg.path("index"))
        queries = self._queries(vocab, query_ids)

        counter = EncodingCounter()
        rankings = rank_queries(index, queries, depth, counter, self._threads())
        target = self._prepare(cfg.path("run"))
        write_run(target, rankings, cfg.run_tag(), cfg.provenance(depth=depth, index_hash=manifest.get("config_hash")))
        self._emit(f"ranked {len(rankings)} queries at depth {depth}  {counter}")
        self._emit(f"run → {target}")

    # ── teacher / training ─────────────────────────────────────────────────

    def cmd_annotate(self):
        """Label every training query with the collective teacher."""
        cfg = self.config.validate("annotate")
        index, vocab, idf, _ = load_index(cfg.path("index"))
        queries = self._queries(vocab)
        qrels = read_qrels(cfg.path("qrels"))

        counter = EncodingCounter()
        labels, skipped = annotate_queries(
            queries, index, idf, cfg.prf_config(), qrels, cfg.run.seed,
            negatives_per_query=cfg.prf.negatives_per_query,
            counter=counter,
            negatives_source=cfg.train_config().negatives_source,
            threads=self._threads(),
        )
        target = self._prepare(cfg.path("labels"))
        write_labels(target, labels, cfg.provenance(skipped=skipped, **counter.to_dict()))
        if skipped:
            self._log(f"{skipped} queries skipped (no observed positive)", "warning")
        self._emit(f"annotated {len(labels)} queries, skipped {skipped}  {counter}")
        self._emit(f"labels → {target}")

    def _store(self, query_ids: Sequence[int]) -> RawEmbeddingStore:
        vocab = Vocabulary()
        corpus = self._corpus(vocab)
        queries = self._queries(vocab)
        return RawEmbeddingStore.build(
            self.config.provider_config(), corpus.passages, {qid: queries[qid] for qid in query_ids if qid in queries}
        )

    def cmd_pretrain(self):
        """Train theta from a random projection with the hard loss on random negatives."""
        cfg = self.config.validate("pretrain")
        vocab = Vocabulary()
        corpus = self._corpus(vocab)
        queries = self._queries(vocab)
        qrels = read_qrels(cfg.path("qrels"))
        provider = cfg.provider_config()
        store = RawEmbeddingStore.build(provider, corpus.passages, queries)

        snapshot, report = pretrain(
            corpus, queries, qrels, provider, cfg.projection.dim_out, cfg.prf_config(),
            cfg.train_config(pretrain=True), store, cfg.run.seed,
            init_seed=cfg.projection.init_seed,
            negatives_per_query=cfg.prf.negatives_per_query,
            threads=self._threads(),
        )
        target = self._prepare(cfg.path("checkpoint"))
        write_checkpoint(target, snapshot.projection, cfg.provenance(label=snapshot.label))
        self._write_losses(target, report.epoch_losses)
        self._emit(f"pretrain: {report}")
        self._emit(f"theta → {target}")

    def cmd_distill(self):
        """Train the student from theta against the label file."""
        cfg = self.config.validate("distill")
        theta, _ = read_checkpoint(cfg.path("checkpoint"))
        if theta.dim_in != cfg.provider.dim_in:
            raise DimensionMismatchError(
                f"checkpoint dim_in {theta.dim_in} does not match provider dim_in {cfg.provider.dim_in}"
            )
        labels = read_labels(cfg.path("labels"))
        store = self._store([label.query_id for label in labels])

        report = train_student(labels, store, init_student(ParameterSnapshot(theta)), cfg.train_config())
        target = self._prepare(cfg.path("student"))
        write_checkpoint(target, report.projection, cfg.provenance(init=str(cfg.path("checkpoint"))))
        self._write_losses(target, report.epoch_losses)
        self._emit(f"distill: {report}")
        self._emit(f"student → {target}")

    def _write_losses(self, checkpoint: Path, losses: Sequence[float]):
        with open(checkpoint.with_name(checkpoint.name + LOSS_SUFFIX), "w", encoding="utf-8") as handle:
            handle.write(provenance_line(self.config.provenance()) + "\n")
            handle.write("epoch\tloss\n")
            for epoch, loss in enumerate(losses, 1):
                handle.write(f"{epoch}\t{loss:.10f}\n")

    # ── evaluation ─────────────────────────────────────────────────────────

    def cmd_eval(self, run: Optional[str] = None, mrt: bool = False):
        """Score a run file against the evaluation qrels."""
        cfg = self.config
        if run is not None:
            cfg.paths.run = run
        cfg.validate("eval")
        rankings = read_run(cfg.path("run"))
        qrels = read_qrels(cfg.path("eval_qrels"))

        if not set(rankings) & set(qrels.query_ids):
            raise ValidationError("run and qrels share no query ids")
        mrt_ms = 0.0
        if mrt:
            index, vocab, _, _ = load_index(cfg.path("index"))
            encoded = [index.encode_query(qid, tokens) for qid, tokens in sorted(self._queries(vocab).items())]
            mrt_ms = measure_mrt(encoded, index, cfg.retrieval.depth, cfg.retrieval.mrt_repetitions)

        report = evaluate(rankings.values(), qrels, cfg.retrieval.binary_cutoff, mrt_ms, label=cfg.path("run").name)
        target = self._prepare(cfg.output_dir / REPORT_FILE)
        write_report_tsv(target, report, cfg.provenance(run=cfg.path("run").name))
        self._emit(str(report))

    def _eval_set(self) -> EvalSet:
        cfg = self.config
        index, vocab, idf, _ = load_index(cfg.path("index"))
        qrels = read_qrels(cfg.path("eval_qrels"))
        queries = self._queries(vocab)
        judged = set(qrels.query_ids)
        encoded = [index.encode_query(qid, queries[qid]) for qid in sorted(queries) if qid in judged]
        return EvalSet(encoded, index, idf, qrels, cfg.run.seed, cfg.retrieval.depth, cfg.retrieval.binary_cutoff)

    def cmd_sweep(self):
        """One-at-a-time sweep of the teacher settings."""
        cfg = self.config.validate("sweep")
        result = sweep(cfg.prf_config(), self._eval_set())
        target = self._prepare(cfg.output_dir / SWEEP_FILE)
        write_sweep_tsv(target, result, cfg.provenance())
        self._emit(str(result))

    def cmd_pr(self):
        """Precision/recall curves of the teacher and the indexed model over the top-100."""
        cfg = self.config.validate("pr")
        eval_set = self._eval_set()
        prf = cfg.prf_config()

        model: Dict[Tuple[int, int], float] = {}
        teacher: Dict[Tuple[int, int], float] = {}
        for query in eval_set.queries:
            ranking = retrieve(query, eval_set.index, max(HARD_NEGATIVE_POOL, prf.f_p))
            model.update({(query.query_id, pid): score for pid, score in ranking.items})
            reranked = rerank_with_teacher(query, ranking, eval_set.index, eval_set.idf, prf, cfg.run.seed)
            teacher.update({(query.query_id, pid): score for pid, score in reranked.items})

        directory = cfg.output_dir / PR_DIR
        directory.mkdir(parents=True, exist_ok=True)
        for name, scores in (("teacher", teacher), ("model", model)):
            for cutoff in PR_CUTOFFS:
                try:
                    curve = pr_curve(scores, eval_set.qrels, cutoff, label=name)
                except ValidationError as exc:
                    self._log(f"pr: {name} cutoff {cutoff} skipped: {exc}", "warning")
                    continue
                target = directory / f"{name}.cutoff{cutoff}.tsv"
                write_pr_curve_tsv(target, curve, cfg.provenance(cutoff=cutoff, scorer=name))
                self._emit(f"{name} cutoff {cutoff}: {len(curve.points)} points → {target}")

    def cmd_compare(self, seeds: Optional[List[int]] = None):
        """Compare training strategies on planted-positive recall over several seeds."""
        cfg = self.config.validate("compare")
        vocab = Vocabulary()
        corpus = self._corpus(vocab)
        queries = self._queries(vocab)
        train_qrels = read_qrels(cfg.path("qrels"))
        eval_qrels = read_qrels(cfg.path("eval_qrels"))

        settings = ComparisonSettings.from_config(cfg, threads=self._threads())
        report = compare_strategies(
            corpus, queries, train_qrels, eval_qrels, planted_from_qrels(train_qrels, eval_qrels),
            settings, seeds or cfg.run.seeds,
        )
        target = self._prepare(cfg.output_dir / COMPARE_FILE)
        target.write_text(provenance_line(cfg.provenance()) + "\n" + str(report) + "\n", encoding="utf-8")
        self._emit(str(report))

    # ── dataset ────────────────────────────────────────────────────────────

    def cmd_gen_synthetic(self, out: str = "synthetic", seed: int = 0):
        """Write the bundled synthetic dataset and a ready-to-run config."""
        dataset = generate(seed)
        config = write_dataset(dataset, out, seed)
        self._emit(f"synthetic dataset: {dataset}")
        self._emit(f"config → {config}")
