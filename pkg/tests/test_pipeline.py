"""End-to-end command-line runs on the synthetic dataset."""

import json

import pytest

from collective_kd.embeddings import read_tsv, tokenize_records
from collective_kd.index import load_index, read_run
from collective_kd.relevance import maxsim
from pipeline import build_parser, main

FAST = ["--epochs", "2", "--set", "train.pretrain_epochs=2"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic data taken through pretrain, index, annotate, distill, re-index and rank"""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    codes = {"gen-synthetic": main(["gen-synthetic", "--out", str(data)])}
    base = ["--config", str(data / "config.toml"), *FAST]
    for stage in ("pretrain", "index", "annotate", "distill"):
        codes[stage] = main([*base, stage])
    codes["reindex"] = main([*base, "index", "--checkpoint", str(data / "out" / "student.crwt")])
    codes["rank"] = main([*base, "rank"])
    return {"data": data, "out": data / "out", "base": base, "codes": codes}


class TestFullRun:

    def test_every_stage_succeeds(self, workspace):
        assert workspace["codes"] == {
            "gen-synthetic": 0, "pretrain": 0, "index": 0, "annotate": 0,
            "distill": 0, "reindex": 0, "rank": 0,
        }

    def test_artifacts_carry_provenance(self, workspace):
        out = workspace["out"]
        for name in ("theta.crwt", "student.crwt", "run.trec"):
            meta = json.loads((out / f"{name}.meta.json").read_text())
            assert len(meta["config_hash"]) == 64
        assert (out / "labels.tsv").read_text().startswith("# config_hash=")
        losses = (out / "student.crwt.loss.tsv").read_text().splitlines()
        assert losses[1] == "epoch\tloss"
        assert len(losses) == 4

    def test_index_uses_student(self, workspace):
        manifest = json.loads((workspace["out"] / "index" / "manifest.json").read_text())
        assert manifest["projection"].endswith("student.crwt")
        assert manifest["passages"] == 950
        assert manifest["passage_encodings"] == 950

    def test_run_has_every_query(self, workspace):
        lines = (workspace["out"] / "run.trec").read_text().splitlines()
        assert len({line.split()[0] for line in lines}) == 50
        assert lines[0].split()[5].startswith("ckd-")

    def test_eval_is_reproducible(self, workspace):
        report = workspace["out"] / "report.tsv"
        assert main([*workspace["base"], "eval"]) == 0
        first = report.read_bytes()
        assert main([*workspace["base"], "eval"]) == 0
        assert report.read_bytes() == first
        assert report.read_text().splitlines()[-2].startswith("all\t")

    def test_index_rebuild_is_byte_identical(self, workspace, tmp_path):
        index_dir = workspace["out"] / "index"
        before = {p.name: p.read_bytes() for p in index_dir.iterdir()}
        student = str(workspace["out"] / "student.crwt")
        assert main([*workspace["base"], "index", "--checkpoint", student]) == 0
        assert {p.name: p.read_bytes() for p in index_dir.iterdir()} == before

    def test_rank_subset(self, workspace):
        assert main([*workspace["base"], "rank", "--queries", "0,3"]) == 0
        lines = (workspace["out"] / "run.trec").read_text().splitlines()
        assert {line.split()[0] for line in lines} == {"0", "3"}
        main([*workspace["base"], "rank"])

    def test_run_scores_match_maxsim(self, workspace):
        index, vocab, _, _ = load_index(workspace["out"] / "index")
        queries = tokenize_records(read_tsv(workspace["data"] / "queries.tsv"), vocab)
        rankings = read_run(workspace["out"] / "run.trec")
        for qid in (0, 17, 49):
            encoded = index.encode_query(qid, queries[qid])
            for pid, printed in rankings[qid].items[:20]:
                assert maxsim(encoded, index.passage(pid)) == pytest.approx(printed, abs=5e-7 + 1e-9)

    def test_zero_learning_rate_writes_theta(self, workspace, tmp_path):
        student = tmp_path / "lr0.crwt"
        assert main([*workspace["base"], "--set", "train.learning_rate=0", "--set", f"paths.student={student}",
                     "distill"]) == 0
        assert student.read_bytes() == (workspace["out"] / "theta.crwt").read_bytes()

    def test_sweep_and_pr(self, workspace):
        assert main([*workspace["base"], "sweep"]) == 0
        assert len((workspace["out"] / "sweep.tsv").read_text().splitlines()) == 1 + 1 + 7
        assert main([*workspace["base"], "pr"]) == 0
        names = {p.name for p in (workspace["out"] / "pr").iterdir()}
        assert {"teacher.cutoff3.tsv", "model.cutoff1.tsv"} <= names


class TestFailures:

    def test_missing_config_is_validation_failure(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.toml"), "index"]) == 1

    def test_bad_override_is_validation_failure(self, workspace):
        assert main([*workspace["base"], "--set", "prf.f_e=99", "annotate"]) == 1

    @pytest.mark.parametrize("override", ["prf.f_p=2.5", "prf.f_p=\"three\"", "run.threads=true"])
    def test_mistyped_override_is_validation_failure(self, workspace, override):
        assert main([*workspace["base"], "--set", override, "eval"]) == 1

    def test_missing_run_file(self, workspace, tmp_path):
        assert main([*workspace["base"], "eval", "--run", str(tmp_path / "none.trec")]) == 1

    def test_unknown_query_id_is_runtime_failure(self, workspace):
        assert main([*workspace["base"], "rank", "--queries", "99999"]) == 2

    def test_parser_rejects_bad_id_list(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["rank", "--queries", "a,b"])
