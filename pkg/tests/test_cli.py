import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from wrag.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def all_output(result):
    try:
        return result.output + result.stderr
    except ValueError:  # stderr not captured separately on this click version
        return result.output


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, all_output(result)
    return result


class TestGenCorpus:
    def test_writes_corpus_and_queries(self, runner, tmp_path):
        out = tmp_path / "corpus"
        result = run_ok(
            runner,
            ["gen-corpus", "--seed", "5", "--out", str(out),
             "--chunks-per-source", "80", "--queries", "6"],
        )
        assert "320 chunks" in result.output
        for name in ("manuals", "faq", "guides", "kb"):
            assert (out / f"{name}.jsonl").is_file()
        assert len((out / "queries.jsonl").read_text().splitlines()) == 6

    def test_seed_required(self, runner, tmp_path):
        result = runner.invoke(main, ["gen-corpus", "--out", str(tmp_path)])
        assert result.exit_code == 2


class TestIngest:
    def test_validates_and_normalizes(self, runner, tmp_path):
        src = tmp_path / "raw.jsonl"
        src.write_text(
            '{"chunk_id": "c1", "doc_id": "d", "source": "faq", "text": "fan"}\n\n'
            '{"chunk_id": "c2", "doc_id": "d", "source": "faq", "text": "hum"}\n'
        )
        out = tmp_path / "clean.jsonl"
        run_ok(runner, ["ingest", "--in", str(src), "--out", str(out)])
        assert len(out.read_text().splitlines()) == 2

    def test_duplicate_id_is_domain_error(self, runner, tmp_path):
        src = tmp_path / "raw.jsonl"
        src.write_text(
            '{"chunk_id": "c1", "doc_id": "d", "source": "faq", "text": "a"}\n'
            '{"chunk_id": "c1", "doc_id": "d", "source": "faq", "text": "b"}\n'
        )
        result = runner.invoke(main, ["ingest", "--in", str(src), "--out", str(tmp_path / "o")])
        assert result.exit_code == 1
        assert "error:" in all_output(result)
        assert "c1" in all_output(result)

    def test_malformed_json_is_domain_error(self, runner, tmp_path):
        src = tmp_path / "raw.jsonl"
        src.write_text("{nope\n")
        result = runner.invoke(main, ["ingest", "--in", str(src), "--out", str(tmp_path / "o")])
        assert result.exit_code == 1


def build_indices(runner, tmp_path, seed=5, chunks_per_source=80, queries=6):
    corpus = tmp_path / "corpus"
    idx = tmp_path / "idx"
    run_ok(
        runner,
        ["gen-corpus", "--seed", str(seed), "--out", str(corpus),
         "--chunks-per-source", str(chunks_per_source), "--queries", str(queries)],
    )
    for name in ("manuals", "faq", "guides", "kb"):
        run_ok(
            runner,
            ["index", "--source", name, "--in", str(corpus / f"{name}.jsonl"),
             "--out", str(idx), "--mock-providers"],
        )
    return corpus, idx


class TestIndexAndQuery:
    def test_index_writes_pair_of_files(self, runner, tmp_path):
        _, idx = build_indices(runner, tmp_path)
        for name in ("manuals", "faq", "guides", "kb"):
            assert (idx / f"{name}.wrag").is_file()
            assert (idx / f"{name}.chunks.jsonl").is_file()

    def test_index_rejects_foreign_chunks(self, runner, tmp_path):
        corpus, _ = build_indices(runner, tmp_path)
        result = runner.invoke(
            main,
            ["index", "--source", "kb", "--in", str(corpus / "faq.jsonl"),
             "--out", str(tmp_path / "idx2"), "--mock-providers"],
        )
        assert result.exit_code == 1

    def test_query_outputs_response_json(self, runner, tmp_path):
        corpus, idx = build_indices(runner, tmp_path)
        lq = json.loads((corpus / "queries.jsonl").read_text().splitlines()[0])
        result = run_ok(
            runner,
            ["query", "--q", lq["query_text"], "--index-dir", str(idx), "--mock-providers"],
        )
        doc = json.loads(result.output)
        assert doc["verdict"] in ("delivered", "suppressed")
        assert doc["type_name"] == lq["expected_type"]
        assert isinstance(doc["hits"], list)

    def test_query_against_missing_indices_fails_cleanly(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["query", "--q", "fan", "--index-dir", str(tmp_path / "none"), "--mock-providers"],
        )
        assert result.exit_code == 1
        assert "missing index files" in all_output(result)

    def test_query_unknown_profile_fails_cleanly(self, runner, tmp_path):
        _, idx = build_indices(runner, tmp_path)
        result = runner.invoke(
            main,
            ["query", "--q", "fan", "--index-dir", str(idx),
             "--profile", "nope", "--mock-providers"],
        )
        assert result.exit_code == 1
        assert "nope" in all_output(result)


class TestBenchCommand:
    def test_prints_table_and_writes_report(self, runner, tmp_path):
        out = tmp_path / "report.json"
        result = run_ok(
            runner,
            ["bench", "--seed", "11", "--out", str(out),
             "--chunks-per-source", "100", "--queries", "9"],
        )
        for name in ("keyword_bm25", "uniform_rag", "weighted_rag"):
            assert name in result.output
        doc = json.loads(out.read_text())
        assert doc["seed"] == 11
        assert len(doc["systems"]) == 3

    def test_reuses_generated_corpus(self, runner, tmp_path):
        corpus = tmp_path / "corpus"
        run_ok(
            runner,
            ["gen-corpus", "--seed", "11", "--out", str(corpus),
             "--chunks-per-source", "100", "--queries", "9"],
        )
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        run_ok(runner, ["bench", "--seed", "11", "--out", str(a),
                        "--chunks-per-source", "100", "--queries", "9"])
        run_ok(runner, ["bench", "--seed", "11", "--out", str(b),
                        "--corpus-dir", str(corpus)])
        assert a.read_bytes() == b.read_bytes()


class TestConfigOption:
    def test_invalid_config_is_domain_error(self, runner, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("engine:\n  confidence_threshold: 3\n")
        result = runner.invoke(
            main, ["--config", str(cfg), "gen-corpus", "--seed", "1",
                   "--out", str(tmp_path / "c")],
        )
        # gen-corpus does not read config; but query does.
        idx_result = runner.invoke(
            main, ["--config", str(cfg), "query", "--q", "fan",
                   "--index-dir", str(tmp_path), "--mock-providers"],
        )
        assert idx_result.exit_code == 1
        assert "confidence_threshold" in all_output(idx_result)

    def test_custom_config_threshold_applies(self, runner, tmp_path):
        _, idx = build_indices(runner, tmp_path)
        cfg = tmp_path / "strict.yaml"
        cfg.write_text(
            "sources:\n"
            "  manuals: {threshold: 0.0}\n"
            "  faq: {threshold: 0.0}\n"
            "  guides: {threshold: 0.0}\n"
            "  kb: {threshold: 0.0}\n"
        )
        result = run_ok(
            runner,
            ["--config", str(cfg), "query", "--q", "completely novel words",
             "--index-dir", str(idx), "--mock-providers"],
        )
        doc = json.loads(result.output)
        assert doc["verdict"] == "suppressed"
        assert doc["suppress_reason"] == "no context above threshold"

    def test_version_flag(self, runner):
        result = run_ok(runner, ["--version"])
        assert "0.1.0" in result.output
