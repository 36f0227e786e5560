"""Command-line interface: ingest, index, query, bench, serve, gen-corpus.

Exit codes: 0 on success, 1 on a domain error (message on stderr), 2 on a
usage error.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .bench import (
    generate_synthetic_corpus,
    labeled_queries_from_jsonl,
    labeled_queries_to_jsonl,
    run_bench,
)
from .engine import Engine, index_paths, make_embedder
from .errors import WragError
from .model import (
    chunks_from_jsonl,
    chunks_to_jsonl,
    default_config,
    load_config,
)
from .vindex import build_index, save_index


def _get_config(ctx) -> "EngineConfig":  # noqa: F821
    path = ctx.obj.get("config_path")
    return load_config(path) if path else default_config()


def domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except WragError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(), envvar="WRAG_CONFIG",
              default=None, help="Engine config file (YAML).")
@click.option("--log-level", default="WARNING", show_default=True)
@click.version_option(__version__)
@click.pass_context
def main(ctx, config_path, log_level):
    """Weighted multi-source RAG engine."""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.WARNING))
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command("gen-corpus")
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--chunks-per-source", type=int, default=500, show_default=True)
@click.option("--queries", "n_queries", type=int, default=100, show_default=True)
@domain_errors
def gen_corpus(seed, out_dir, chunks_per_source, n_queries):
    """Write a seeded synthetic corpus (per-source JSONL) and labeled queries."""
    corpora, queries = generate_synthetic_corpus(
        seed, chunks_per_source=chunks_per_source, n_queries=n_queries
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for source, chunks in corpora.items():
        (out / f"{source}.jsonl").write_text(chunks_to_jsonl(chunks), encoding="utf-8")
    (out / "queries.jsonl").write_text(labeled_queries_to_jsonl(queries), encoding="utf-8")
    click.echo(f"wrote {sum(len(c) for c in corpora.values())} chunks, "
               f"{len(queries)} queries to {out}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@domain_errors
def ingest(in_path, out_path):
    """Validate and normalize a chunk JSONL corpus."""
    chunks = chunks_from_jsonl(Path(in_path).read_text(encoding="utf-8"))
    seen = set()
    for c in chunks:
        if c.chunk_id in seen:
            raise WragError(f"duplicate chunk_id {c.chunk_id!r} in {in_path}")
        seen.add(c.chunk_id)
    Path(out_path).write_text(chunks_to_jsonl(chunks), encoding="utf-8")
    click.echo(f"validated {len(chunks)} chunks -> {out_path}")


@main.command()
@click.option("--source", required=True)
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--mock-providers", is_flag=True, default=False,
              help="Use the deterministic local embedder regardless of config.")
@click.pass_context
@domain_errors
def index(ctx, source, in_path, out_dir, mock_providers):
    """Build and persist the dense index plus chunk sidecar for one source."""
    config = _get_config(ctx)
    chunks = chunks_from_jsonl(Path(in_path).read_text(encoding="utf-8"))
    embedder = make_embedder(config, mock_providers)
    flat = build_index(source, [c for c in chunks if c.source == source], embedder)
    if flat.count() != len(chunks):
        extra = {c.source for c in chunks} - {source}
        raise WragError(f"{in_path} contains chunks for other sources: {sorted(extra)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    idx_path, chunks_path = index_paths(out, source)
    save_index(flat, idx_path)
    chunks_path.write_text(chunks_to_jsonl(chunks), encoding="utf-8")
    click.echo(f"indexed {flat.count()} chunks for {source!r} -> {idx_path}")


@main.command()
@click.option("--q", "query_text", required=True)
@click.option("--index-dir", type=click.Path(), default="idx", show_default=True)
@click.option("--top-k", type=int, default=None)
@click.option("--profile", default=None)
@click.option("--mock-providers", is_flag=True, default=False)
@click.pass_context
@domain_errors
def query(ctx, query_text, index_dir, top_k, profile, mock_providers):
    """Answer one query through the gated pipeline; prints QueryResponse JSON."""
    config = _get_config(ctx)
    engine = Engine.load(config, index_dir, mock_providers=mock_providers)
    doc = engine.answer(query_text, top_k, profile)
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


@main.command()
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the machine-readable JSON report here.")
@click.option("--chunks-per-source", type=int, default=500, show_default=True)
@click.option("--queries", "n_queries", type=int, default=100, show_default=True)
@click.option("--corpus-dir", type=click.Path(exists=True), default=None,
              help="Use a previously generated corpus instead of regenerating.")
@click.pass_context
@domain_errors
def bench(ctx, seed, out_path, chunks_per_source, n_queries, corpus_dir):
    """Run the three-system benchmark on the seeded synthetic corpus."""
    config = _get_config(ctx)
    if corpus_dir is not None:
        corpus_dir = Path(corpus_dir)
        corpora = {}
        for sid in config.sources:
            path = corpus_dir / f"{sid}.jsonl"
            if not path.is_file():
                raise WragError(f"missing corpus file {path}")
            corpora[sid] = chunks_from_jsonl(path.read_text(encoding="utf-8"))
        queries = labeled_queries_from_jsonl(
            (corpus_dir / "queries.jsonl").read_text(encoding="utf-8")
        )
    else:
        corpora, queries = generate_synthetic_corpus(
            seed, chunks_per_source=chunks_per_source, n_queries=n_queries
        )
    report = run_bench(corpora, queries, config, seed=seed)
    click.echo(report.to_table())
    if out_path:
        Path(out_path).write_text(report.to_json(), encoding="utf-8")
        click.echo(f"report written to {out_path}")


@main.command()
@click.option("--index-dir", type=click.Path(), default="idx", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--mock-providers", is_flag=True, default=False)
@click.pass_context
@domain_errors
def serve(ctx, index_dir, host, port, mock_providers):
    """Start the HTTP service (refuses to start if index files are missing)."""
    import uvicorn

    from .service import create_app

    config = _get_config(ctx)
    app = create_app(config, index_dir, mock_providers=mock_providers)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
