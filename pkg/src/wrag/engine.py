"""Engine facade: loads indices and providers, answers queries.

The CLI ``query`` command and the HTTP service share this code path, so
both produce identical QueryResponse JSON for identical inputs and config.
"""

from __future__ import annotations

import os
from pathlib import Path

from .embedding import LocalHashEmbedder, RemoteEmbedder
from .errors import ConfigError, MissingIndexError
from .generation import (
    GatedResponse,
    MockEvaluator,
    MockGenerator,
    RemoteEvaluator,
    RemoteGenerator,
    gated_answer,
)
from .model import Chunk, EngineConfig, Query, SourceKind, chunks_from_jsonl, format_distance
from .pipeline import RetrievalResult, SourceEntry, SourceRegistry, retrieve
from .vindex import load_index
from .weighting import classify_query, select_profile

EXCERPT_CHARS = 200


def index_paths(index_dir: str | Path, source_id: str) -> tuple[Path, Path]:
    index_dir = Path(index_dir)
    return index_dir / f"{source_id}.wrag", index_dir / f"{source_id}.chunks.jsonl"


def load_registry(config: EngineConfig, index_dir: str | Path) -> SourceRegistry:
    """Load every configured source's index and chunk sidecar from disk."""
    missing = []
    for sid in config.sources:
        for path in index_paths(index_dir, sid):
            if not path.is_file():
                missing.append(str(path))
    if missing:
        raise MissingIndexError(
            "missing index files: " + ", ".join(sorted(missing))
        )
    entries = []
    chunks: dict[str, Chunk] = {}
    for sid, source_cfg in config.sources.items():
        idx_path, chunks_path = index_paths(index_dir, sid)
        index = load_index(idx_path)
        if index.dim != config.embedding_dim:
            raise ConfigError(
                f"{idx_path}: index dim {index.dim} != configured {config.embedding_dim}"
            )
        entries.append(
            SourceEntry(
                kind=SourceKind(sid, source_cfg.display_name),
                index=index,
                threshold=source_cfg.threshold,
                top_k=source_cfg.top_k,
            )
        )
        for chunk in chunks_from_jsonl(chunks_path.read_text(encoding="utf-8")):
            chunks[chunk.chunk_id] = chunk
    return SourceRegistry(entries, chunks)


def make_embedder(config: EngineConfig, mock_providers: bool = False):
    provider = config.embedding_provider
    if mock_providers or provider.kind == "local_hash":
        return LocalHashEmbedder(config.embedding_dim)
    if provider.kind == "remote":
        url = os.environ.get("WRAG_EMBED_URL", provider.url)
        return RemoteEmbedder(
            url=url,
            model_name=provider.model or "all-MiniLM-L6-v2",
            dim=config.embedding_dim,
            timeout_s=provider.timeout_s,
            retries=provider.retries,
        )
    raise ConfigError(f"unknown embedding provider kind {provider.kind!r}")


def make_generator(config: EngineConfig, mock_providers: bool = False):
    provider = config.generation_provider
    if mock_providers or provider.kind == "mock":
        return MockGenerator()
    if provider.kind == "remote":
        url = os.environ.get("WRAG_LLM_URL", provider.url)
        return RemoteGenerator(url, provider.model or "llama-3.1-70b",
                               timeout_s=provider.timeout_s, retries=provider.retries)
    raise ConfigError(f"unknown generation provider kind {provider.kind!r}")


def make_evaluator(config: EngineConfig, mock_providers: bool = False):
    provider = config.evaluation_provider
    if mock_providers or provider.kind == "mock":
        return MockEvaluator()
    if provider.kind == "remote":
        url = os.environ.get("WRAG_EVAL_URL", provider.url)
        return RemoteEvaluator(url, provider.model or "llama-3.1-70b",
                               timeout_s=provider.timeout_s, retries=provider.retries)
    raise ConfigError(f"unknown evaluation provider kind {provider.kind!r}")


class Engine:
    """Immutable query-serving facade over the loaded registry."""

    def __init__(self, config: EngineConfig, registry: SourceRegistry,
                 embedder, generator, evaluator):
        self.config = config
        self.registry = registry
        self.embedder = embedder
        self.generator = generator
        self.evaluator = evaluator
        self.profiles = config.weight_profiles()
        self.rules = sorted(config.rules, key=lambda r: r.priority)

    @classmethod
    def load(cls, config: EngineConfig, index_dir: str | Path,
             mock_providers: bool = False) -> "Engine":
        registry = load_registry(config, index_dir)
        return cls(
            config,
            registry,
            make_embedder(config, mock_providers),
            make_generator(config, mock_providers),
            make_evaluator(config, mock_providers),
        )

    def _query(self, text: str, top_k: int | None, profile: str | None) -> Query:
        return Query(
            text=text,
            top_k=top_k if top_k is not None else self.config.final_top_k,
            profile_override=profile,
        )

    def retrieve_only(self, text: str, top_k: int | None = None,
                      profile: str | None = None) -> RetrievalResult:
        query = self._query(text, top_k, profile)
        type_name = classify_query(query.text, self.rules)
        selected = select_profile(type_name, self.profiles, query.profile_override)
        return retrieve(query, self.registry, selected, self.embedder, type_name)

    def answer(self, text: str, top_k: int | None = None,
               profile: str | None = None) -> dict:
        """Run the full gated pipeline; returns the QueryResponse document."""
        query = self._query(text, top_k, profile)
        response = gated_answer(
            query, self.registry, self.profiles, self.rules, self.config,
            self.embedder, self.generator, self.evaluator,
        )
        return self._response_doc(response)

    def _response_doc(self, response: GatedResponse) -> dict:
        hits = []
        per_source_counts = {}
        if response.retrieval is not None:
            for h in response.retrieval.final_hits:
                hits.append(
                    {
                        "chunk_id": h.chunk_id,
                        "source": h.source,
                        "raw_distance": format_distance(h.raw_distance),
                        "adjusted_distance": format_distance(h.adjusted_distance),
                        "weight_applied": format_distance(h.weight_applied),
                        "text_excerpt": self.registry.chunk_text(h.chunk_id)[:EXCERPT_CHARS],
                    }
                )
            per_source_counts = response.retrieval.to_jsonable()["per_source_counts"]
        return {
            "answer": response.answer,
            "confidence": response.confidence,
            "verdict": response.verdict,
            "attempts": response.attempts,
            "type_name": response.type_name,
            "profile_id": response.profile_id,
            "confidence_threshold": response.confidence_threshold,
            "citations": list(response.citations),
            "suppress_reason": response.suppress_reason,
            "hits": hits,
            "per_source_counts": per_source_counts,
        }

    def sources_summary(self, profile: str | None = None) -> dict:
        profile_id = profile or "uniform"
        selected = self.profiles.get(profile_id)
        sources = {}
        for entry in self.registry.entries:
            sid = entry.kind.id
            sources[sid] = {
                "display_name": entry.kind.display_name,
                "count": entry.index.count(),
                "threshold": "unbounded" if entry.threshold is None else entry.threshold,
                "top_k": entry.top_k,
                "weight": format_distance(selected.weight_for(sid)) if selected else None,
            }
        return {"active_profile": profile_id, "sources": sources}
