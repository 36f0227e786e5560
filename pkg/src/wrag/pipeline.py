"""Multi-source retrieval pipeline.

One facade over all per-source indices: each source is searched
concurrently, raw distances are weight-adjusted, threshold-filtered,
truncated to the per-source top-K, pooled, and the global top-K with the
smallest adjusted distances becomes the final context set.

Because the weight is constant within a source, weighting preserves
within-source order and threshold filtering removes a suffix of the sorted
candidate list; searching the raw top-K_k per source is therefore exact
(no slack needed).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError, IntegrityError, WragError
from .model import (
    Chunk,
    Query,
    ScoredHit,
    SourceKind,
    canonical_key,
    format_distance,
    sort_hits,
)
from .vindex import FlatIndex
from .weighting import WeightProfile, adjust_distance


@dataclass(frozen=True)
class SourceEntry:
    """One registered source: its index plus threshold/top-K settings."""

    kind: SourceKind
    index: FlatIndex
    threshold: float | None  # None == unbounded
    top_k: int

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError(f"source {self.kind.id!r}: top_k must be >= 1")
        if self.threshold is not None and self.threshold < 0:
            raise ConfigError(f"source {self.kind.id!r}: threshold must be >= 0 or unbounded")


class SourceRegistry:
    """Ordered, immutable set of source entries plus the chunk text store."""

    def __init__(self, entries: list[SourceEntry], chunks: dict[str, Chunk] | None = None):
        ids = [e.kind.id for e in entries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate source ids in registry: {ids}")
        dims = {e.index.dim for e in entries}
        if len(dims) > 1:
            raise DimensionMismatchError(f"mixed index dimensions in registry: {dims}")
        for e in entries:
            if e.index.source != e.kind.id:
                raise ConfigError(
                    f"index for source {e.index.source!r} registered under {e.kind.id!r}"
                )
        self.entries = tuple(entries)
        self.chunks = dict(chunks or {})

    @property
    def dim(self) -> int:
        if not self.entries:
            raise ConfigError("registry has no sources")
        return self.entries[0].index.dim

    def source_ids(self) -> list[str]:
        return [e.kind.id for e in self.entries]

    def chunk_text(self, chunk_id: str) -> str:
        chunk = self.chunks.get(chunk_id)
        return chunk.text if chunk is not None else ""


@dataclass(frozen=True)
class SourceCounts:
    searched: int
    passed_threshold: int
    in_final: int
    weight: float


@dataclass(frozen=True)
class RetrievalResult:
    final_hits: tuple[ScoredHit, ...]
    per_source_counts: dict[str, SourceCounts]
    profile_id: str
    type_name: str

    def to_jsonable(self) -> dict:
        return {
            "type_name": self.type_name,
            "profile_id": self.profile_id,
            "final_hits": [
                {
                    "chunk_id": h.chunk_id,
                    "source": h.source,
                    "raw_distance": format_distance(h.raw_distance),
                    "adjusted_distance": format_distance(h.adjusted_distance),
                    "weight_applied": format_distance(h.weight_applied),
                }
                for h in self.final_hits
            ],
            "per_source_counts": {
                sid: {
                    "searched": c.searched,
                    "passed_threshold": c.passed_threshold,
                    "in_final": c.in_final,
                    "weight": format_distance(c.weight),
                }
                for sid, c in self.per_source_counts.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_jsonable(), sort_keys=True, separators=(",", ":"))


def threshold_filter(hits: list[ScoredHit], tau: float | None) -> list[ScoredHit]:
    """Keep exactly the hits with adjusted_distance <= tau, order preserved.

    ``tau=None`` means unbounded (identity); a negative tau excludes all.
    """
    if tau is None:
        return list(hits)
    return [h for h in hits if h.adjusted_distance <= tau]


def per_source_topk(
    index: FlatIndex,
    query_vec: np.ndarray,
    weight: float,
    tau: float | None,
    k: int,
) -> list[ScoredHit]:
    """Search one source, adjust, filter, truncate; sorted canonically."""
    raw = index.search(query_vec, k) if index.count() else []
    hits = [
        ScoredHit(
            chunk_id=cid,
            source=index.source,
            raw_distance=dist,
            adjusted_distance=adjust_distance(weight, dist),
            weight_applied=weight,
        )
        for cid, dist in raw
    ]
    return threshold_filter(hits, tau)[:k]


def aggregate(per_source: list[list[ScoredHit]]) -> list[ScoredHit]:
    """Union of all per-source hit sets, sorted under canonical order."""
    merged: list[ScoredHit] = []
    seen: dict[str, str] = {}
    for hits in per_source:
        for h in hits:
            if h.chunk_id in seen:
                raise IntegrityError(
                    f"chunk_id {h.chunk_id!r} appears in both "
                    f"{seen[h.chunk_id]!r} and {h.source!r}"
                )
            seen[h.chunk_id] = h.source
            merged.append(h)
    return sort_hits(merged)


def final_topk(pool: list[ScoredHit], k: int) -> list[ScoredHit]:
    """First min(k, |pool|) elements of the canonically sorted pool."""
    return list(pool[: max(k, 0)])


def retrieve(
    query: Query,
    registry: SourceRegistry,
    profile: WeightProfile,
    embedder,
    type_name: str = "unclassified",
    executor: ThreadPoolExecutor | None = None,
) -> RetrievalResult:
    """Run the full multi-source retrieval for one query.

    The query is embedded once; all sources are searched concurrently and
    merged at a deterministic barrier, so results are independent of
    scheduling. Any source failure fails the whole query with attribution;
    partial results are never silently returned.
    """
    query_vec = embedder.embed(query.text)

    def one(entry: SourceEntry) -> list[ScoredHit]:
        weight = profile.weight_for(entry.kind.id)
        try:
            return per_source_topk(
                entry.index, query_vec, weight, entry.threshold, entry.top_k
            )
        except WragError as exc:
            raise WragError(f"source {entry.kind.id!r}: {exc}") from exc

    entries = registry.entries
    if executor is not None:
        per_source = list(executor.map(one, entries))
    elif len(entries) > 1:
        with ThreadPoolExecutor(max_workers=len(entries)) as pool:
            per_source = list(pool.map(one, entries))
    else:
        per_source = [one(e) for e in entries]

    pool_hits = aggregate(per_source)
    final = final_topk(pool_hits, query.top_k)
    final_ids = {h.chunk_id for h in final}
    counts = {}
    for entry, hits in zip(entries, per_source):
        counts[entry.kind.id] = SourceCounts(
            searched=min(entry.top_k, entry.index.count()),
            passed_threshold=len(hits),
            in_final=sum(1 for h in hits if h.chunk_id in final_ids),
            weight=profile.weight_for(entry.kind.id),
        )
    return RetrievalResult(
        final_hits=tuple(final),
        per_source_counts=counts,
        profile_id=profile.profile_id,
        type_name=type_name,
    )
