"""Shared domain types, canonical ordering, and the engine configuration.

All types here are immutable values, safe to share between concurrent tasks.
Distances are 64-bit reals at every API boundary even though index storage is
float32; this avoids accumulation surprises during aggregation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .errors import ConfigError, InvalidHitError
from .weighting import QueryTypeRule, WeightProfile, validate_rules

DISTANCE_REL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SourceKind:
    """One data source (e.g. product manuals) identified by a stable id."""

    id: str
    display_name: str = ""

    def __post_init__(self):
        if not self.id:
            raise ConfigError("source id must be non-empty")


@dataclass(frozen=True)
class Chunk:
    """One indexed unit of text with source attribution and metadata."""

    chunk_id: str
    source: str
    doc_id: str
    text: str
    metadata: dict = field(default_factory=dict)
    embedding_dim: int | None = None

    def __post_init__(self):
        if not self.chunk_id:
            raise ConfigError("chunk_id must be non-empty")
        if not self.text:
            raise ConfigError(f"chunk {self.chunk_id!r}: text must be non-empty")
        if self.embedding_dim is not None and self.embedding_dim <= 0:
            raise ConfigError(f"chunk {self.chunk_id!r}: embedding_dim must be positive")


@dataclass(frozen=True)
class Query:
    """A single retrieval/answer request."""

    text: str
    top_k: int = 5
    profile_override: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ConfigError("query text must be non-empty")
        if not (1 <= self.top_k <= 1000):
            raise ConfigError(f"top_k must be in [1, 1000], got {self.top_k}")


@dataclass(frozen=True)
class ScoredHit:
    """A retrieved chunk carrying raw and weight-adjusted distances."""

    chunk_id: str
    source: str
    raw_distance: float
    adjusted_distance: float
    weight_applied: float

    def __post_init__(self):
        for name, value in (
            ("raw_distance", self.raw_distance),
            ("adjusted_distance", self.adjusted_distance),
        ):
            if not math.isfinite(value) or value < 0:
                raise InvalidHitError(f"{name} must be finite and non-negative, got {value!r}")
        if not (math.isfinite(self.weight_applied) and self.weight_applied > 0):
            raise InvalidHitError(
                f"weight_applied must be a finite positive real, got {self.weight_applied!r}"
            )
        expected = self.weight_applied * self.raw_distance
        scale = max(abs(expected), abs(self.adjusted_distance), 1e-300)
        if abs(self.adjusted_distance - expected) > DISTANCE_REL_TOLERANCE * scale:
            raise InvalidHitError(
                f"adjusted_distance {self.adjusted_distance} != "
                f"weight * raw = {expected} beyond tolerance"
            )


def canonical_key(hit: ScoredHit) -> tuple[float, str, str]:
    """Total-order sort key: adjusted distance, then source id, then chunk id."""
    if not math.isfinite(hit.adjusted_distance):
        raise InvalidHitError(f"non-finite adjusted distance on {hit.chunk_id!r}")
    return (hit.adjusted_distance, hit.source, hit.chunk_id)


def canonical_hit_order(a: ScoredHit, b: ScoredHit) -> int:
    """-1 / 0 / +1 comparison under the canonical total order."""
    ka, kb = canonical_key(a), canonical_key(b)
    return -1 if ka < kb else (1 if ka > kb else 0)


def sort_hits(hits: list[ScoredHit]) -> list[ScoredHit]:
    return sorted(hits, key=canonical_key)


def format_distance(value: float) -> str:
    """Decimal string with 9 significant digits; byte-stable across platforms."""
    return format(float(value), ".9g")


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class SourceConfig:
    """Per-source settings: display name, threshold tau, per-source top-K."""

    display_name: str = ""
    threshold: float | None = None  # None == unbounded
    top_k: int = 10

    def __post_init__(self):
        if self.threshold is not None and (
            not math.isfinite(self.threshold) or self.threshold < 0
        ):
            raise ConfigError(f"threshold must be >= 0 or 'unbounded', got {self.threshold}")
        if self.top_k < 1:
            raise ConfigError(f"per-source top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "local_hash"  # embedding: local_hash|remote; llm: mock|remote
    model: str = ""
    url: str = ""
    timeout_s: float = 10.0
    retries: int = 2

    def __post_init__(self):
        if self.kind == "remote" and not self.url:
            raise ConfigError("remote provider requires a url")


@dataclass(frozen=True)
class EngineConfig:
    embedding_dim: int = 384
    distance_metric: str = "l2_normalized"
    final_top_k: int = 5
    confidence_threshold: float = 0.7
    max_generation_attempts: int = 2
    prompt_char_budget: int = 6000
    sources: dict[str, SourceConfig] = field(default_factory=dict)
    # profile id -> source id -> boost b >= 1 (weight w = 1/b)
    profiles: dict[str, dict[str, float]] = field(default_factory=dict)
    rules: tuple[QueryTypeRule, ...] = ()
    embedding_provider: ProviderConfig = field(default_factory=ProviderConfig)
    generation_provider: ProviderConfig = field(
        default_factory=lambda: ProviderConfig(kind="mock")
    )
    evaluation_provider: ProviderConfig = field(
        default_factory=lambda: ProviderConfig(kind="mock")
    )

    def __post_init__(self):
        if self.embedding_dim <= 0:
            raise ConfigError("embedding_dim must be positive")
        if self.distance_metric != "l2_normalized":
            raise ConfigError(f"unsupported distance_metric {self.distance_metric!r}")
        if self.final_top_k < 1:
            raise ConfigError("final_top_k must be >= 1")
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise ConfigError(
                f"confidence_threshold must be in [0, 1], got {self.confidence_threshold}"
            )
        if self.max_generation_attempts < 1:
            raise ConfigError("max_generation_attempts must be >= 1")
        if self.prompt_char_budget < 1:
            raise ConfigError("prompt_char_budget must be >= 1")
        for pid, boosts in self.profiles.items():
            for src, boost in boosts.items():
                if src not in self.sources:
                    raise ConfigError(
                        f"profile {pid!r} boosts unknown source {src!r}"
                    )
                if not (isinstance(boost, (int, float)) and math.isfinite(boost) and boost >= 1):
                    raise ConfigError(
                        f"profile {pid!r}: boost for {src!r} must be >= 1, got {boost!r}"
                    )
        if self.rules:
            ordered = validate_rules(list(self.rules))
            for rule in ordered:
                if rule.type_name not in self.profiles:
                    raise ConfigError(
                        f"query type {rule.type_name!r} has no bound weight profile"
                    )

    def weight_profiles(self) -> dict[str, WeightProfile]:
        """Materialize WeightProfiles (w = 1/boost, default boost 1) per source."""
        out = {}
        for pid, boosts in self.profiles.items():
            weights = {src: 1.0 / boosts.get(src, 1.0) for src in self.sources}
            out[pid] = WeightProfile(pid, weights)
        return out


DEFAULT_SOURCES = {
    "manuals": SourceConfig(display_name="Product Manuals"),
    "faq": SourceConfig(display_name="FAQs"),
    "guides": SourceConfig(display_name="Troubleshooting Guides"),
    "kb": SourceConfig(display_name="Internal Knowledge Bases"),
}

DEFAULT_RULES = (
    QueryTypeRule("sku_specific", (r"\bSKU-\d+\b", r"\b[A-Z]{2,4}\d{4,6}\b"), 0),
    QueryTypeRule("error_code", (r"\b[A-Z]{1,4}-?\d{2,5}\b",), 1),
    QueryTypeRule("general", (r"(?s)^",), 100),
)

DEFAULT_PROFILES = {
    "sku_specific": {"manuals": 2.0},
    "error_code": {"guides": 2.0},
    "general": {},
    "uniform": {},
}


def default_config() -> EngineConfig:
    return EngineConfig(
        sources=dict(DEFAULT_SOURCES),
        profiles={k: dict(v) for k, v in DEFAULT_PROFILES.items()},
        rules=DEFAULT_RULES,
    )


def _require_mapping(node, where: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{where} must be a mapping")
    return node


def _check_keys(node: dict, allowed: set[str], where: str) -> None:
    unknown = set(node) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _parse_threshold(value, where: str) -> float | None:
    if value is None or value == "unbounded":
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(f"{where}: threshold must be a number or 'unbounded'")


def _parse_provider(node, where: str, default_kind: str) -> ProviderConfig:
    node = _require_mapping(node, where)
    _check_keys(node, {"kind", "model", "url", "timeout_s", "retries"}, where)
    return ProviderConfig(
        kind=node.get("kind", default_kind),
        model=node.get("model", ""),
        url=node.get("url", "") or "",
        timeout_s=float(node.get("timeout_s", 10.0)),
        retries=int(node.get("retries", 2)),
    )


def parse_config(text: str) -> EngineConfig:
    """Parse and fully validate a YAML config document."""
    try:
        root = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    root = _require_mapping(root, "config root")
    _check_keys(root, {"engine", "sources", "profiles", "rules", "providers"}, "config root")

    engine = _require_mapping(root.get("engine"), "engine")
    _check_keys(
        engine,
        {
            "embedding_dim",
            "distance_metric",
            "final_top_k",
            "confidence_threshold",
            "max_generation_attempts",
            "prompt_char_budget",
        },
        "engine",
    )

    sources_node = _require_mapping(root.get("sources"), "sources")
    if sources_node:
        sources = {}
        for sid, snode in sources_node.items():
            snode = _require_mapping(snode, f"sources.{sid}")
            _check_keys(snode, {"display_name", "threshold", "top_k"}, f"sources.{sid}")
            sources[str(sid)] = SourceConfig(
                display_name=snode.get("display_name", str(sid)),
                threshold=_parse_threshold(snode.get("threshold"), f"sources.{sid}"),
                top_k=int(snode.get("top_k", 10)),
            )
    else:
        sources = dict(DEFAULT_SOURCES)

    profiles_node = _require_mapping(root.get("profiles"), "profiles")
    if profiles_node:
        profiles = {}
        for pid, pnode in profiles_node.items():
            pnode = _require_mapping(pnode, f"profiles.{pid}")
            _check_keys(pnode, {"boosts"}, f"profiles.{pid}")
            boosts = _require_mapping(pnode.get("boosts"), f"profiles.{pid}.boosts")
            profiles[str(pid)] = {str(s): float(b) for s, b in boosts.items()}
    else:
        profiles = {k: dict(v) for k, v in DEFAULT_PROFILES.items()}

    rules_node = root.get("rules")
    if rules_node is not None:
        if not isinstance(rules_node, list):
            raise ConfigError("rules must be a list")
        rules = []
        for i, rnode in enumerate(rules_node):
            rnode = _require_mapping(rnode, f"rules[{i}]")
            _check_keys(rnode, {"type_name", "priority", "patterns"}, f"rules[{i}]")
            patterns = rnode.get("patterns")
            if not isinstance(patterns, list) or not patterns:
                raise ConfigError(f"rules[{i}]: patterns must be a non-empty list")
            rules.append(
                QueryTypeRule(
                    type_name=str(rnode["type_name"]),
                    patterns=tuple(str(p) for p in patterns),
                    priority=int(rnode.get("priority", i)),
                )
            )
        rules = tuple(rules)
    else:
        rules = DEFAULT_RULES

    providers = _require_mapping(root.get("providers"), "providers")
    _check_keys(providers, {"embedding", "generation", "evaluation"}, "providers")

    try:
        return EngineConfig(
            embedding_dim=int(engine.get("embedding_dim", 384)),
            distance_metric=str(engine.get("distance_metric", "l2_normalized")),
            final_top_k=int(engine.get("final_top_k", 5)),
            confidence_threshold=float(engine.get("confidence_threshold", 0.7)),
            max_generation_attempts=int(engine.get("max_generation_attempts", 2)),
            prompt_char_budget=int(engine.get("prompt_char_budget", 6000)),
            sources=sources,
            profiles=profiles,
            rules=rules,
            embedding_provider=_parse_provider(
                providers.get("embedding"), "providers.embedding", "local_hash"
            ),
            generation_provider=_parse_provider(
                providers.get("generation"), "providers.generation", "mock"
            ),
            evaluation_provider=_parse_provider(
                providers.get("evaluation"), "providers.evaluation", "mock"
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def load_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def dump_config(config: EngineConfig) -> str:
    """Serialize a config such that parse(dump(c)) == c."""
    doc = {
        "engine": {
            "embedding_dim": config.embedding_dim,
            "distance_metric": config.distance_metric,
            "final_top_k": config.final_top_k,
            "confidence_threshold": config.confidence_threshold,
            "max_generation_attempts": config.max_generation_attempts,
            "prompt_char_budget": config.prompt_char_budget,
        },
        "sources": {
            sid: {
                "display_name": sc.display_name,
                "threshold": "unbounded" if sc.threshold is None else sc.threshold,
                "top_k": sc.top_k,
            }
            for sid, sc in config.sources.items()
        },
        "profiles": {
            pid: {"boosts": dict(boosts)} for pid, boosts in config.profiles.items()
        },
        "rules": [
            {
                "type_name": r.type_name,
                "priority": r.priority,
                "patterns": list(r.patterns),
            }
            for r in config.rules
        ],
        "providers": {
            "embedding": asdict(config.embedding_provider),
            "generation": asdict(config.generation_provider),
            "evaluation": asdict(config.evaluation_provider),
        },
    }
    return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------------------
# Chunk JSONL sidecar format: one JSON object per line.


def chunks_to_jsonl(chunks: list[Chunk]) -> str:
    lines = []
    for c in chunks:
        lines.append(
            json.dumps(
                {
                    "chunk_id": c.chunk_id,
                    "doc_id": c.doc_id,
                    "source": c.source,
                    "text": c.text,
                    "metadata": c.metadata,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def chunks_from_jsonl(text: str, embedding_dim: int | None = None) -> list[Chunk]:
    chunks = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"chunk JSONL line {lineno}: invalid JSON: {exc}") from exc
        missing = {"chunk_id", "doc_id", "source", "text"} - set(obj)
        if missing:
            raise ConfigError(
                f"chunk JSONL line {lineno}: missing field(s) {', '.join(sorted(missing))}"
            )
        chunks.append(
            Chunk(
                chunk_id=obj["chunk_id"],
                source=obj["source"],
                doc_id=obj["doc_id"],
                text=obj["text"],
                metadata=obj.get("metadata", {}),
                embedding_dim=embedding_dim,
            )
        )
    return chunks
