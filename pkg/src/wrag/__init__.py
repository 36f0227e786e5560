"""Weighted multi-source retrieval-augmented generation engine."""

__version__ = "0.1.0"

from .errors import WragError
from .model import Chunk, EngineConfig, Query, ScoredHit, SourceKind, default_config, load_config

__all__ = [
    "Chunk",
    "EngineConfig",
    "Query",
    "ScoredHit",
    "SourceKind",
    "WragError",
    "default_config",
    "load_config",
    "__version__",
]
