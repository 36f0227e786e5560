"""Query classification, weight profiles, and distance adjustment.

The ranking quantity everywhere downstream is the adjusted distance

    adjusted = weight * raw_distance

so a numerically *smaller* weight favors a source. Configuration exposes a
human-facing ``boost`` b >= 1 per source and derives weight = 1/boost, so
"boost manuals by 2" means manuals' distances are halved and manuals hits
rank better. See README "Weight direction".
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import ConfigError, UnknownProfileError


@dataclass(frozen=True)
class QueryTypeRule:
    """One ordered classification rule: first match by priority wins."""

    type_name: str
    patterns: tuple[str, ...]
    priority: int
    _compiled: tuple[re.Pattern, ...] = field(
        init=False, repr=False, compare=False, default=()
    )

    def __post_init__(self):
        try:
            compiled = tuple(re.compile(p) for p in self.patterns)
        except re.error as exc:
            raise ConfigError(
                f"rule {self.type_name!r}: invalid pattern: {exc}"
            ) from exc
        object.__setattr__(self, "_compiled", compiled)

    def matches(self, text: str) -> bool:
        return any(p.search(text) for p in self._compiled)

    @property
    def is_fallback(self) -> bool:
        # A fallback pattern matches any text, including the empty string.
        return any(p.search("") for p in self._compiled)


def validate_rules(rules: list[QueryTypeRule]) -> list[QueryTypeRule]:
    """Check the rule-set invariants and return rules sorted by priority."""
    names = [r.type_name for r in rules]
    if len(set(names)) != len(names):
        raise ConfigError("rule type_names must be unique")
    if not rules:
        raise ConfigError("at least one classification rule is required")
    fallbacks = [r for r in rules if r.is_fallback]
    if len(fallbacks) != 1:
        raise ConfigError(
            f"exactly one rule must carry an always-match fallback pattern, "
            f"found {len(fallbacks)}"
        )
    ordered = sorted(rules, key=lambda r: r.priority)
    if ordered[-1] is not fallbacks[0]:
        raise ConfigError(
            "the fallback rule must have the highest priority number"
        )
    priorities = [r.priority for r in ordered]
    if len(set(priorities)) != len(priorities):
        raise ConfigError("rule priorities must be unique")
    return ordered


@dataclass(frozen=True)
class WeightProfile:
    """Per-source distance multipliers w_k selected by query type."""

    profile_id: str
    weights: dict[str, float]

    def __post_init__(self):
        for source, w in self.weights.items():
            if not (isinstance(w, (int, float)) and math.isfinite(w) and w > 0):
                raise ConfigError(
                    f"profile {self.profile_id!r}: weight for {source!r} "
                    f"must be a finite positive real, got {w!r}"
                )

    def weight_for(self, source_id: str) -> float:
        try:
            return self.weights[source_id]
        except KeyError:
            raise ConfigError(
                f"profile {self.profile_id!r} has no weight for source {source_id!r}"
            ) from None


def classify_query(text: str, rules: list[QueryTypeRule]) -> str:
    """Return the type_name of the first matching rule in priority order.

    The validated rule set always contains a fallback, so this never fails.
    """
    for rule in sorted(rules, key=lambda r: r.priority):
        if rule.matches(text):
            return rule.type_name
    raise ConfigError("no rule matched; rule set is missing its fallback")


def select_profile(
    type_name: str,
    profiles: dict[str, WeightProfile],
    override: str | None = None,
) -> WeightProfile:
    """Pick the weight profile for a classified query; override wins."""
    if override is not None:
        try:
            return profiles[override]
        except KeyError:
            raise UnknownProfileError(f"unknown profile override {override!r}") from None
    try:
        return profiles[type_name]
    except KeyError:
        raise ConfigError(
            f"query type {type_name!r} has no bound weight profile"
        ) from None


def adjust_distance(weight: float, raw: float) -> float:
    """Adjusted distance: the source weight times the raw index distance."""
    if not (math.isfinite(weight) and weight > 0):
        raise ValueError(f"weight must be a finite positive real, got {weight!r}")
    if not (math.isfinite(raw) and raw >= 0):
        raise ValueError(f"raw distance must be finite and non-negative, got {raw!r}")
    return weight * raw
