"""Prompt assembly, generation, self-evaluation, and the confidence gate.

The generate/evaluate cycle for one query is sequential: build a prompt
from the retrieved context, draft an answer, score it with the evaluator,
and deliver only if the confidence clears the configured threshold. A
failed attempt retries with the final top-K doubled (wider context), which
never shrinks the context because the final pool selection is a prefix
under the canonical order. After the attempt budget is exhausted the answer
is suppressed and only diagnostics are returned.

Providers come in two flavors:
* deterministic local mocks (hermetic tests, benchmarks, ``--mock-providers``)
* remote chat-completion clients (``{"model", "messages", "temperature": 0}``)

The remote evaluator must reply with one line ``confidence: <decimal>``;
anything else is a provider fault, never a default score.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources

import httpx

from .embedding import tokenize
from .errors import ProviderFaultError, TransportError
from .model import Query
from .pipeline import RetrievalResult, SourceRegistry, retrieve
from .weighting import WeightProfile, classify_query, select_profile

ContextBlock = tuple[str, str, str]  # (source id, chunk_id, text)

_CONFIDENCE_RE = re.compile(r"^\s*confidence:\s*([0-9]+(?:\.[0-9]+)?)\s*$", re.MULTILINE)

NO_CONTEXT_REASON = "no context above threshold"


def load_template(template_id: str) -> str:
    ref = resources.files("wrag") / "templates" / f"{template_id}.txt"
    return ref.read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptBundle:
    query_text: str
    context_blocks: tuple[ContextBlock, ...]
    template_id: str = "troubleshoot-v1"


@dataclass(frozen=True)
class GatedResponse:
    answer: str | None
    confidence: float
    verdict: str  # "delivered" | "suppressed"
    attempts: int
    citations: tuple[str, ...] = ()
    suppress_reason: str | None = None
    retrieval: RetrievalResult | None = None
    type_name: str = ""
    profile_id: str = ""
    confidence_threshold: float = 0.0


def _render_block(n: int, block: ContextBlock) -> str:
    source, chunk_id, text = block
    return f"[{n}] (source={source}, chunk={chunk_id})\n{text}"


def render_prompt(bundle: PromptBundle) -> str:
    template = load_template(bundle.template_id)
    context = "\n\n".join(
        _render_block(i + 1, b) for i, b in enumerate(bundle.context_blocks)
    )
    return template.format(context=context, query=bundle.query_text)


def build_prompt(
    query_text: str,
    blocks: list[ContextBlock],
    char_budget: int,
    template_id: str = "troubleshoot-v1",
) -> PromptBundle:
    """Assemble the prompt, truncating whole blocks from the tail to fit.

    Blocks keep the final top-K order. At least one block is always kept,
    so the budget must comfortably exceed a single block in practice.
    """
    kept = list(blocks)
    while len(kept) > 1:
        bundle = PromptBundle(query_text, tuple(kept), template_id)
        if len(render_prompt(bundle)) <= char_budget:
            break
        kept.pop()
    return PromptBundle(query_text, tuple(kept), template_id)


# ---------------------------------------------------------------------------
# Providers


class MockGenerator:
    """Deterministic generator: echoes chunk markers and chunk texts.

    The draft deliberately does not repeat the question, so heuristic
    evaluators measure what the *context* contributed.
    """

    def generate(self, bundle: PromptBundle) -> str:
        lines = ["Mock troubleshooting answer synthesized from the retrieved context."]
        for source, chunk_id, text in bundle.context_blocks:
            lines.append(f"[chunk:{chunk_id}] ({source}) {text}")
        return "\n".join(lines)


class MockEvaluator:
    """Deterministic heuristic evaluator.

    Confidence = 0.2 + 0.8 * (fraction of the query's distinct tokens that
    appear in the draft answer). Drafts grounded in context that actually
    covers the query score high; off-topic context scores low.
    """

    def evaluate(self, query_text: str, draft: str, blocks: tuple[ContextBlock, ...]) -> float:
        query_tokens = set(tokenize(query_text))
        if not query_tokens:
            return 0.0
        draft_tokens = set(tokenize(draft))
        coverage = len(query_tokens & draft_tokens) / len(query_tokens)
        return round(0.2 + 0.8 * coverage, 6)


class ScriptedEvaluator:
    """Returns a pre-scripted confidence sequence; for tests."""

    def __init__(self, scores: list[float]):
        self._scores = list(scores)
        self.calls = 0

    def evaluate(self, query_text: str, draft: str, blocks: tuple[ContextBlock, ...]) -> float:
        if not self._scores:
            raise ProviderFaultError("scripted evaluator exhausted")
        self.calls += 1
        return self._scores.pop(0)


class _ChatClient:
    def __init__(self, url: str, model: str, timeout_s: float = 30.0,
                 retries: int = 2, client: httpx.Client | None = None):
        self.url = url
        self.model = model
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout_s)

    def complete(self, messages: list[dict]) -> str:
        body = {"model": self.model, "messages": messages, "temperature": 0}
        last_exc: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=body)
                resp.raise_for_status()
                payload = resp.json()
                break
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_exc = exc
        else:
            raise TransportError(
                f"chat endpoint {self.url} failed after {self.retries + 1} attempts: {last_exc}",
                attempts=self.retries + 1,
            )
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderFaultError(f"malformed chat response: {payload!r}") from None
        if not isinstance(content, str):
            raise ProviderFaultError(f"chat content is not text: {content!r}")
        return content


class RemoteGenerator(_ChatClient):
    def generate(self, bundle: PromptBundle) -> str:
        prompt = render_prompt(bundle)
        content = self.complete([{"role": "user", "content": prompt}])
        if not content.strip():
            raise ProviderFaultError("generator returned an empty completion")
        return content


class RemoteEvaluator(_ChatClient):
    template_id = "evaluator-v1"

    def evaluate(self, query_text: str, draft: str, blocks: tuple[ContextBlock, ...]) -> float:
        context = "\n\n".join(_render_block(i + 1, b) for i, b in enumerate(blocks))
        prompt = load_template(self.template_id).format(
            query=query_text, context=context, answer=draft
        )
        reply = self.complete([{"role": "user", "content": prompt}])
        return parse_confidence(reply)


def parse_confidence(reply: str) -> float:
    """Extract the anchored one-line ``confidence: <decimal>`` score."""
    match = _CONFIDENCE_RE.search(reply)
    if match is None:
        raise ProviderFaultError(
            f"evaluator reply carries no parseable confidence line: {reply!r}"
        )
    value = float(match.group(1))
    if not (0.0 <= value <= 1.0):
        raise ProviderFaultError(f"evaluator confidence {value} outside [0, 1]")
    return value


# ---------------------------------------------------------------------------
# The gate


def run_gate(
    query_text: str,
    fetch,
    generator,
    evaluator,
    confidence_threshold: float,
    max_attempts: int,
    char_budget: int,
    initial_k: int,
    template_id: str = "troubleshoot-v1",
) -> GatedResponse:
    """Generic generate/evaluate loop over any context fetcher.

    ``fetch(k)`` returns the top-k context blocks; on a failed attempt the
    next fetch doubles k. Provider errors propagate as exceptions (distinct
    from suppression).
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    k = initial_k
    best_confidence = 0.0
    attempt = 0
    for attempt in range(1, max_attempts + 1):
        blocks = fetch(k)
        if not blocks:
            return GatedResponse(
                answer=None,
                confidence=best_confidence,
                verdict="suppressed",
                attempts=attempt,
                suppress_reason=NO_CONTEXT_REASON,
                confidence_threshold=confidence_threshold,
            )
        bundle = build_prompt(query_text, blocks, char_budget, template_id)
        draft = generator.generate(bundle)
        if not draft or not draft.strip():
            raise ProviderFaultError("generator returned an empty completion")
        confidence = evaluator.evaluate(query_text, draft, bundle.context_blocks)
        if not (isinstance(confidence, (int, float)) and math.isfinite(confidence)
                and 0.0 <= confidence <= 1.0):
            raise ProviderFaultError(f"evaluator confidence {confidence!r} outside [0, 1]")
        if confidence >= confidence_threshold:
            return GatedResponse(
                answer=draft,
                confidence=confidence,
                verdict="delivered",
                attempts=attempt,
                citations=tuple(cid for _, cid, _ in bundle.context_blocks),
                confidence_threshold=confidence_threshold,
            )
        best_confidence = max(best_confidence, confidence)
        k = k * 2
    return GatedResponse(
        answer=None,
        confidence=best_confidence,
        verdict="suppressed",
        attempts=attempt,
        suppress_reason="confidence below threshold after all attempts",
        confidence_threshold=confidence_threshold,
    )


def gated_answer(
    query: Query,
    registry: SourceRegistry,
    profiles: dict[str, WeightProfile],
    rules,
    config,
    embedder,
    generator,
    evaluator,
) -> GatedResponse:
    """Classify, retrieve, and run the confidence gate for one query."""
    type_name = classify_query(query.text, list(rules))
    profile = select_profile(type_name, profiles, query.profile_override)
    last_result: dict[str, RetrievalResult] = {}

    def fetch(k: int) -> list[ContextBlock]:
        result = retrieve(
            Query(query.text, top_k=min(k, 1000)), registry, profile, embedder,
            type_name=type_name,
        )
        last_result["value"] = result
        return [
            (h.source, h.chunk_id, registry.chunk_text(h.chunk_id))
            for h in result.final_hits
        ]

    response = run_gate(
        query.text,
        fetch,
        generator,
        evaluator,
        confidence_threshold=config.confidence_threshold,
        max_attempts=config.max_generation_attempts,
        char_budget=config.prompt_char_budget,
        initial_k=query.top_k,
    )
    return GatedResponse(
        answer=response.answer,
        confidence=response.confidence,
        verdict=response.verdict,
        attempts=response.attempts,
        citations=response.citations,
        suppress_reason=response.suppress_reason,
        retrieval=last_result.get("value"),
        type_name=type_name,
        profile_id=profile.profile_id,
        confidence_threshold=config.confidence_threshold,
    )
