"""Text embedding providers.

Two providers share one contract: produce a unit-L2 vector of the configured
dimension for any non-empty text.

* ``LocalHashEmbedder`` -- deterministic signed feature hashing. No model,
  no network; identical text always yields an identical vector. Used for
  tests, benchmarks, and offline mode.
* ``RemoteEmbedder`` -- HTTP client for an embeddings endpoint that serves
  a sentence-transformer style model. Vectors are re-normalized locally and
  validated for dimension and finiteness.

All vectors are unit-normalized so that squared L2 distance ranks identically
to cosine distance (d^2 = 2 - 2*cos).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import httpx
import numpy as np

from .errors import (
    BatchItemError,
    DimensionMismatchError,
    EmptyInputError,
    ProviderFaultError,
    TransportError,
)

NORM_TOLERANCE = 1e-6
MIN_LOCAL_DIM = 8

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics, dropping empty tokens.

    This is the single tokenizer shared by the local embedder and the BM25
    baseline, so both pipelines see identical token streams.
    """
    return _TOKEN_RE.findall(text.lower())


def validate_vector(values: np.ndarray, dim: int) -> np.ndarray:
    """Check dimension, finiteness, and unit norm; returns the array."""
    if values.shape != (dim,):
        raise DimensionMismatchError(
            f"expected dimension {dim}, got shape {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise ProviderFaultError("embedding contains non-finite entries")
    norm = float(np.linalg.norm(values))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ProviderFaultError(f"embedding is not unit-normalized (norm={norm})")
    return values


def _token_bucket_sign(token: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    n = int.from_bytes(digest, "little")
    bucket = n % dim
    sign = 1.0 if (n >> 63) & 1 == 0 else -1.0
    return bucket, sign


def embed_local(text: str, dim: int) -> np.ndarray:
    """Deterministic signed feature-hash embedding, unit-normalized.

    Tokens are hashed into one of ``dim`` buckets with a +/-1 sign derived
    from the same hash; counts accumulate and the result is L2-normalized.
    """
    if dim < MIN_LOCAL_DIM:
        raise ValueError(f"local embedder requires dim >= {MIN_LOCAL_DIM}, got {dim}")
    tokens = tokenize(text)
    if not text.strip() or not tokens:
        raise EmptyInputError("cannot embed empty text (no tokens)")
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        bucket, sign = _token_bucket_sign(token, dim)
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # Signed hashing can cancel in principle; never return a zero vector.
        raise EmptyInputError("token hash signs cancelled to a zero vector")
    return vec / norm


@dataclass(frozen=True)
class EmbedderDescriptor:
    provider_kind: str  # "local_hash" | "remote"
    model_name: str
    dim: int


class LocalHashEmbedder:
    """Stateless deterministic embedder; safe to call concurrently."""

    provider_kind = "local_hash"

    def __init__(self, dim: int = 384, model_name: str = "local-hash-v1"):
        self.dim = dim
        self.model_name = model_name

    @property
    def descriptor(self) -> EmbedderDescriptor:
        return EmbedderDescriptor("local_hash", self.model_name, self.dim)

    def embed(self, text: str) -> np.ndarray:
        return embed_local(text, self.dim)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for i, text in enumerate(texts):
            try:
                out.append(self.embed(text))
            except Exception as exc:
                raise BatchItemError(i, exc) from exc
        return out


_PARSE_ERRORS = (DimensionMismatchError, ProviderFaultError)


class RemoteEmbedder:
    """Client for a remote embeddings endpoint.

    Wire format: POST ``{"model": <str>, "input": [<str>...]}`` to the
    configured URL; response ``{"data": [{"index": <int>,
    "embedding": [<float>...]}...]}``. Vectors are re-normalized locally.
    """

    provider_kind = "remote"

    def __init__(
        self,
        url: str,
        model_name: str,
        dim: int,
        timeout_s: float = 10.0,
        retries: int = 2,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.model_name = model_name
        self.dim = dim
        self.timeout_s = timeout_s
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout_s)

    @property
    def descriptor(self) -> EmbedderDescriptor:
        return EmbedderDescriptor("remote", self.model_name, self.dim)

    def _post(self, texts: list[str]) -> dict:
        last_exc: Exception | None = None
        for attempt in range(1, self.retries + 2):
            try:
                resp = self._client.post(
                    self.url, json={"model": self.model_name, "input": texts}
                )
                resp.raise_for_status()
                return resp.json()
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_exc = exc
        raise TransportError(
            f"embedding endpoint {self.url} failed after "
            f"{self.retries + 1} attempts: {last_exc}",
            attempts=self.retries + 1,
        )

    def _parse_one(self, embedding: list[float]) -> np.ndarray:
        vec = np.asarray(embedding, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise DimensionMismatchError(
                f"provider returned dimension {vec.shape[0] if vec.ndim == 1 else vec.shape}, "
                f"descriptor requires {self.dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise ProviderFaultError("provider returned non-finite embedding entries")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ProviderFaultError("provider returned a zero vector")
        return vec / norm

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyInputError("cannot embed empty text")
        payload = self._post([text])
        data = payload.get("data")
        if not isinstance(data, list) or len(data) != 1:
            raise ProviderFaultError(f"malformed embedding response: {payload!r}")
        return self._parse_one(data[0]["embedding"])

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        for i, text in enumerate(texts):
            if not text.strip():
                raise BatchItemError(i, EmptyInputError("empty text"))
        if not texts:
            return []
        payload = self._post(list(texts))
        data = payload.get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise ProviderFaultError(f"malformed embedding response: {payload!r}")
        out: list[np.ndarray | None] = [None] * len(texts)
        for item in data:
            idx = item["index"]
            try:
                out[idx] = self._parse_one(item["embedding"])
            except _PARSE_ERRORS as exc:
                raise BatchItemError(idx, exc) from exc
        if any(v is None for v in out):
            raise ProviderFaultError("embedding response missing indices")
        return out  # type: ignore[return-value]


def embed_batch(texts: list[str], embedder) -> list[np.ndarray]:
    """Embed texts in order; element i equals embed(texts[i]).

    Failures propagate as ``BatchItemError`` carrying the offending index.
    """
    if hasattr(embedder, "embed_batch"):
        return embedder.embed_batch(list(texts))
    out = []
    for i, text in enumerate(texts):
        try:
            out.append(embedder.embed(text))
        except Exception as exc:
            raise BatchItemError(i, exc) from exc
    return out
