"""Text embeddings: a remote provider client and a deterministic local hasher.

Every vector leaving this module is L2-normalized and rounded to float32
precision, which is also the vector store's on-disk precision, so
persisted collections round-trip without losing a bit.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import httpx
import numpy as np

from .exceptions import (
    EmptyInputText,
    NoTokens,
    ProviderError,
    ProviderUnreachable,
    ZeroVector,
)

DEFAULT_HASH_DIM = 64

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm float vector; ``dim`` is the number of components."""

    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    """Connection settings for a remote embeddings endpoint."""

    endpoint_url: str
    model_name: str = "default"
    batch_size: int = 64
    timeout_ms: int = 30_000
    api_key_env: str = ""

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def l2_normalize(values: Sequence[float]) -> list[float]:
    """Scale a vector to unit L2 norm; direction is preserved."""
    norm = math.sqrt(sum(v * v for v in values))
    if norm == 0.0:
        raise ZeroVector("cannot normalize an all-zero vector")
    return [v / norm for v in values]


def _to_f32_precision(values: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(np.float32(v)) for v in values)


def hash_embed(text: str, dim: int = DEFAULT_HASH_DIM) -> EmbeddingVector:
    """Deterministic bag-of-tokens embedding via signed FNV-1a feature hashing.

    Each lowercased alphanumeric token hashes to a slot (``h mod dim``) and
    contributes +1 or -1 depending on the hash's top bit; the accumulated
    vector is L2-normalized.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise NoTokens(f"no alphanumeric tokens in {text!r:.60}")
    acc = [0.0] * dim
    for tok in tokens:
        h = fnv1a64(tok.encode("utf-8"))
        acc[h % dim] += 1.0 if (h >> 63) == 0 else -1.0
    return EmbeddingVector(_to_f32_precision(l2_normalize(acc)))


def _auth_headers(api_key_env: str) -> dict[str, str]:
    key = os.environ.get(api_key_env, "") if api_key_env else ""
    return {"Authorization": f"Bearer {key}"} if key else {}


def embed_texts(
    config: EmbeddingProviderConfig, texts: Sequence[str]
) -> list[EmbeddingVector]:
    """Embed ``texts`` through the provider, preserving order.

    Requests are batched by ``config.batch_size`` and speak the common
    embeddings JSON wire shape: ``{"model", "input"}`` in, ``{"data":
    [{"index", "embedding"}]}`` out. Vectors are re-normalized locally.
    """
    if not texts:
        raise EmptyInputText("no texts to embed")
    if any(t == "" for t in texts):
        raise EmptyInputText("empty string in embedding input")
    headers = _auth_headers(config.api_key_env)
    timeout = config.timeout_ms / 1000.0
    out: list[EmbeddingVector] = []
    with httpx.Client(timeout=timeout) as client:
        for start in range(0, len(texts), config.batch_size):
            batch = list(texts[start : start + config.batch_size])
            try:
                resp = client.post(
                    config.endpoint_url,
                    json={"model": config.model_name, "input": batch},
                    headers=headers,
                )
            except httpx.TransportError as exc:
                raise ProviderUnreachable(str(exc)) from exc
            if resp.status_code // 100 != 2:
                raise ProviderError(resp.status_code, resp.text)
            try:
                rows = sorted(resp.json()["data"], key=lambda r: r["index"])
                vectors = [row["embedding"] for row in rows]
            except (KeyError, TypeError, ValueError) as exc:
                raise ProviderError(resp.status_code, f"malformed response: {exc}") from exc
            if len(vectors) != len(batch):
                raise ProviderError(
                    resp.status_code,
                    f"expected {len(batch)} embeddings, got {len(vectors)}",
                )
            out.extend(
                EmbeddingVector(_to_f32_precision(l2_normalize(v))) for v in vectors
            )
    return out


Embedder = Callable[[Sequence[str]], list[EmbeddingVector]]


def hash_embedder(dim: int = DEFAULT_HASH_DIM) -> Embedder:
    """Batch embedder backed by :func:`hash_embed`; used for offline runs and tests."""

    def embed(texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise EmptyInputText("no texts to embed")
        return [hash_embed(t, dim) for t in texts]

    return embed


def provider_embedder(config: EmbeddingProviderConfig) -> Embedder:
    """Batch embedder bound to a remote provider config."""

    def embed(texts: Sequence[str]) -> list[EmbeddingVector]:
        return embed_texts(config, texts)

    return embed
