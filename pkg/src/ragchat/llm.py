"""Chat-completion gateway: budgeted prompt assembly and the HTTP client.

The prompt assembler renders retrieved context into one dedicated
system-adjacent message and truncates deterministically: oldest history
turn-pairs go first, then the lowest-ranked snippets; the system and user
messages are never dropped.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import httpx

from .exceptions import (
    BudgetTooSmall,
    ProtocolError,
    ProviderError,
    ProviderUnreachable,
    RequestTimeout,
)
from .retrieval import ContextSnippet

CONTEXT_HEADER = "Use the following context to answer. Cite sources as [n]."
DEFAULT_CONTEXT_BUDGET = 3000
BACKOFF_BASE_S = 0.25
CHAT_COMPLETIONS_PATH = "/v1/chat/completions"


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str


@dataclass(frozen=True)
class GenParams:
    """Sampling controls forwarded to the completion endpoint."""

    temperature: float = 0.7
    max_tokens: int = 1024
    stream: bool = False

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class LlmEndpointConfig:
    url: str
    model: str = "default"
    api_key_env: str = ""
    timeout_ms: int = 60_000
    retries: int = 2

    def __post_init__(self):
        if not 0 <= self.retries <= 5:
            raise ValueError("retries must be in [0, 5]")


@dataclass
class PromptBundle:
    """Messages ready to send plus accounting of what survived the budget."""

    messages: list[ChatMessage] = field(default_factory=list)
    estimated_tokens: int = 0
    included_snippets: int = 0
    included_history_turns: int = 0


def estimate_tokens(text: str) -> int:
    """Tokenizer-free budget proxy: ceil(len / 4)."""
    return (len(text) + 3) // 4


def render_context(snippets: Sequence[ContextSnippet]) -> str:
    """Header plus one `[n] (<source>) <text>` block per snippet, rank order."""
    lines = [CONTEXT_HEADER]
    for n, snip in enumerate(snippets, start=1):
        lines.append(f"[{n}] ({snip.source_uri}) {snip.text}")
    return "\n".join(lines)


def user_bundle(content: str) -> PromptBundle:
    """Bundle holding a single bare user message."""
    return PromptBundle(
        messages=[ChatMessage("user", content)],
        estimated_tokens=estimate_tokens(content),
    )


def assemble_prompt(
    system: str,
    snippets: Sequence[ContextSnippet],
    history: Sequence[ChatMessage],
    user: str,
    budget_tokens: int = DEFAULT_CONTEXT_BUDGET,
) -> PromptBundle:
    """Fit system text, context snippets, history, and the user turn into a budget.

    The estimated token total never exceeds ``budget_tokens``. History is
    dropped in whole turn-pairs starting with the oldest; once history is
    gone, snippets are dropped lowest-ranked first (the context message
    disappears entirely with its last snippet).
    """
    if not user:
        raise ValueError("user message must be non-empty")
    base = estimate_tokens(system) + estimate_tokens(user)
    if budget_tokens < base:
        raise BudgetTooSmall(
            f"budget {budget_tokens} cannot fit system+user ({base} tokens)"
        )
    pairs = [list(history[i : i + 2]) for i in range(0, len(history), 2)]
    kept_pairs = len(pairs)
    kept_snips = len(snippets)

    def total(n_pairs: int, n_snips: int) -> int:
        t = base
        for pair in pairs[len(pairs) - n_pairs :]:
            t += sum(estimate_tokens(m.content) for m in pair)
        if n_snips:
            t += estimate_tokens(render_context(snippets[:n_snips]))
        return t

    while total(kept_pairs, kept_snips) > budget_tokens:
        if kept_pairs > 0:
            kept_pairs -= 1
        elif kept_snips > 0:
            kept_snips -= 1
        else:  # pragma: no cover - unreachable, base fits by the check above
            break

    messages: list[ChatMessage] = []
    if system:
        messages.append(ChatMessage("system", system))
    if kept_snips:
        messages.append(ChatMessage("system", render_context(snippets[:kept_snips])))
    kept_history = [m for pair in pairs[len(pairs) - kept_pairs :] for m in pair]
    messages.extend(kept_history)
    messages.append(ChatMessage("user", user))
    return PromptBundle(
        messages=messages,
        estimated_tokens=total(kept_pairs, kept_snips),
        included_snippets=kept_snips,
        included_history_turns=len(kept_history),
    )


def _auth_headers(config: LlmEndpointConfig) -> dict[str, str]:
    import os

    key = os.environ.get(config.api_key_env, "") if config.api_key_env else ""
    return {"Authorization": f"Bearer {key}"} if key else {}


def _request_body(
    config: LlmEndpointConfig, bundle: PromptBundle, params: GenParams
) -> dict:
    return {
        "model": config.model,
        "messages": [{"role": m.role, "content": m.content} for m in bundle.messages],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "stream": params.stream,
    }


def chat_complete(
    config: LlmEndpointConfig,
    bundle: PromptBundle,
    params: GenParams | None = None,
    *,
    backoff_base_s: float = BACKOFF_BASE_S,
) -> str | Iterator[str]:
    """Run one completion; returns the text, or a delta iterator when streaming.

    HTTP 5xx answers are retried up to ``config.retries`` times with
    exponential backoff (base 250 ms, factor 2).
    """
    params = params or GenParams()
    url = config.url.rstrip("/") + CHAT_COMPLETIONS_PATH
    body = _request_body(config, bundle, params)
    headers = _auth_headers(config)
    timeout = config.timeout_ms / 1000.0
    if params.stream:
        return _stream_completion(url, body, headers, timeout, config.retries, backoff_base_s)
    attempt = 0
    while True:
        try:
            resp = httpx.post(url, json=body, headers=headers, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise RequestTimeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ProviderUnreachable(str(exc)) from exc
        if resp.status_code // 100 == 5 and attempt < config.retries:
            time.sleep(backoff_base_s * (2**attempt))
            attempt += 1
            continue
        if resp.status_code // 100 != 2:
            raise ProviderError(resp.status_code, resp.text)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed completion response: {exc}") from exc


def _stream_completion(
    url: str,
    body: dict,
    headers: dict[str, str],
    timeout: float,
    retries: int,
    backoff_base_s: float,
) -> Iterator[str]:
    """Yield content deltas from a server-sent-events completion stream."""
    attempt = 0
    while True:
        try:
            with httpx.Client(timeout=timeout) as client:
                with client.stream("POST", url, json=body, headers=headers) as resp:
                    if resp.status_code // 100 == 5 and attempt < retries:
                        pass  # fall through to backoff below
                    elif resp.status_code // 100 != 2:
                        resp.read()
                        raise ProviderError(resp.status_code, resp.text)
                    else:
                        for line in resp.iter_lines():
                            if not line.startswith("data:"):
                                continue
                            payload = line[len("data:") :].strip()
                            if payload == "[DONE]":
                                return
                            try:
                                delta = json.loads(payload)["choices"][0]["delta"]
                            except (KeyError, IndexError, TypeError, ValueError) as exc:
                                raise ProtocolError(
                                    f"malformed stream event: {exc}"
                                ) from exc
                            content = delta.get("content")
                            if content:
                                yield content
                        return
        except httpx.TimeoutException as exc:
            raise RequestTimeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ProviderUnreachable(str(exc)) from exc
        time.sleep(backoff_base_s * (2**attempt))
        attempt += 1


def serve_mock_llm(port: int = 0, mode: str = "echo", script: Sequence[str] | None = None):
    """Start the deterministic mock completion server; see :mod:`ragchat.mocks`."""
    from .mocks import serve_mock_llm as _serve

    return _serve(port=port, mode=mode, script=script)
