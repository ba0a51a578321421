"""Web search, page fetching, and map-reduce summarization of long content.

Search goes through a pluggable provider so tests run entirely on scripted
results. Summarization splits long text into sections, summarizes each with
the LLM, then reduces the concatenated section summaries in one final call.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Protocol
from urllib.parse import urlparse

import httpx

from . import llm
from .exceptions import (
    BodyTooLarge,
    EmptyText,
    FetchError,
    NotHtmlText,
    ProviderError,
    ProviderUnreachable,
    RagChatError,
    SummarizeLlmError,
)
from .ingest import DEFAULT_SEPARATORS, ChunkingParams, split_text, strip_html

DEFAULT_SECTION_SIZE = 6000
DEFAULT_MAX_SECTIONS = 20
DEFAULT_TIMEOUT_S = 10.0
MAX_BODY_BYTES = 2 * 1024 * 1024
MAX_REDIRECTS = 5

DEFAULT_SECTION_PROMPT = "Summarize the following text concisely:\n\n{text}"
DEFAULT_FINAL_PROMPT = (
    "Combine the following section summaries into one coherent summary:\n\n{summaries}"
)


class SearchCategory(enum.Enum):
    TEXT = "text"
    NEWS = "news"
    IMAGES = "images"
    VIDEOS = "videos"
    MAPS = "maps"
    INSTANT = "instant"


@dataclass(frozen=True)
class SearchResult:
    title: str
    url: str
    snippet: str
    category: SearchCategory = SearchCategory.TEXT


@dataclass
class PageContent:
    url: str
    title: str
    text: str
    fetched_at: datetime


@dataclass(frozen=True)
class SummarizeParams:
    """Section size, section cap, and the two prompt templates."""

    section_size_chars: int = DEFAULT_SECTION_SIZE
    max_sections: int = DEFAULT_MAX_SECTIONS
    per_section_prompt: str = DEFAULT_SECTION_PROMPT
    final_prompt: str = DEFAULT_FINAL_PROMPT

    def __post_init__(self):
        if self.section_size_chars < 1:
            raise ValueError("section_size_chars must be >= 1")
        if self.max_sections < 1:
            raise ValueError("max_sections must be >= 1")
        if self.per_section_prompt.count("{text}") != 1:
            raise ValueError("per_section_prompt must contain {text} exactly once")
        if self.final_prompt.count("{summaries}") != 1:
            raise ValueError("final_prompt must contain {summaries} exactly once")


@dataclass(frozen=True)
class Summary:
    text: str
    n_sections: int
    n_llm_calls: int


class SearchProvider(Protocol):
    def search(
        self, query: str, category: SearchCategory, max_results: int
    ) -> list[SearchResult]: ...


class HttpSearchProvider:
    """Client for the search endpoint contract:
    ``GET {endpoint}/search?q=&category=&max=`` returning
    ``{"results": [...], "instant_answer": str | null}``.
    """

    def __init__(self, endpoint: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s

    def search(
        self, query: str, category: SearchCategory, max_results: int
    ) -> list[SearchResult]:
        params = {"q": query, "category": category.value, "max": str(max_results)}
        try:
            resp = httpx.get(
                f"{self.endpoint}/search", params=params, timeout=self.timeout_s
            )
        except httpx.TransportError as exc:
            raise ProviderUnreachable(str(exc)) from exc
        if resp.status_code // 100 != 2:
            raise ProviderError(resp.status_code, resp.text)
        try:
            payload = resp.json()
            rows = payload["results"]
            instant = payload.get("instant_answer")
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(resp.status_code, f"malformed response: {exc}") from exc
        if category is SearchCategory.INSTANT:
            if not instant:
                return []
            return [
                SearchResult(
                    title=query,
                    url=f"{self.endpoint}/search?q={query}",
                    snippet=instant,
                    category=SearchCategory.INSTANT,
                )
            ]
        return [
            SearchResult(
                title=r.get("title", ""),
                url=r.get("url", ""),
                snippet=r.get("snippet", ""),
                category=category,
            )
            for r in rows
        ]


class DuckDuckGoSearchProvider:
    """Adapter onto the public DuckDuckGo instant-answer JSON API.

    The public JSON surface does not segment results by category, so link
    results are tagged with whatever category was asked for; the instant
    category maps to the abstract or direct answer.
    """

    def __init__(
        self,
        endpoint: str = "https://api.duckduckgo.com/",
        timeout_s: float = DEFAULT_TIMEOUT_S,
    ):
        self.endpoint = endpoint
        self.timeout_s = timeout_s

    def search(
        self, query: str, category: SearchCategory, max_results: int
    ) -> list[SearchResult]:
        params = {"q": query, "format": "json", "no_html": "1", "no_redirect": "1"}
        try:
            resp = httpx.get(self.endpoint, params=params, timeout=self.timeout_s)
        except httpx.TransportError as exc:
            raise ProviderUnreachable(str(exc)) from exc
        if resp.status_code // 100 != 2:
            raise ProviderError(resp.status_code, resp.text)
        try:
            data = resp.json()
        except ValueError as exc:
            raise ProviderError(resp.status_code, f"malformed response: {exc}") from exc
        instant = data.get("Answer") or data.get("AbstractText") or None
        if category is SearchCategory.INSTANT:
            if not instant:
                return []
            return [
                SearchResult(
                    title=data.get("Heading") or query,
                    url=data.get("AbstractURL") or self.endpoint,
                    snippet=str(instant),
                    category=SearchCategory.INSTANT,
                )
            ]
        results: list[SearchResult] = []
        stack = list(data.get("RelatedTopics") or [])
        while stack:
            item = stack.pop(0)
            if not isinstance(item, dict):
                continue
            if "Topics" in item:  # category grouping node
                stack = list(item["Topics"]) + stack
                continue
            url = item.get("FirstURL", "")
            text = item.get("Text", "")
            if not url:
                continue
            results.append(
                SearchResult(
                    title=text.split(" - ")[0] if text else url,
                    url=url,
                    snippet=text,
                    category=category,
                )
            )
        return results


class ScriptedSearchProvider:
    """In-process provider returning canned results; for tests and dry runs."""

    def __init__(
        self, results: list[SearchResult], instant_answer: str | None = None
    ):
        self.results = list(results)
        self.instant_answer = instant_answer
        self.calls: list[tuple[str, SearchCategory, int]] = []

    def search(
        self, query: str, category: SearchCategory, max_results: int
    ) -> list[SearchResult]:
        self.calls.append((query, category, max_results))
        if category is SearchCategory.INSTANT:
            if not self.instant_answer:
                return []
            return [
                SearchResult(
                    title=query,
                    url="https://instant.invalid/answer",
                    snippet=self.instant_answer,
                    category=SearchCategory.INSTANT,
                )
            ]
        return self.results


def web_search(
    provider: SearchProvider,
    query: str,
    category: SearchCategory = SearchCategory.TEXT,
    max_results: int = 10,
) -> list[SearchResult]:
    """Run a provider search, preserving order and capping at ``max_results``.

    The instant category yields at most one result whose snippet is the
    provider's direct answer.
    """
    if max_results <= 0:
        return []
    results = provider.search(query, category, max_results)
    if category is SearchCategory.INSTANT:
        return results[:1]
    return results[:max_results]


_TITLE_RE = re.compile(r"<title[^>]*>(.*?)</title>", re.IGNORECASE | re.DOTALL)


def fetch_page(
    url: str,
    *,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    max_bytes: int = MAX_BODY_BYTES,
) -> PageContent:
    """GET a page (following up to 5 redirects) and strip it to text.

    Bodies over the byte cap raise rather than truncate; content types
    other than HTML or text are refused.
    """
    scheme = urlparse(url).scheme
    if scheme not in ("http", "https"):
        raise FetchError(f"unsupported scheme {scheme!r}")
    try:
        with httpx.Client(
            follow_redirects=True, max_redirects=MAX_REDIRECTS, timeout=timeout_s
        ) as client:
            with client.stream("GET", url) as resp:
                if resp.status_code // 100 != 2:
                    raise FetchError(f"status {resp.status_code}", resp.status_code)
                ctype = resp.headers.get("content-type", "").lower()
                if not ("html" in ctype or "xml" in ctype or ctype.startswith("text/")):
                    raise NotHtmlText(f"content type {ctype!r}")
                chunks = []
                received = 0
                for chunk in resp.iter_bytes():
                    received += len(chunk)
                    if received > max_bytes:
                        raise BodyTooLarge(f"body exceeds {max_bytes} bytes")
                    chunks.append(chunk)
    except httpx.TooManyRedirects as exc:
        raise FetchError("too_many_redirects") from exc
    except httpx.TimeoutException as exc:
        raise FetchError(f"timeout: {exc}") from exc
    except httpx.TransportError as exc:
        raise FetchError(f"transport: {exc}") from exc
    body = b"".join(chunks).decode("utf-8", errors="replace")
    m = _TITLE_RE.search(body)
    title = strip_html(m.group(1)) if m else ""
    # the title element is head metadata, not body text
    return PageContent(
        url=url,
        title=title,
        text=strip_html(_TITLE_RE.sub(" ", body)),
        fetched_at=datetime.now(timezone.utc),
    )


def _sections(text: str, params: SummarizeParams) -> list[str]:
    """Non-overlapping sections of at most ``section_size_chars``, capped in count.

    Sections tile the text, so text beyond the cap is appended verbatim to
    the last kept section.
    """
    chunking = ChunkingParams(
        chunk_size=params.section_size_chars,
        overlap=0,
        separators=DEFAULT_SEPARATORS,
    )
    pieces = [c.text for c in split_text(text, chunking)]
    if len(pieces) > params.max_sections:
        head = pieces[: params.max_sections - 1]
        head.append("".join(pieces[params.max_sections - 1 :]))
        pieces = head
    return pieces


def _one_call(
    prompt: str, llm_config: llm.LlmEndpointConfig, gen: llm.GenParams
) -> str:
    reply = llm.chat_complete(llm_config, llm.user_bundle(prompt), gen)
    assert isinstance(reply, str)  # gen.stream is forced off by callers
    return reply


def summarize_long_text(
    text: str,
    params: SummarizeParams,
    llm_config: llm.LlmEndpointConfig,
    gen: llm.GenParams | None = None,
) -> Summary:
    """Map-reduce summarization: one LLM call per section, one final reduce.

    A single-section text needs exactly one call; n sections need n + 1.
    """
    if not text:
        raise EmptyText("nothing to summarize")
    gen = gen or llm.GenParams()
    if gen.stream:
        gen = llm.GenParams(temperature=gen.temperature, max_tokens=gen.max_tokens)
    sections = _sections(text, params)
    if len(sections) == 1:
        prompt = params.per_section_prompt.format(text=sections[0])
        try:
            reply = _one_call(prompt, llm_config, gen)
        except RagChatError as exc:
            raise SummarizeLlmError(0) from exc
        return Summary(text=reply, n_sections=1, n_llm_calls=1)
    section_summaries = []
    for i, section in enumerate(sections):
        prompt = params.per_section_prompt.format(text=section)
        try:
            section_summaries.append(_one_call(prompt, llm_config, gen))
        except RagChatError as exc:
            raise SummarizeLlmError(i) from exc
    final_prompt = params.final_prompt.format(summaries="\n".join(section_summaries))
    try:
        final = _one_call(final_prompt, llm_config, gen)
    except RagChatError as exc:
        raise SummarizeLlmError(len(sections)) from exc
    return Summary(
        text=final, n_sections=len(sections), n_llm_calls=len(sections) + 1
    )


def summarize_url(
    url: str,
    params: SummarizeParams,
    llm_config: llm.LlmEndpointConfig,
    gen: llm.GenParams | None = None,
) -> Summary:
    """Fetch a page and summarize its stripped text."""
    page = fetch_page(url)
    if not page.text:
        raise EmptyText(f"page {url} has no text content")
    return summarize_long_text(page.text, params, llm_config, gen)
