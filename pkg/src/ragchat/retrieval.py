"""Query-time orchestration: embed once, search a knowledge source, emit snippets.

Three kinds of knowledge source feed the same retrieve path: a persisted
corpus, a session's uploaded documents, and an ephemeral collection built
on the fly from live web pages.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Union

from .embedding import Embedder
from .exceptions import RagChatError, SourceUnavailable
from .ingest import ChunkingParams, split_text
from .store import Collection

logger = logging.getLogger(__name__)

DEFAULT_MAX_PAGES = 3


class RetrievalMode(enum.Enum):
    TOPK = "topk"
    MMR = "mmr"


@dataclass(frozen=True)
class RetrievalParams:
    """Search knobs: strategy, result count, pool width, diversity, threshold."""

    mode: RetrievalMode = RetrievalMode.MMR
    k: int = 4
    fetch_k: int | None = None
    lambda_: float = 0.5
    min_score: float = 0.0

    def __post_init__(self):
        if self.fetch_k is not None and self.fetch_k < self.k:
            raise ValueError("fetch_k must be >= k")


@dataclass(frozen=True)
class ContextSnippet:
    """Prompt-ready piece of retrieved context."""

    text: str
    source_uri: str
    score: float
    rank: int


@dataclass(frozen=True)
class Preindexed:
    """A persisted corpus opened read-only."""

    collection: Collection | None


@dataclass(frozen=True)
class SessionUploads:
    """The per-session collection of uploaded documents."""

    session_id: str
    collection: Collection | None = None


@dataclass(frozen=True)
class WebEphemeral:
    """An in-memory collection built from live web pages for one request."""

    query: str
    collection: Collection | None = None


KnowledgeSource = Union[Preindexed, SessionUploads, WebEphemeral]


def retrieve(
    query: str,
    source: KnowledgeSource,
    params: RetrievalParams,
    embedder: Embedder,
) -> list[ContextSnippet]:
    """Embed the query once and search the source's collection.

    Hits below ``params.min_score`` are dropped; at most ``params.k``
    snippets come back, ranked in search order with ``source_uri`` pulled
    from record metadata.
    """
    if not query:
        raise ValueError("query must be non-empty")
    collection = source.collection
    if collection is None:
        raise SourceUnavailable(f"no collection behind {type(source).__name__}")
    qvec = embedder([query])[0]
    if params.mode is RetrievalMode.TOPK:
        hits = collection.search_top_k(qvec, params.k)
    else:
        hits = collection.search_mmr(
            qvec, params.k, fetch_k=params.fetch_k, lambda_=params.lambda_
        )
    snippets = []
    for hit in hits:
        if hit.score < params.min_score:
            continue
        snippets.append(
            ContextSnippet(
                text=hit.text,
                source_uri=hit.metadata.get("source_uri", ""),
                score=hit.score,
                rank=len(snippets),
            )
        )
    return snippets


def build_web_corpus(
    query: str,
    search_client,
    max_pages: int,
    chunking: ChunkingParams,
    embedder: Embedder,
    fetcher: Callable | None = None,
) -> Collection:
    """Search the web, fetch and chunk the hits, and index them in memory.

    Individual fetch failures are skipped; the build fails only when no
    page at all could be retrieved. Chunk metadata carries the page URL.
    """
    from . import webtools  # local import keeps module load order flat

    fetch = fetcher or webtools.fetch_page
    results = webtools.web_search(
        search_client, query, webtools.SearchCategory.TEXT, max_pages
    )
    pages = []
    for res in results:
        try:
            pages.append(fetch(res.url))
        except RagChatError as exc:
            logger.warning("skipping %s: %s", res.url, exc)
    if not pages:
        raise SourceUnavailable(f"no web pages retrieved for {query!r}")
    chunks = []
    for page in pages:
        chunks.extend(
            split_text(
                page.text,
                chunking,
                doc_id=page.url,
                metadata={"url": page.url, "source_uri": page.url, "title": page.title},
            )
        )
    collection = Collection("web", dim=1)
    if chunks:
        vectors = embedder([c.text for c in chunks])
        collection = Collection("web", dim=vectors[0].dim)
        collection.add_records(
            (c.text, c.metadata, v) for c, v in zip(chunks, vectors)
        )
    return collection
