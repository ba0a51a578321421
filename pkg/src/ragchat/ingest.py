"""Document loading, HTML stripping, and overlapping text chunking.

Chunks carry exact character spans into the source document so that
coverage and ordering are checkable properties, not conventions.
"""

from __future__ import annotations

import enum
import os
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import InvalidEncoding, UnsupportedFormat

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_OVERLAP = 150
DEFAULT_SEPARATORS = ("\n\n", "\n", " ", "")

EXTRACT_CMD_ENV = "EXTRACT_CMD"


class DocumentFormat(enum.Enum):
    PLAIN = "plain"
    MARKDOWN = "markdown"
    HTML = "html"


@dataclass
class Document:
    """A loaded text document with its origin and free-form metadata."""

    id: str
    source_uri: str
    format: DocumentFormat
    text: str
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ChunkingParams:
    """Controls chunk width, overlap, and the separator hierarchy.

    ``separators`` is tried in order; an empty string entry (or an empty
    list) means "hard sliding window". Sizes are in characters.
    """

    chunk_size: int = DEFAULT_CHUNK_SIZE
    overlap: int = DEFAULT_OVERLAP
    separators: tuple[str, ...] = DEFAULT_SEPARATORS

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < chunk_size, got {self.overlap}"
            )


@dataclass
class Chunk:
    """A contiguous slice of a document; ``span`` is half-open into the source text."""

    doc_id: str
    index: int
    text: str
    span: tuple[int, int]
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass
class IngestResult:
    """Chunks plus the non-fatal skip and error records of one ingestion run."""

    chunks: list[Chunk] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)


_TAG_RE = re.compile(r"<(/?)([a-zA-Z][a-zA-Z0-9:-]*)([^<>]*)>")
_WS_RE = re.compile(r"\s+")

# Order matters: &amp; decodes last so "&amp;lt;" stays a literal "&lt;".
_ENTITIES = (
    ("&lt;", "<"),
    ("&gt;", ">"),
    ("&quot;", '"'),
    ("&#39;", "'"),
    ("&nbsp;", " "),
    ("&amp;", "&"),
)

_RAW_TEXT_TAGS = ("script", "style")


def strip_html(html: str) -> str:
    """Strip markup from HTML with a single linear tag scan.

    Tags are replaced by whitespace, script/style contents are dropped,
    the common entities are decoded, and whitespace runs collapse to one
    space. Malformed markup degrades to text: a ``<`` that does not open
    a recognizable tag is kept verbatim.
    """
    out: list[str] = []
    i, n = 0, len(html)
    while i < n:
        ch = html[i]
        if ch != "<":
            out.append(ch)
            i += 1
            continue
        if html.startswith("<!--", i):
            end = html.find("-->", i + 4)
            i = n if end < 0 else end + 3
            out.append(" ")
            continue
        if i + 1 < n and html[i + 1] in "!?":
            end = html.find(">", i + 2)
            i = n if end < 0 else end + 1
            out.append(" ")
            continue
        m = _TAG_RE.match(html, i)
        if m is None:
            out.append(ch)
            i += 1
            continue
        closing, name = m.group(1), m.group(2).lower()
        i = m.end()
        out.append(" ")
        if not closing and name in _RAW_TEXT_TAGS:
            close = re.search(rf"</\s*{name}\s*>", html[i:], re.IGNORECASE)
            i = n if close is None else i + close.end()
    text = "".join(out)
    for entity, repl in _ENTITIES:
        text = text.replace(entity, repl)
    return _WS_RE.sub(" ", text).strip()


def load_document(data: bytes, format_hint: DocumentFormat, source_uri: str) -> Document:
    """Decode ``data`` according to ``format_hint`` into a Document.

    Plain and markdown content must be valid UTF-8; HTML is decoded
    leniently and stripped to text.
    """
    if format_hint in (DocumentFormat.PLAIN, DocumentFormat.MARKDOWN):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidEncoding(f"{source_uri}: not valid UTF-8") from exc
    elif format_hint is DocumentFormat.HTML:
        text = strip_html(data.decode("utf-8", errors="replace"))
    else:
        raise UnsupportedFormat(f"unknown format {format_hint!r}")
    return Document(id=source_uri, source_uri=source_uri, format=format_hint, text=text)


def _window_spans(start: int, end: int, size: int, overlap: int) -> list[tuple[int, int]]:
    """Sliding-window spans of width ``size`` and stride ``size - overlap``."""
    if end - start <= size:
        return [(start, end)]
    stride = size - overlap
    spans = []
    pos = start
    while True:
        if pos + size >= end:
            spans.append((pos, end))
            return spans
        spans.append((pos, pos + size))
        pos += stride


def _split_keep_sep(text: str, start: int, end: int, sep: str) -> list[tuple[int, int]]:
    """Split [start, end) at ``sep``, keeping the separator on the left piece."""
    pieces = []
    pos = start
    while pos < end:
        hit = text.find(sep, pos, end)
        if hit < 0:
            pieces.append((pos, end))
            break
        cut = hit + len(sep)
        pieces.append((pos, cut))
        pos = cut
    return pieces


def _unit_spans(
    text: str, start: int, end: int, seps: tuple[str, ...], params: ChunkingParams
) -> list[tuple[int, int]]:
    """Atomic unit spans for [start, end), each at most chunk_size wide.

    Tries separators in order, recursing into oversized pieces with the
    remaining hierarchy; falls back to the sliding window once the
    hierarchy is exhausted (an empty-string separator marks exhaustion).
    """
    if end - start <= params.chunk_size:
        return [(start, end)]
    for si, sep in enumerate(seps):
        if sep == "":
            break
        pieces = _split_keep_sep(text, start, end, sep)
        if len(pieces) <= 1:
            continue
        units: list[tuple[int, int]] = []
        for ps, pe in pieces:
            if pe - ps > params.chunk_size:
                units.extend(_unit_spans(text, ps, pe, seps[si + 1 :], params))
            else:
                units.append((ps, pe))
        return units
    return _window_spans(start, end, params.chunk_size, params.overlap)


def _carry_suffix(
    units: list[tuple[int, int]], overlap: int, room: int
) -> list[tuple[int, int]]:
    """Trailing contiguous units of a closed chunk worth carrying forward.

    Total carried width stays within both the overlap budget and the room
    left beside the incoming unit, so the new chunk respects chunk_size.
    """
    allowed = min(overlap, room)
    if allowed <= 0:
        return []
    carry: list[tuple[int, int]] = []
    total = 0
    for u in reversed(units):
        width = u[1] - u[0]
        if total + width > allowed:
            break
        if carry and u[1] != carry[0][0]:
            break
        carry.insert(0, u)
        total += width
    return carry


def _pack_units(
    units: list[tuple[int, int]], params: ChunkingParams
) -> list[tuple[int, int]]:
    """Greedily pack consecutive unit spans into chunk spans of bounded width."""
    size = params.chunk_size
    spans: list[tuple[int, int]] = []
    cur: list[tuple[int, int]] = []
    for u in units:
        if not cur:
            cur = [u]
            continue
        contiguous = u[0] == cur[-1][1]
        if contiguous and u[1] - cur[0][0] <= size:
            cur.append(u)
            continue
        spans.append((cur[0][0], cur[-1][1]))
        carry = _carry_suffix(cur, params.overlap, size - (u[1] - u[0])) if contiguous else []
        cur = carry + [u]
    if cur:
        spans.append((cur[0][0], cur[-1][1]))
    return spans


def split_text(
    text: str,
    params: ChunkingParams,
    *,
    doc_id: str = "",
    metadata: dict[str, str] | None = None,
) -> list[Chunk]:
    """Segment ``text`` into ordered, overlapping chunks covering every character.

    With an empty separator list the result is a plain sliding window of
    width ``chunk_size`` and stride ``chunk_size - overlap``. Otherwise the
    text is split into atomic units along the separator hierarchy, units are
    packed greedily up to ``chunk_size``, and each new chunk re-starts with
    the trailing units of its predecessor up to ``overlap`` characters.
    """
    if text == "":
        return []
    if len(params.separators) == 0:
        spans = _window_spans(0, len(text), params.chunk_size, params.overlap)
    else:
        units = _unit_spans(text, 0, len(text), params.separators, params)
        spans = _pack_units(units, params)
    base = dict(metadata or {})
    return [
        Chunk(
            doc_id=doc_id,
            index=i,
            text=text[s:e],
            span=(s, e),
            metadata={**base, "chunk_index": str(i)},
        )
        for i, (s, e) in enumerate(spans)
    ]


def split_document(doc: Document, params: ChunkingParams) -> list[Chunk]:
    """Chunk a document, stamping source metadata onto every chunk."""
    meta = {**doc.metadata, "source_uri": doc.source_uri, "doc_id": doc.id}
    return split_text(doc.text, params, doc_id=doc.id, metadata=meta)


_FORMAT_BY_SUFFIX = {
    ".txt": DocumentFormat.PLAIN,
    ".md": DocumentFormat.MARKDOWN,
    ".markdown": DocumentFormat.MARKDOWN,
    ".html": DocumentFormat.HTML,
    ".htm": DocumentFormat.HTML,
}


def _extract_pdf(data: bytes, path: str) -> str:
    """Run the external extractor command over PDF bytes (stdin -> stdout UTF-8)."""
    cmd = os.environ.get(EXTRACT_CMD_ENV, "").strip()
    if not cmd:
        raise UnsupportedFormat(f"{path}: no {EXTRACT_CMD_ENV} configured for PDF input")
    proc = subprocess.run(cmd, shell=True, input=data, capture_output=True)
    if proc.returncode != 0:
        raise UnsupportedFormat(f"{path}: extractor exited {proc.returncode}")
    try:
        return proc.stdout.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidEncoding(f"{path}: extractor output not UTF-8") from exc


def ingest_paths(paths: list[str | Path], params: ChunkingParams) -> IngestResult:
    """Load and chunk every supported file under ``paths``.

    Directories are walked recursively. Unsupported extensions are skipped
    with a record; unreadable files are collected as errors, not raised.
    """
    result = IngestResult()
    files: list[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(q for q in p.rglob("*") if q.is_file()))
        else:
            files.append(p)
    for path in files:
        suffix = path.suffix.lower()
        if suffix == ".pdf":
            try:
                data = path.read_bytes()
                text = _extract_pdf(data, str(path))
            except (UnsupportedFormat, InvalidEncoding) as exc:
                result.skipped.append((str(path), str(exc)))
                continue
            except OSError as exc:
                result.errors.append((str(path), str(exc)))
                continue
            doc = Document(
                id=str(path),
                source_uri=str(path),
                format=DocumentFormat.PLAIN,
                text=text,
                metadata={"title": path.name},
            )
        elif suffix in _FORMAT_BY_SUFFIX:
            try:
                data = path.read_bytes()
            except OSError as exc:
                result.errors.append((str(path), str(exc)))
                continue
            try:
                doc = load_document(data, _FORMAT_BY_SUFFIX[suffix], str(path))
            except (InvalidEncoding, UnsupportedFormat) as exc:
                result.skipped.append((str(path), str(exc)))
                continue
            doc.metadata["title"] = path.name
        else:
            result.skipped.append((str(path), f"unsupported extension {suffix or '(none)'}"))
            continue
        result.chunks.extend(split_document(doc, params))
    return result
