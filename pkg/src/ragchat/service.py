"""REST service: sessions with history, mode-dispatched messages, uploads, ASR.

Each session serializes its message processing FIFO behind a lock, histories
are append-only (with optional JSONL write-through under the data
directory), and failures of the model servers map to 502 with the failing
endpoint named in the body.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from fastapi import Body, FastAPI, File, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from . import __version__, media, webtools
from .config import ServiceConfig, load_config
from .embedding import Embedder, hash_embedder, provider_embedder
from .exceptions import (
    BudgetTooSmall,
    EmptyAudio,
    EmptyText,
    InvalidEncoding,
    RagChatError,
    SilentAudio,
    SourceUnavailable,
    UnsupportedFormat,
)
from .ingest import DocumentFormat, load_document, split_document
from .llm import ChatMessage, GenParams, assemble_prompt, chat_complete
from .retrieval import (
    Preindexed,
    RetrievalMode,
    RetrievalParams,
    SessionUploads,
    WebEphemeral,
    build_web_corpus,
    retrieve,
)
from .store import Collection
from .store import load as load_collection

logger = logging.getLogger(__name__)

_UPLOAD_SUFFIXES = {
    ".txt": DocumentFormat.PLAIN,
    ".md": DocumentFormat.MARKDOWN,
    ".markdown": DocumentFormat.MARKDOWN,
    ".html": DocumentFormat.HTML,
    ".htm": DocumentFormat.HTML,
}

_FILE_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class Mode(enum.Enum):
    ASSISTANT = "assistant"
    RAG_PREINDEXED = "rag_preindexed"
    RAG_UPLOAD = "rag_upload"
    RAG_WEB = "rag_web"
    SUMMARIZE_URL = "summarize_url"
    IMAGE_GENERATE = "image_generate"
    IMAGE_UNDERSTAND = "image_understand"


LLM_TEXT_MODES = (
    Mode.ASSISTANT,
    Mode.RAG_PREINDEXED,
    Mode.RAG_UPLOAD,
    Mode.RAG_WEB,
)


class UnknownSession(RagChatError):
    pass


class ClientError(RagChatError):
    """Request is malformed in a way the caller can fix (HTTP 400)."""


class UploadTooLarge(RagChatError):
    pass


class UnsupportedUpload(RagChatError):
    pass


class DownstreamError(RagChatError):
    """A dependency endpoint failed; carries which one (HTTP 502)."""

    def __init__(self, endpoint: str, cause: Exception):
        super().__init__(f"{endpoint}: {cause}")
        self.endpoint = endpoint
        self.cause = cause


@dataclass
class TurnRecord:
    role: str  # "user" | "assistant"
    mode: str
    content: str
    attachments: list[dict] = field(default_factory=list)
    timestamp: float = 0.0

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "mode": self.mode,
            "content": self.content,
            "attachments": self.attachments,
            "timestamp": self.timestamp,
        }


@dataclass
class Session:
    id: str
    created_at: float
    history: list[TurnRecord] = field(default_factory=list)
    uploads: Collection | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class ChatEngine:
    """Mode dispatch, session state, and downstream client orchestration."""

    def __init__(self, config: ServiceConfig, embedder: Embedder | None = None):
        self.config = config
        if embedder is not None:
            self.embedder = embedder
        elif config.embed is not None:
            self.embedder = provider_embedder(config.embed)
        else:
            self.embedder = hash_embedder()
        self._sessions: dict[str, Session] = {}
        self._table_lock = threading.Lock()
        self._preindexed: Collection | None = None
        self._preindexed_loaded = False
        if config.data_dir:
            self._files_dir = Path(config.data_dir) / "files"
            self._sessions_dir = Path(config.data_dir) / "sessions"
        else:
            scratch = Path(tempfile.mkdtemp(prefix="ragchat-"))
            self._files_dir = scratch / "files"
            self._sessions_dir = None

    # -- sessions ------------------------------------------------------------

    def create_session(self) -> str:
        session = Session(id=str(uuid.uuid4()), created_at=time.time())
        with self._table_lock:
            self._sessions[session.id] = session
        return session.id

    def _session(self, session_id: str) -> Session:
        with self._table_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        return session

    def get_history(self, session_id: str) -> list[TurnRecord]:
        return list(self._session(session_id).history)

    def _append_exchange(
        self,
        session: Session,
        mode: Mode,
        user_content: str,
        user_attachments: list[dict],
        reply: str,
        reply_attachments: list[dict],
    ) -> None:
        records = [
            TurnRecord("user", mode.value, user_content, user_attachments, time.time()),
            TurnRecord("assistant", mode.value, reply, reply_attachments, time.time()),
        ]
        session.history.extend(records)
        if self._sessions_dir is not None:
            self._sessions_dir.mkdir(parents=True, exist_ok=True)
            with open(self._sessions_dir / f"{session.id}.jsonl", "a", encoding="utf-8") as f:
                for rec in records:
                    f.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")

    # -- uploads and files -----------------------------------------------------

    def upload_file(self, session_id: str, filename: str, data: bytes) -> dict:
        session = self._session(session_id)
        if len(data) > self.config.upload_limit_bytes:
            raise UploadTooLarge(
                f"{len(data)} bytes exceeds limit {self.config.upload_limit_bytes}"
            )
        suffix = Path(filename or "upload").suffix.lower()
        fmt = _UPLOAD_SUFFIXES.get(suffix)
        if fmt is None:
            raise UnsupportedUpload(f"unsupported upload type {suffix or '(none)'}")
        try:
            doc = load_document(data, fmt, filename)
        except (InvalidEncoding, UnsupportedFormat) as exc:
            raise UnsupportedUpload(str(exc)) from exc
        upload_id = uuid.uuid4().hex
        doc.metadata["upload_id"] = upload_id
        chunks = split_document(doc, self.config.chunking)
        with session.lock:
            if chunks:
                try:
                    vectors = self.embedder([c.text for c in chunks])
                except RagChatError as exc:
                    raise DownstreamError("embeddings", exc) from exc
                if session.uploads is None:
                    session.uploads = Collection(
                        f"uploads-{session.id}", vectors[0].dim
                    )
                session.uploads.add_records(
                    (c.text, c.metadata, v) for c, v in zip(chunks, vectors)
                )
        return {"upload_id": upload_id, "chunks_indexed": len(chunks)}

    def files_dir(self) -> Path:
        self._files_dir.mkdir(parents=True, exist_ok=True)
        return self._files_dir

    def save_file(self, data: bytes, suffix: str) -> str:
        name = uuid.uuid4().hex + suffix
        (self.files_dir() / name).write_bytes(data)
        return name

    # -- retrieval plumbing ----------------------------------------------------

    def preindexed_collection(self) -> Collection:
        if not self._preindexed_loaded:
            if not self.config.preindexed_dir:
                raise SourceUnavailable("no preindexed collection configured")
            try:
                self._preindexed = load_collection(self.config.preindexed_dir)
            except (OSError, RagChatError) as exc:
                raise SourceUnavailable(f"preindexed collection: {exc}") from exc
            self._preindexed_loaded = True
        assert self._preindexed is not None
        return self._preindexed

    def _retrieval_params(self, overrides: dict) -> RetrievalParams:
        base = self.config.retrieval
        try:
            return RetrievalParams(
                mode=RetrievalMode(overrides.get("retrieval_mode", base.mode.value)),
                k=int(overrides.get("k", base.k)),
                fetch_k=(
                    int(overrides["fetch_k"]) if "fetch_k" in overrides else base.fetch_k
                ),
                lambda_=float(overrides.get("lambda", base.lambda_)),
                min_score=float(overrides.get("min_score", base.min_score)),
            )
        except (TypeError, ValueError) as exc:
            raise ClientError(f"bad retrieval params: {exc}") from exc

    def _snippets_for(self, session: Session, mode: Mode, query: str, params: RetrievalParams):
        if mode is Mode.ASSISTANT:
            return []
        if mode is Mode.RAG_PREINDEXED:
            try:
                source = Preindexed(self.preindexed_collection())
            except SourceUnavailable as exc:
                raise DownstreamError("preindexed_collection", exc) from exc
        elif mode is Mode.RAG_UPLOAD:
            if session.uploads is None:
                raise ClientError("session has no uploaded documents")
            source = SessionUploads(session.id, session.uploads)
        else:  # RAG_WEB
            if self.config.search_endpoint:
                provider = webtools.HttpSearchProvider(self.config.search_endpoint)
            else:
                provider = webtools.DuckDuckGoSearchProvider()
            try:
                corpus = build_web_corpus(
                    query,
                    provider,
                    self.config.max_pages,
                    self.config.chunking,
                    self.embedder,
                )
            except SourceUnavailable as exc:
                raise DownstreamError("web_corpus", exc) from exc
            except RagChatError as exc:
                raise DownstreamError("search", exc) from exc
            source = WebEphemeral(query, corpus)
        try:
            return retrieve(query, source, params, self.embedder)
        except RagChatError as exc:
            raise DownstreamError("embeddings", exc) from exc

    # -- message dispatch --------------------------------------------------------

    def _gen_params(self, overrides: dict, stream: bool) -> GenParams:
        base = self.config.gen
        try:
            return GenParams(
                temperature=float(overrides.get("temperature", base.temperature)),
                max_tokens=int(overrides.get("max_tokens", base.max_tokens)),
                stream=stream,
            )
        except (TypeError, ValueError) as exc:
            raise ClientError(f"bad generation params: {exc}") from exc

    def _llm_bundle(self, session: Session, mode: Mode, content: str, params: RetrievalParams):
        snippets = self._snippets_for(session, mode, content, params)
        history = [ChatMessage(t.role, t.content) for t in session.history]
        try:
            return assemble_prompt(
                self.config.system_prompt,
                snippets,
                history,
                content,
                self.config.context_budget_tokens,
            )
        except BudgetTooSmall as exc:
            raise ClientError(str(exc)) from exc

    def post_message(
        self,
        session_id: str,
        mode_name: str,
        content: str,
        attachments: list[dict] | None = None,
        overrides: dict | None = None,
        base_url: str = "",
    ) -> dict:
        """Process one exchange and append both turns; returns the reply."""
        session, mode, attachments, overrides = self._validate_message(
            session_id, mode_name, content, attachments, overrides
        )
        with session.lock:
            reply, reply_attachments, extra = self._dispatch(
                session, mode, content, attachments, overrides, base_url
            )
            self._append_exchange(session, mode, content, attachments, reply, reply_attachments)
        return {"reply": reply, "attachments": reply_attachments, **extra}

    def post_message_stream(
        self,
        session_id: str,
        mode_name: str,
        content: str,
        attachments: list[dict] | None = None,
        overrides: dict | None = None,
    ) -> Iterator[str]:
        """Streaming variant for the LLM-backed modes; yields content deltas.

        The session lock is held until the stream finishes, preserving the
        per-session FIFO contract; the exchange lands in history only after
        the final delta.
        """
        session, mode, attachments, overrides = self._validate_message(
            session_id, mode_name, content, attachments, overrides
        )
        if mode not in LLM_TEXT_MODES:
            raise ClientError(f"mode {mode.value} does not support streaming")

        def run() -> Iterator[str]:
            with session.lock:
                params = self._retrieval_params(overrides)
                bundle = self._llm_bundle(session, mode, content, params)
                gen = self._gen_params(overrides, stream=True)
                try:
                    deltas = chat_complete(self.config.llm, bundle, gen)
                    parts: list[str] = []
                    for delta in deltas:
                        parts.append(delta)
                        yield delta
                except RagChatError as exc:
                    raise DownstreamError("llm", exc) from exc
                self._append_exchange(
                    session, mode, content, attachments, "".join(parts), []
                )

        return run()

    def _validate_message(self, session_id, mode_name, content, attachments, overrides):
        session = self._session(session_id)
        try:
            mode = Mode(mode_name)
        except ValueError:
            raise ClientError(f"unknown mode {mode_name!r}") from None
        attachments = list(attachments or [])
        if not all(
            isinstance(a, dict) and isinstance(a.get("ref", ""), str)
            for a in attachments
        ):
            raise ClientError("attachments must be objects with a string ref")
        overrides = dict(overrides or {})
        if mode is Mode.IMAGE_UNDERSTAND:
            if not any(a.get("kind") == "image" and a.get("ref") for a in attachments):
                raise ClientError("image_understand requires an image attachment")
        elif not content:
            raise ClientError("content must be non-empty")
        return session, mode, attachments, overrides

    def _dispatch(self, session, mode, content, attachments, overrides, base_url):
        if mode in LLM_TEXT_MODES:
            params = self._retrieval_params(overrides)
            bundle = self._llm_bundle(session, mode, content, params)
            gen = self._gen_params(overrides, stream=False)
            try:
                reply = chat_complete(self.config.llm, bundle, gen)
            except RagChatError as exc:
                raise DownstreamError("llm", exc) from exc
            return reply, [], {}
        if mode is Mode.SUMMARIZE_URL:
            try:
                summary = webtools.summarize_url(
                    content.strip(), self.config.summarize, self.config.llm
                )
            except EmptyText as exc:
                raise ClientError(str(exc)) from exc
            except RagChatError as exc:
                raise DownstreamError("summarize", exc) from exc
            return summary.text, [], {
                "summary": {
                    "n_sections": summary.n_sections,
                    "n_llm_calls": summary.n_llm_calls,
                }
            }
        if mode is Mode.IMAGE_GENERATE:
            gen_params = self._image_params(overrides)
            try:
                png, _meta = media.generate_image(
                    self.config.image_gen_endpoint, content, gen_params
                )
            except RagChatError as exc:
                raise DownstreamError("image_generate", exc) from exc
            name = self.save_file(png, ".png")
            return "", [{"kind": "image", "ref": f"/api/files/{name}"}], {}
        # IMAGE_UNDERSTAND
        ref = next(a["ref"] for a in attachments if a.get("kind") == "image")
        image_url = self._resolve_ref(ref, base_url)
        try:
            text = media.understand_image(
                self.config.image_understand_endpoint,
                media.ImageUnderstandRequest(prompt=content, image_url=image_url),
            )
        except RagChatError as exc:
            raise DownstreamError("image_understand", exc) from exc
        return text, [], {}

    def _image_params(self, overrides: dict) -> media.ImageGenParams:
        try:
            return media.ImageGenParams(
                num_inference_steps=int(
                    overrides.get("num_inference_steps", media.DEFAULT_INFERENCE_STEPS)
                ),
                guidance_scale=float(
                    overrides.get("guidance_scale", media.DEFAULT_GUIDANCE_SCALE)
                ),
                width=int(overrides.get("width", media.DEFAULT_IMAGE_SIZE)),
                height=int(overrides.get("height", media.DEFAULT_IMAGE_SIZE)),
                seed=int(overrides["seed"]) if "seed" in overrides else None,
            )
        except (TypeError, ValueError) as exc:
            raise ClientError(f"bad image params: {exc}") from exc

    @staticmethod
    def _resolve_ref(ref: str, base_url: str) -> str:
        if ref.startswith("/") and base_url:
            return base_url.rstrip("/") + ref
        return ref

    # -- speech -------------------------------------------------------------------

    def asr(self, payload: dict) -> str:
        try:
            sampling_rate = int(payload["sampling_rate"])
            raw = [float(s) for s in payload["raw"]]
            audio = media.audio_from_samples(sampling_rate, raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ClientError(f"bad audio payload: {exc}") from exc
        try:
            normalized = media.normalize_audio(audio)
        except (EmptyAudio, SilentAudio) as exc:
            raise ClientError(str(exc)) from exc
        try:
            return media.transcribe(self.config.asr_endpoint, normalized).text
        except RagChatError as exc:
            raise DownstreamError("asr", exc) from exc


def _error_response(exc: Exception) -> JSONResponse:
    if isinstance(exc, UnknownSession):
        return JSONResponse({"detail": f"unknown session {exc}"}, status_code=404)
    if isinstance(exc, ClientError):
        return JSONResponse({"detail": str(exc)}, status_code=400)
    if isinstance(exc, UploadTooLarge):
        return JSONResponse({"detail": str(exc)}, status_code=413)
    if isinstance(exc, UnsupportedUpload):
        return JSONResponse({"detail": str(exc)}, status_code=415)
    if isinstance(exc, DownstreamError):
        logger.warning("downstream failure at %s: %s", exc.endpoint, exc.cause)
        return JSONResponse(
            {"detail": {"endpoint": exc.endpoint, "error": str(exc.cause)}},
            status_code=502,
        )
    logger.error("unhandled domain error: %s", exc)
    return JSONResponse({"detail": str(exc)}, status_code=500)


def create_app(
    config: ServiceConfig | None = None,
    engine: ChatEngine | None = None,
    ui_dir: str | None = None,
) -> FastAPI:
    """Build the FastAPI app around a ChatEngine."""
    engine = engine or ChatEngine(config or load_config())
    app = FastAPI(title="ragchat", version=__version__)
    app.state.engine = engine
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(RagChatError)
    def handle_domain_error(request, exc: RagChatError):
        return _error_response(exc)

    @app.post("/api/sessions", status_code=201)
    def create_session():
        return {"session_id": engine.create_session()}

    @app.get("/api/sessions/{session_id}/messages")
    def get_messages(session_id: str):
        return [t.to_dict() for t in engine.get_history(session_id)]

    @app.post("/api/sessions/{session_id}/messages")
    def post_message(session_id: str, request: Request, payload: dict = Body(...)):
        mode = payload.get("mode", "")
        content = payload.get("content", "") or ""
        attachments = payload.get("attachments") or []
        overrides = payload.get("params") or {}
        stream = bool(payload.get("stream") or overrides.get("stream"))
        if stream:
            deltas = engine.post_message_stream(
                session_id, mode, content, attachments, overrides
            )

            def sse() -> Iterator[str]:
                try:
                    for delta in deltas:
                        yield f"data: {json.dumps({'delta': delta})}\n\n"
                except RagChatError as exc:
                    detail = (
                        {"endpoint": exc.endpoint, "error": str(exc.cause)}
                        if isinstance(exc, DownstreamError)
                        else str(exc)
                    )
                    yield f"data: {json.dumps({'error': detail})}\n\n"
                yield "data: [DONE]\n\n"

            return StreamingResponse(sse(), media_type="text/event-stream")
        return engine.post_message(
            session_id, mode, content, attachments, overrides,
            base_url=str(request.base_url),
        )

    @app.post("/api/sessions/{session_id}/uploads")
    def upload(session_id: str, file: UploadFile = File(...)):
        data = file.file.read()
        return engine.upload_file(session_id, file.filename or "upload", data)

    @app.post("/api/asr")
    def asr(payload: dict = Body(...)):
        return {"text": engine.asr(payload)}

    @app.get("/api/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/api/files/{name}")
    def get_file(name: str):
        if not _FILE_NAME_RE.match(name):
            return JSONResponse({"detail": "bad file name"}, status_code=400)
        path = engine.files_dir() / name
        if not path.is_file():
            return JSONResponse({"detail": "file not found"}, status_code=404)
        return FileResponse(path)

    if ui_dir:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
