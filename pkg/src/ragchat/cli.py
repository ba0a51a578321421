"""Operator command line: index corpora, query them, run the service and mocks.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import wave
from pathlib import Path

import httpx

from . import __version__
from .config import load_config
from .embedding import hash_embedder, provider_embedder
from .exceptions import PortInUse, RagChatError
from .ingest import ChunkingParams, ingest_paths
from .retrieval import RetrievalMode
from .store import Collection, load, persist

DEFAULT_SERVICE_URL = "http://127.0.0.1:8000"
SERVICE_URL_ENV = "SERVICE_URL"

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ragchat", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ragchat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="chunk, embed, and persist a document directory")
    p.add_argument("dir", help="directory (or file) to ingest")
    p.add_argument("--collection", default="main")
    p.add_argument("--chunk-size", type=int, default=ChunkingParams().chunk_size)
    p.add_argument("--overlap", type=int, default=ChunkingParams().overlap)
    p.add_argument("--out", default="", help="override PREINDEXED_DIR")

    p = sub.add_parser("query", help="search a persisted collection")
    p.add_argument("collection")
    p.add_argument("question")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--mode", choices=["topk", "mmr"], default="mmr")
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.5)
    p.add_argument("--fetch-k", type=int, default=0)
    p.add_argument("--min-score", type=float, default=None)
    p.add_argument("--json", action="store_true", help="one JSON object per line")
    p.add_argument("--out", default="", help="override PREINDEXED_DIR")

    p = sub.add_parser("chat", help="interactive REPL against a running service")
    p.add_argument("--mode", default="assistant")
    p.add_argument("--url", default="")
    p.add_argument("--session-file", default="", help="persist the session id here")

    p = sub.add_parser("summarize", help="summarize a URL or a local text file")
    p.add_argument("target")
    p.add_argument("--section-size", type=int, default=None)
    p.add_argument("--max-sections", type=int, default=None)

    p = sub.add_parser("asr", help="transcribe a PCM16 mono WAV via the service")
    p.add_argument("wav")
    p.add_argument("--url", default="")

    p = sub.add_parser("serve", help="run the REST service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", default="", help="serve a static UI from this directory")

    p = sub.add_parser("mock-serve", help="run all model-server mocks on one port")
    p.add_argument("--port", type=int, default=8765)
    return parser


def _embedder():
    config = load_config()
    if config.embed is not None:
        return provider_embedder(config.embed)
    return hash_embedder()


def _store_dir(out_flag: str, collection: str) -> Path:
    base = out_flag or os.environ.get("PREINDEXED_DIR", "") or "."
    return Path(base) / collection


def _cmd_index(args) -> int:
    params = ChunkingParams(chunk_size=args.chunk_size, overlap=args.overlap)
    result = ingest_paths([args.dir], params)
    if result.errors:
        for path, message in result.errors:
            print(f"error: {path}: {message}", file=sys.stderr)
        return RUNTIME_ERROR
    for path, reason in result.skipped:
        print(f"skipped: {path}: {reason}", file=sys.stderr)
    chunks = result.chunks
    if chunks:
        vectors = _embedder()([c.text for c in chunks])
        collection = Collection(args.collection, vectors[0].dim)
        collection.add_records(
            (c.text, c.metadata, v) for c, v in zip(chunks, vectors)
        )
    else:
        collection = Collection(args.collection, 1)
    persist(collection, _store_dir(args.out, args.collection))
    print(f"indexed {len(chunks)} chunks")
    return 0


def _cmd_query(args, parser: _Parser) -> int:
    if not 0.0 <= args.lambda_ <= 1.0:
        parser.error(f"--lambda must be in [0, 1], got {args.lambda_}")
    if args.k < 0:
        parser.error(f"--k must be >= 0, got {args.k}")
    collection = load(_store_dir(args.out, args.collection))
    if len(collection) == 0:
        return 0
    qvec = _embedder()([args.question])[0]
    if args.mode == RetrievalMode.TOPK.value:
        hits = collection.search_top_k(qvec, args.k)
    else:
        hits = collection.search_mmr(
            qvec, args.k, fetch_k=args.fetch_k or None, lambda_=args.lambda_
        )
    if args.min_score is not None:
        hits = [h for h in hits if h.score >= args.min_score]
    for rank, hit in enumerate(hits):
        source = hit.metadata.get("source_uri", "")
        if args.json:
            print(
                json.dumps(
                    {
                        "rank": rank,
                        "score": hit.score,
                        "source_uri": source,
                        "text": hit.text,
                    },
                    ensure_ascii=False,
                )
            )
        else:
            preview = hit.text[:120].replace("\n", " ")
            print(f"{rank}  {hit.score:.4f}  {source}  {preview}")
    return 0


def _service_url(flag: str) -> str:
    return flag or os.environ.get(SERVICE_URL_ENV, "") or DEFAULT_SERVICE_URL


def _cmd_chat(args) -> int:
    url = _service_url(args.url)
    session_id = ""
    session_file = Path(args.session_file) if args.session_file else None
    if session_file and session_file.exists():
        session_id = session_file.read_text().strip()
    with httpx.Client(base_url=url, timeout=120) as client:
        if not session_id:
            session_id = client.post("/api/sessions").json()["session_id"]
            if session_file:
                session_file.write_text(session_id)
        print(f"session {session_id} mode {args.mode} (EOF to quit)")
        while True:
            try:
                line = input("> ")
            except EOFError:
                print()
                return 0
            if not line.strip():
                continue
            resp = client.post(
                f"/api/sessions/{session_id}/messages",
                json={"mode": args.mode, "content": line},
            )
            if resp.status_code != 200:
                print(f"error {resp.status_code}: {resp.text}", file=sys.stderr)
                continue
            print(resp.json()["reply"])


def _cmd_summarize(args) -> int:
    from .webtools import SummarizeParams, summarize_long_text, summarize_url

    config = load_config()
    kwargs = {}
    if args.section_size is not None:
        kwargs["section_size_chars"] = args.section_size
    if args.max_sections is not None:
        kwargs["max_sections"] = args.max_sections
    params = SummarizeParams(**kwargs) if kwargs else config.summarize
    if args.target.startswith(("http://", "https://")):
        summary = summarize_url(args.target, params, config.llm)
    else:
        text = Path(args.target).read_text(encoding="utf-8")
        summary = summarize_long_text(text, params, config.llm)
    print(summary.text)
    print(f"sections={summary.n_sections} llm_calls={summary.n_llm_calls}")
    return 0


def _read_wav(path: str) -> tuple[int, list[float]]:
    """Read a PCM16 mono WAV into floats in [-1, 1]."""
    with wave.open(path, "rb") as w:
        if w.getnchannels() != 1:
            raise RagChatError(f"expected mono WAV, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise RagChatError(
                f"expected 16-bit PCM WAV, got {8 * w.getsampwidth()}-bit"
            )
        rate = w.getframerate()
        frames = w.readframes(w.getnframes())
    samples = [
        int.from_bytes(frames[i : i + 2], "little", signed=True) / 32768.0
        for i in range(0, len(frames), 2)
    ]
    return rate, samples


def _cmd_asr(args) -> int:
    from .media import audio_from_samples, normalize_audio

    rate, samples = _read_wav(args.wav)
    normalize_audio(audio_from_samples(rate, samples))  # reject silence locally
    url = _service_url(args.url)
    resp = httpx.post(
        f"{url}/api/asr",
        json={"sampling_rate": rate, "raw": samples},
        timeout=120,
    )
    if resp.status_code != 200:
        print(f"error {resp.status_code}: {resp.text}", file=sys.stderr)
        return RUNTIME_ERROR
    print(resp.json()["text"])
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(load_config(), ui_dir=args.ui_dir or None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_mock_serve(args) -> int:
    import threading

    from .mocks import serve_mock_stack

    handle = serve_mock_stack(port=args.port)
    print(f"mock stack listening on {handle.base_url}{handle.prefix}")
    print("# point the service at the mocks:")
    for key, value in handle.env_block().items():
        print(f"export {key}={value}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        handle.stop()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "index":
            return _cmd_index(args)
        if args.command == "query":
            return _cmd_query(args, parser)
        if args.command == "chat":
            return _cmd_chat(args)
        if args.command == "summarize":
            return _cmd_summarize(args)
        if args.command == "asr":
            return _cmd_asr(args)
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "mock-serve":
            return _cmd_mock_serve(args)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit as exc:  # parser.error inside a command
        return int(exc.code or 0)
    except PortInUse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except (RagChatError, OSError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
