"""Acceptance suite: one test per release criterion, fully offline.

Each test prints a single `[acceptance] PASS/FAIL: <criterion>` line so the
gate is readable straight off the pytest output (run with -s to see them).
"""

from __future__ import annotations

import functools
import json
import random
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from ragchat.config import ServiceConfig
from ragchat.embedding import EmbeddingVector, hash_embed
from ragchat.exceptions import CorruptStore, SilentAudio
from ragchat.ingest import ChunkingParams, split_text
from ragchat.llm import (
    ChatMessage,
    LlmEndpointConfig,
    assemble_prompt,
    estimate_tokens,
)
from ragchat.media import audio_from_samples, build_generate_request_body, normalize_audio
from ragchat.media import ImageGenParams
from ragchat.mocks import concat_mark, serve_mock_llm, serve_mock_media
from ragchat.retrieval import ContextSnippet
from ragchat.service import create_app
from ragchat.store import Collection, load, persist
from ragchat.webtools import SummarizeParams, summarize_long_text

SEED = 20250811


def criterion(name):
    """Wrap a test so it reports its criterion on the acceptance line."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"\n[acceptance] FAIL: {name}")
                raise
            print(f"\n[acceptance] PASS: {name}")
            return result

        return wrapper

    return decorate


def unit_vector(rng: random.Random, dim: int) -> EmbeddingVector:
    while True:
        values = [rng.uniform(-1, 1) for _ in range(dim)]
        norm = sum(v * v for v in values) ** 0.5
        if norm > 1e-6:
            return EmbeddingVector(tuple(v / norm for v in values))


def brute_force_mmr(vectors, query, k, fetch_k, lam):
    """Independent greedy MMR reference; selects over all candidates each step."""
    arrays = {rid: np.asarray(v, dtype=np.float64) for rid, v in vectors}
    q = np.asarray(query, dtype=np.float64)
    sims = {rid: float(np.dot(q, arrays[rid])) for rid, _ in vectors}
    pool = sorted((rid for rid, _ in vectors), key=lambda rid: (-sims[rid], rid))[:fetch_k]
    chosen = []
    while pool and len(chosen) < k:
        best, best_obj = None, None
        for rid in pool:
            if not chosen:
                obj = sims[rid]
            else:
                max_sim = max(float(np.dot(arrays[rid], arrays[s])) for s in chosen)
                obj = lam * sims[rid] - (1.0 - lam) * max_sim
            if best_obj is None or obj > best_obj or (obj == best_obj and rid < best):
                best, best_obj = rid, obj
        chosen.append(best)
        pool.remove(best)
    return chosen


@criterion("mmr-oracle-equivalence (>=200 seeded cases, lambda grid, k<=12, dim<=8)")
def test_mmr_oracle_equivalence():
    rng = random.Random(SEED)
    cases = 0
    for _ in range(220):
        dim = rng.randint(2, 8)
        count = rng.randint(1, 12)
        pool = [unit_vector(rng, dim) for _ in range(max(2, count // 2))]
        collection = Collection("case", dim)
        vectors = []
        for i in range(count):
            v = rng.choice(pool) if rng.random() < 0.35 else unit_vector(rng, dim)
            vectors.append((i, list(v.values)))
            collection.add_records([(f"r{i}", {}, v)])
        q = unit_vector(rng, dim)
        k = rng.randint(0, count)
        fetch_k = rng.randint(max(k, 1), count + 3)
        for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
            got = [h.id for h in collection.search_mmr(q, k, fetch_k=fetch_k, lambda_=lam)]
            want = brute_force_mmr(vectors, list(q.values), k, fetch_k, lam)
            assert got == want, (dim, count, k, fetch_k, lam)
            if lam == 1.0:
                top = [h.id for h in collection.search_top_k(q, min(k, fetch_k))]
                assert got == top
        cases += 1
    assert cases >= 200


@criterion("mmr-worked-example (selects [d1, d3]; step-2 scores -0.4 and -0.24)")
def test_mmr_worked_example():
    collection = Collection("worked", 2)
    d1 = EmbeddingVector((1.0, 0.0))
    d2 = EmbeddingVector((1.0, 0.0))
    d3 = EmbeddingVector((0.6, 0.8))
    collection.add_records([("d1", {}, d1), ("d2", {}, d2), ("d3", {}, d3)])
    q = EmbeddingVector((1.0, 0.0))
    hits = collection.search_mmr(q, 2, fetch_k=3, lambda_=0.3)
    assert [h.id for h in hits] == [0, 2]

    def dot(a, b):
        return float(np.dot(np.asarray(a.values), np.asarray(b.values)))

    score_d2 = 0.3 * dot(d2, q) - 0.7 * dot(d2, d1)
    score_d3 = 0.3 * dot(d3, q) - 0.7 * dot(d3, d1)
    assert abs(score_d2 - (-0.4)) <= 1e-9
    assert abs(score_d3 - (-0.24)) <= 1e-9
    top2 = [h.id for h in collection.search_top_k(q, 2)]
    assert top2 == [0, 1]  # pure similarity keeps the duplicate


@criterion("chunker-laws (>=500 random texts: coverage, order, bound, exact overlap)")
def test_chunker_laws():
    rng = random.Random(SEED)
    checked = 0
    for _ in range(520):
        size = rng.randint(1, 60)
        overlap = rng.randint(0, size - 1)
        separators = rng.choice([(), ("\n\n", "\n", " ", ""), ("\n",), (" ",)])
        length = rng.randint(0, 240)
        text = "".join(rng.choice("abcde \n") for _ in range(length))
        params = ChunkingParams(chunk_size=size, overlap=overlap, separators=separators)
        chunks = split_text(text, params)
        if text == "":
            assert chunks == []
            checked += 1
            continue
        covered = set()
        for c in chunks:
            covered.update(range(*c.span))
            assert len(c.text) <= size
            assert c.text == text[c.span[0] : c.span[1]]
        assert covered == set(range(len(text)))
        starts = [c.span[0] for c in chunks]
        assert starts == sorted(starts)
        assert [c.index for c in chunks] == list(range(len(chunks)))
        if separators == () and len(chunks) > 1:
            for a, b in zip(chunks, chunks[1:]):
                assert a.span[1] - b.span[0] == overlap
        checked += 1
    assert checked >= 500
    spans = [c.span for c in split_text(
        "abcdefghijk", ChunkingParams(chunk_size=5, overlap=2, separators=())
    )]
    assert spans == [(0, 5), (3, 8), (6, 11)]


@criterion("vector-store-persistence (bit-identical round trip; corruption detected)")
def test_vector_store_persistence(tmp_path):
    collection = Collection("persist", 64)
    texts = [
        "solar thermal collectors", "anaerobic digestion", "pyrolysis of biomass",
        "wind turbine blades", "photovoltaic materials",
    ]
    collection.add_records(
        (t, {"source_uri": f"{i}.txt"}, hash_embed(t)) for i, t in enumerate(texts)
    )
    target = tmp_path / "store"
    persist(collection, target)
    loaded = load(target)
    for a, b in zip(collection.records, loaded.records):
        assert a.vector.values == b.vector.values  # bit-identical floats
        assert (a.id, a.text, a.metadata) == (b.id, b.text, b.metadata)
    q = hash_embed("biomass pyrolysis reactors")
    assert [(h.id, h.score) for h in collection.search_top_k(q, 5)] == [
        (h.id, h.score) for h in loaded.search_top_k(q, 5)
    ]

    records_file = target / "records.bin"
    original = records_file.read_bytes()

    corrupted = bytearray(original)
    corrupted[:4] = b"XXXX"
    records_file.write_bytes(bytes(corrupted))
    with pytest.raises(CorruptStore):
        load(target)

    records_file.write_bytes(original[:-7])
    with pytest.raises(CorruptStore):
        load(target)

    records_file.write_bytes(original)
    manifest_file = target / "manifest.json"
    manifest = json.loads(manifest_file.read_text())
    manifest["version"] = 99
    manifest_file.write_text(json.dumps(manifest))
    with pytest.raises(CorruptStore):
        load(target)


@criterion("summarizer-laws (1 call single section; n+1 calls; marks in order)")
def test_summarizer_laws():
    handle = serve_mock_llm(mode="concat_mark")
    try:
        config = LlmEndpointConfig(url=handle.base_url)
        params = SummarizeParams(section_size_chars=100, max_sections=20)

        single = summarize_long_text("one short note", params, config)
        assert single.n_sections == 1 and single.n_llm_calls == 1

        for n in (3, 5):
            handle.requests.clear()
            text = "\n\n".join(chr(ord("a") + i) * 80 for i in range(n))
            summary = summarize_long_text(text, params, config)
            assert summary.n_sections == n
            assert summary.n_llm_calls == n + 1
            assert len(handle.requests) == n + 1
            final_user = handle.requests[-1]["json"]["messages"][-1]["content"]
            marks = [
                concat_mark(req["json"]["messages"][-1]["content"])
                for req in handle.requests[:-1]
            ]
            positions = [final_user.index(mark) for mark in marks]
            assert positions == sorted(positions)
            assert len(set(marks)) == n
    finally:
        handle.stop()


@criterion("asr-preprocessing (peak 1.0 +/- 1e-9, idempotent, silence rejected, wire schema)")
def test_asr_preprocessing():
    rng = random.Random(SEED)
    for _ in range(200):
        n = rng.randint(1, 50)
        samples = [rng.uniform(-100, 100) for _ in range(n)]
        if all(s == 0 for s in samples):
            samples[0] = 0.5
        payload = audio_from_samples(rng.choice([8000, 16000, 44100]), samples)
        normalized = normalize_audio(payload)
        assert abs(max(abs(s) for s in normalized.raw) - 1.0) <= 1e-9
        assert normalize_audio(normalized).raw == normalized.raw
        assert normalized.sampling_rate == payload.sampling_rate
    with pytest.raises(SilentAudio):
        normalize_audio(audio_from_samples(16000, [0.0, 0.0]))

    media = serve_mock_media()
    llm = serve_mock_llm()
    try:
        config = ServiceConfig(
            llm=LlmEndpointConfig(url=llm.base_url, retries=0),
            asr_endpoint=media.base_url + "/asr",
        )
        client = TestClient(create_app(config))
        resp = client.post("/api/asr", json={"sampling_rate": 16000, "raw": [0.5, -0.25, 0.1]})
        assert resp.status_code == 200 and resp.json() == {"text": "MOCK-ASR:3"}
        wire = media.requests[-1]
        assert wire["raw"] == b'{"sampling_rate": 16000, "raw": [1.0, -0.5, 0.2]}'
        body = json.loads(wire["raw"])
        assert set(body) == {"sampling_rate", "raw"}
        assert isinstance(body["sampling_rate"], int)
        assert all(isinstance(x, float) for x in body["raw"])
        assert client.post("/api/asr", json={"sampling_rate": 16000, "raw": [0, 0]}).status_code == 400
    finally:
        media.stop()
        llm.stop()


@criterion("image-generation-defaults (steps=4, guidance=0.0 in the request bytes)")
def test_image_generation_defaults():
    golden = (
        b'{"prompt": "a tiny cactus", "num_inference_steps": 4, '
        b'"guidance_scale": 0.0, "width": 1024, "height": 1024}'
    )
    assert build_generate_request_body("a tiny cactus", ImageGenParams()) == golden
    assert b'"num_inference_steps": 4' in golden
    assert b'"guidance_scale": 0.0' in golden

    media = serve_mock_media()
    try:
        from ragchat.media import generate_image

        generate_image(media.base_url + "/image/generate", "a tiny cactus")
        assert media.requests[-1]["raw"] == golden
    finally:
        media.stop()


@criterion("end-to-end-grounding (top retrieved chunk lands in the LLM context block)")
def test_end_to_end_grounding(tmp_path):
    texts = [
        "zymurgy is the chemistry of brewing and fermentation processes",
        "orbital mechanics concerns the trajectories of spacecraft",
        "sourdough bread rises through wild yeast cultures",
    ]
    collection = Collection("fixture", 64)
    collection.add_records(
        (t, {"source_uri": f"doc{i}.txt"}, hash_embed(t)) for i, t in enumerate(texts)
    )
    persist(collection, tmp_path / "fixture")

    llm = serve_mock_llm(mode="echo")
    try:
        config = ServiceConfig(
            llm=LlmEndpointConfig(url=llm.base_url, retries=0),
            preindexed_dir=str(tmp_path / "fixture"),
        )
        client = TestClient(create_app(config))
        sid = client.post("/api/sessions").json()["session_id"]
        query = "tell me about zymurgy and brewing"
        resp = client.post(
            f"/api/sessions/{sid}/messages",
            json={"mode": "rag_preindexed", "content": query},
        )
        assert resp.status_code == 200

        top_hit = load(tmp_path / "fixture").search_top_k(hash_embed(query), 1)[0]
        request = llm.requests[-1]["json"]
        context = "\n".join(
            m["content"] for m in request["messages"] if m["role"] == "system"
        )
        assert top_hit.text in context
        history = client.get(f"/api/sessions/{sid}/messages").json()
        assert [t["role"] for t in history] == ["user", "assistant"]
        assert history[1]["content"] == resp.json()["reply"]
    finally:
        llm.stop()


@criterion("session-isolation-and-fifo (no cross-talk; same-session posts serialize)")
def test_session_isolation_and_fifo():
    handle = serve_mock_llm(mode="script", script=["r1", "r2", "r3", "first", "second"])
    try:
        config = ServiceConfig(llm=LlmEndpointConfig(url=handle.base_url, retries=0))
        client = TestClient(create_app(config))
        s1 = client.post("/api/sessions").json()["session_id"]
        s2 = client.post("/api/sessions").json()["session_id"]
        for sid, content in ((s1, "a"), (s2, "b"), (s1, "c")):
            client.post(
                f"/api/sessions/{sid}/messages",
                json={"mode": "assistant", "content": content},
            )
        h1 = client.get(f"/api/sessions/{s1}/messages").json()
        h2 = client.get(f"/api/sessions/{s2}/messages").json()
        assert [t["content"] for t in h1 if t["role"] == "assistant"] == ["r1", "r3"]
        assert [t["content"] for t in h2 if t["role"] == "assistant"] == ["r2"]

        handle.delay_s = 0.25
        sid = client.post("/api/sessions").json()["session_id"]

        def post(content):
            client.post(
                f"/api/sessions/{sid}/messages",
                json={"mode": "assistant", "content": content},
            )

        seen = len(handle.requests)
        t1 = threading.Thread(target=post, args=("one",))
        t1.start()
        deadline = time.monotonic() + 5
        while len(handle.requests) == seen and time.monotonic() < deadline:
            time.sleep(0.005)
        t2 = threading.Thread(target=post, args=("two",))
        t2.start()
        t1.join(timeout=10)
        t2.join(timeout=10)
        history = client.get(f"/api/sessions/{sid}/messages").json()
        assert [t["content"] for t in history] == ["one", "first", "two", "second"]
    finally:
        handle.stop()


@criterion("prompt-budget (never exceeded; oldest history drops first; monotone)")
def test_prompt_budget():
    rng = random.Random(SEED)

    def snippets_of(n):
        return [
            ContextSnippet(
                text="ctx " + "x" * rng.randint(0, 40),
                source_uri=f"s{i}.txt",
                score=1.0 - i * 0.01,
                rank=i,
            )
            for i in range(n)
        ]

    def history_of(pairs):
        out = []
        for i in range(pairs):
            out.append(ChatMessage("user", "u" + "h" * rng.randint(0, 30)))
            out.append(ChatMessage("assistant", "a" + "h" * rng.randint(0, 30)))
        return out

    for _ in range(300):
        system = "s" * rng.randint(0, 30)
        user = "u" * rng.randint(1, 30)
        snippets = snippets_of(rng.randint(0, 5))
        history = history_of(rng.randint(0, 5))
        base = estimate_tokens(system) + estimate_tokens(user)
        budget = base + rng.randint(0, 120)
        bundle = assemble_prompt(system, snippets, history, user, budget)
        assert bundle.estimated_tokens <= budget
        assert bundle.estimated_tokens == sum(
            estimate_tokens(m.content) for m in bundle.messages
        )
        if bundle.included_snippets < len(snippets):
            assert bundle.included_history_turns == 0  # history drains first

    snippets = snippets_of(3)
    history = history_of(3)
    prev = (0, 0)
    for budget in range(4, 300):
        try:
            bundle = assemble_prompt("sys", snippets, history, "user q", budget)
        except Exception:
            continue
        cur = (bundle.included_history_turns, bundle.included_snippets)
        assert cur[0] >= prev[0] and cur[1] >= prev[1]
        prev = cur
