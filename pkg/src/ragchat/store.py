"""Flat cosine vector store with top-k and MMR search plus binary persistence.

Search is an exact exhaustive scan (no ANN), every ranking is made
deterministic by breaking score ties on ascending record id, and the
on-disk format stores vectors as little-endian float32.
"""

from __future__ import annotations

import json
import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .embedding import EmbeddingVector
from .exceptions import CorruptStore, DimMismatch, InvalidLambda

MAGIC = b"RAGV"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.bin"


@dataclass
class VectorRecord:
    id: int
    text: str
    metadata: dict[str, str]
    vector: EmbeddingVector


@dataclass
class SearchHit:
    """One scored result; ``score`` is the cosine against the query."""

    id: int
    score: float
    text: str
    metadata: dict[str, str] = field(default_factory=dict)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Dot product of two unit vectors; raises on dimension mismatch."""
    if a.dim != b.dim:
        raise DimMismatch(f"dims differ: {a.dim} vs {b.dim}")
    return float(np.dot(a.as_array(), b.as_array()))


def default_fetch_k(k: int) -> int:
    """Candidate-pool width used by MMR when the caller gives none."""
    return max(4 * k, 20)


class Collection:
    """Ordered (text, metadata, vector) records under one name and dimension."""

    def __init__(self, name: str, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.name = name
        self.dim = dim
        self.metric = "cosine"
        self.records: list[VectorRecord] = []
        self.next_id = 0
        self._arrays: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.records)

    def add_records(
        self, items: Iterable[tuple[str, dict[str, str], EmbeddingVector]]
    ) -> list[int]:
        """Append records in input order; ids come from the monotonic counter."""
        staged = list(items)
        for _, _, vec in staged:
            if vec.dim != self.dim:
                raise DimMismatch(f"vector dim {vec.dim} != collection dim {self.dim}")
        ids = []
        for text, metadata, vec in staged:
            rid = self.next_id
            self.next_id += 1
            self.records.append(VectorRecord(rid, text, dict(metadata), vec))
            self._arrays[rid] = vec.as_array()
            ids.append(rid)
        return ids

    def _check_query(self, q: EmbeddingVector) -> np.ndarray:
        if q.dim != self.dim:
            raise DimMismatch(f"query dim {q.dim} != collection dim {self.dim}")
        return q.as_array()

    def search_top_k(self, q: EmbeddingVector, k: int) -> list[SearchHit]:
        """The ``min(k, len)`` records closest to ``q``, score-descending, id tie-break."""
        qa = self._check_query(q)
        if k <= 0:
            return []
        scored = [
            (float(np.dot(qa, self._arrays[r.id])), r) for r in self.records
        ]
        scored.sort(key=lambda sr: (-sr[0], sr[1].id))
        return [
            SearchHit(r.id, score, r.text, dict(r.metadata))
            for score, r in scored[:k]
        ]

    def search_mmr(
        self,
        q: EmbeddingVector,
        k: int,
        fetch_k: int | None = None,
        lambda_: float = 0.5,
    ) -> list[SearchHit]:
        """Greedy maximal-marginal-relevance selection over the top ``fetch_k`` pool.

        After the first pick (pure relevance), each step takes the candidate
        maximizing ``lambda * sim(d, q) - (1 - lambda) * max_s sim(d, s)``
        over the already-selected set, ties broken by ascending id. Returned
        scores are the similarities to the query, in selection order.
        """
        if not 0.0 <= lambda_ <= 1.0:
            raise InvalidLambda(f"lambda must be in [0, 1], got {lambda_}")
        if fetch_k is None:
            fetch_k = default_fetch_k(k)
        pool = self.search_top_k(q, fetch_k)
        if k <= 0:
            return []
        selected: list[SearchHit] = []
        remaining = list(pool)
        pair_sims: dict[tuple[int, int], float] = {}

        def sim(a: int, b: int) -> float:
            key = (a, b) if a <= b else (b, a)
            if key not in pair_sims:
                pair_sims[key] = float(np.dot(self._arrays[a], self._arrays[b]))
            return pair_sims[key]

        while remaining and len(selected) < k:
            best_i = 0
            best_obj = None
            for i, cand in enumerate(remaining):
                if not selected:
                    obj = cand.score
                else:
                    max_sim = max(sim(cand.id, s.id) for s in selected)
                    obj = lambda_ * cand.score - (1.0 - lambda_) * max_sim
                if best_obj is None or obj > best_obj or (
                    obj == best_obj and cand.id < remaining[best_i].id
                ):
                    best_obj = obj
                    best_i = i
            selected.append(remaining.pop(best_i))
        return selected


def persist(collection: Collection, directory: str | Path) -> None:
    """Write the collection under ``directory`` (manifest.json + records.bin)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / RECORDS_NAME, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        for r in collection.records:
            _write_record(f, r, collection.dim)
    manifest = {
        "name": collection.name,
        "dim": collection.dim,
        "count": len(collection.records),
        "metric": collection.metric,
        "version": FORMAT_VERSION,
        "next_id": collection.next_id,
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f)


def _write_record(f: BinaryIO, r: VectorRecord, dim: int) -> None:
    text_b = r.text.encode("utf-8")
    meta_b = json.dumps(r.metadata, ensure_ascii=False, sort_keys=True).encode("utf-8")
    f.write(struct.pack("<II", r.id, len(text_b)))
    f.write(text_b)
    f.write(struct.pack("<I", len(meta_b)))
    f.write(meta_b)
    f.write(struct.pack(f"<{dim}f", *r.vector.values))


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptStore(f"records file truncated while reading {what}")
    return data


def load(directory: str | Path) -> Collection:
    """Load a persisted collection; any structural damage fails atomically."""
    directory = Path(directory)
    try:
        with open(directory / MANIFEST_NAME, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise CorruptStore(f"manifest is not valid JSON: {exc}") from exc
    for key in ("name", "dim", "count", "metric", "version", "next_id"):
        if key not in manifest:
            raise CorruptStore(f"manifest missing key {key!r}")
    if manifest["version"] != FORMAT_VERSION:
        raise CorruptStore(f"unsupported store version {manifest['version']}")
    if manifest["metric"] != "cosine":
        raise CorruptStore(f"unsupported metric {manifest['metric']!r}")
    dim, count = manifest["dim"], manifest["count"]
    if not (isinstance(dim, int) and dim >= 1 and isinstance(count, int) and count >= 0):
        raise CorruptStore("manifest dim/count out of range")

    collection = Collection(manifest["name"], dim)
    vec_size = 4 * dim
    with open(directory / RECORDS_NAME, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise CorruptStore("bad magic bytes")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise CorruptStore(f"unsupported records version {version}")
        last_id = -1
        for _ in range(count):
            rid, text_len = struct.unpack("<II", _read_exact(f, 8, "record header"))
            if rid <= last_id:
                raise CorruptStore("record ids not strictly increasing")
            last_id = rid
            try:
                text = _read_exact(f, text_len, "text").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptStore("record text is not valid UTF-8") from exc
            (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
            try:
                metadata = json.loads(_read_exact(f, meta_len, "metadata"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CorruptStore("record metadata is not valid JSON") from exc
            if not isinstance(metadata, dict):
                raise CorruptStore("record metadata is not an object")
            values = struct.unpack(f"<{dim}f", _read_exact(f, vec_size, "vector"))
            vec = EmbeddingVector(tuple(float(v) for v in values))
            collection.records.append(VectorRecord(rid, text, metadata, vec))
            collection._arrays[rid] = vec.as_array()
        if f.read(1) != b"":
            raise CorruptStore("trailing bytes after last record")
    if manifest["next_id"] < (last_id + 1 if count else 0):
        raise CorruptStore("next_id behind stored record ids")
    collection.next_id = manifest["next_id"]
    return collection


def delete_collection(directory: str | Path) -> None:
    """Remove a persisted collection directory; missing directories are fine."""
    directory = Path(directory)
    if not directory.exists():
        return
    shutil.rmtree(directory)
