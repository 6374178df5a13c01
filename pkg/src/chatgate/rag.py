"""Retrieval-augmented generation support.

A small semantic index: documents are split into overlapping character
windows, embedded into unit vectors, and retrieved by exact cosine scan.
The default embedder hashes character trigrams into a fixed-dimension
vector, so the whole path is deterministic and runs offline; a remote
embedder can be plugged in behind the same interface.
"""

from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol, Union

import numpy as np

from .domain import DEFAULT_ESTIMATOR, TokenEstimator
from .persistence import atomic_write_json, read_json

DEFAULT_DIMENSION = 256
DEFAULT_CHUNK_SIZE = 1000
DEFAULT_OVERLAP = 200


class EmbedderUnavailable(Exception):
    """The embedder failed; nothing may be partially indexed."""


class EmptyIndex(Exception):
    """Retrieval requested against an index with no chunks."""


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class HashingEmbedder:
    """Character-trigram hashing into a signed fixed-dimension vector.

    Deterministic across processes (CRC32, not the salted builtin hash),
    L2-normalized output.
    """

    dimension: int = DEFAULT_DIMENSION
    ngram: int = 3

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dimension, dtype=np.float64)
        grams: Iterable[str]
        if len(text) < self.ngram:
            grams = [text]
        else:
            grams = (text[i : i + self.ngram] for i in range(len(text) - self.ngram + 1))
        for gram in grams:
            h = zlib.crc32(gram.encode("utf-8"))
            bucket = h % self.dimension
            vec[bucket] += 1.0 if (h >> 16) & 1 else -1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[len(text) % self.dimension] = 1.0
            norm = 1.0
        return vec / norm


@dataclass(frozen=True, eq=False)
class DocumentChunk:
    chunk_id: str
    source_uri: str
    ordinal: int
    text: str
    embedding: np.ndarray

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"chunk {self.chunk_id}: embedding must be unit length, norm is {norm}")


@dataclass(frozen=True)
class RetrievalResult:
    chunk: DocumentChunk
    score: float


def chunk_text(text: str, chunk_size: int, overlap: int) -> list[str]:
    """Overlapping character windows; the last window may be short."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    if not 0 <= overlap < chunk_size:
        raise ValueError("overlap must be in [0, chunk_size)")
    step = chunk_size - overlap
    chunks = []
    start = 0
    while True:
        chunks.append(text[start : start + chunk_size])
        if start + chunk_size >= len(text):
            break
        start += step
    return chunks


class RagIndex:
    """In-memory chunk store with exact cosine retrieval.

    Reads run concurrently; ingest holds the write lock and replaces a
    source's chunks only after every chunk embedded successfully, so a
    failing embedder leaves the index untouched.
    """

    def __init__(
        self,
        embedder: Optional[Embedder] = None,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        overlap: int = DEFAULT_OVERLAP,
    ) -> None:
        self.embedder = embedder if embedder is not None else HashingEmbedder()
        self.chunk_size = chunk_size
        self.overlap = overlap
        self._sources: dict[str, list[DocumentChunk]] = {}
        self._lock = threading.RLock()

    def _embed_chunks(self, source_uri: str, pieces: list[str]) -> list[DocumentChunk]:
        chunks = []
        for ordinal, piece in enumerate(pieces):
            try:
                embedding = self.embedder.embed(piece)
            except EmbedderUnavailable:
                raise
            except Exception as exc:
                raise EmbedderUnavailable(f"embedder failed on chunk {ordinal} of {source_uri}") from exc
            chunks.append(
                DocumentChunk(
                    chunk_id=f"{source_uri}#{ordinal:05d}",
                    source_uri=source_uri,
                    ordinal=ordinal,
                    text=piece,
                    embedding=embedding,
                )
            )
        return chunks

    def ingest(self, source_uri: str, text: str) -> int:
        """Index one source, replacing whatever it held before."""
        if not text:
            raise ValueError("cannot ingest empty text")
        pieces = chunk_text(text, self.chunk_size, self.overlap)
        chunks = self._embed_chunks(source_uri, pieces)
        with self._lock:
            self._sources[source_uri] = chunks
        return len(chunks)

    def remove(self, source_uri: str) -> int:
        with self._lock:
            return len(self._sources.pop(source_uri, []))

    def reindex(self) -> int:
        """Re-embed every stored chunk text with the current embedder."""
        with self._lock:
            rebuilt = {
                uri: self._embed_chunks(uri, [c.text for c in chunks])
                for uri, chunks in self._sources.items()
            }
            self._sources = rebuilt
            return sum(len(chunks) for chunks in rebuilt.values())

    def all_chunks(self) -> list[DocumentChunk]:
        with self._lock:
            flat = [c for chunks in self._sources.values() for c in chunks]
        return sorted(flat, key=lambda c: c.chunk_id)

    def __len__(self) -> int:
        with self._lock:
            return sum(len(chunks) for chunks in self._sources.values())

    def retrieve(self, query: str, k: int) -> list[RetrievalResult]:
        """The k most similar chunks, exact, deterministically ordered."""
        if k < 1:
            raise ValueError("k must be at least 1")
        chunks = self.all_chunks()
        if not chunks:
            raise EmptyIndex("no chunks indexed")
        query_vec = self.embedder.embed(query)
        scored = [
            RetrievalResult(chunk=chunk, score=float(np.dot(chunk.embedding, query_vec)))
            for chunk in chunks
        ]
        scored.sort(key=lambda r: (-r.score, r.chunk.chunk_id))
        return scored[:k]

    # -- persistence --

    def save(self, path: Union[str, Path]) -> None:
        with self._lock:
            payload = {
                "dimension": self.embedder.dimension,
                "chunk_size": self.chunk_size,
                "overlap": self.overlap,
                "sources": {
                    uri: [
                        {"ordinal": c.ordinal, "text": c.text, "embedding": c.embedding.tolist()}
                        for c in chunks
                    ]
                    for uri, chunks in self._sources.items()
                },
            }
        atomic_write_json(Path(path), payload)

    @classmethod
    def load(
        cls,
        path: Union[str, Path],
        embedder: Optional[Embedder] = None,
    ) -> "RagIndex":
        payload = read_json(Path(path), None)
        if payload is None:
            return cls(embedder=embedder)
        index = cls(
            embedder=embedder,
            chunk_size=payload.get("chunk_size", DEFAULT_CHUNK_SIZE),
            overlap=payload.get("overlap", DEFAULT_OVERLAP),
        )
        if index.embedder.dimension != payload.get("dimension", index.embedder.dimension):
            raise ValueError("index file dimension does not match the configured embedder")
        for uri, rows in payload.get("sources", {}).items():
            index._sources[uri] = [
                DocumentChunk(
                    chunk_id=f"{uri}#{row['ordinal']:05d}",
                    source_uri=uri,
                    ordinal=row["ordinal"],
                    text=row["text"],
                    embedding=np.asarray(row["embedding"], dtype=np.float64),
                )
                for row in rows
            ]
        return index


def build_context(
    results: list[RetrievalResult],
    token_budget: int,
    estimator: TokenEstimator = DEFAULT_ESTIMATOR,
) -> str:
    """Concatenate retrieved chunks, cited by source, within a token budget.

    Chunks are taken in rank order and never split; a chunk that would push
    the estimate past the budget ends the assembly.
    """
    if token_budget <= 0:
        raise ValueError("token_budget must be positive")
    assembled = ""
    for result in results:
        block = f"[{result.chunk.source_uri}]\n{result.chunk.text}"
        candidate = block if not assembled else assembled + "\n\n" + block
        if estimator.estimate(candidate) > token_budget:
            break
        assembled = candidate
    return assembled
