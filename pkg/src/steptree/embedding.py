"""Text embedding contract and cosine similarity.

One embedder instance serves both the knowledge-base scoring and the
expansion-phase redundancy filter. Two backends:

* ``TrigramEmbedder`` — deterministic, offline: hashed character-trigram
  counts bucketed into ``dim`` slots, then L2-normalized. Every test in the
  repo runs on it; no network.
* ``RemoteEmbedder`` — production HTTP endpoint speaking
  ``POST {"texts": [...]} -> {"vectors": [[...], ...]}``.
"""

from __future__ import annotations

import math
import threading
import zlib
from typing import Protocol

import numpy as np

from . import kernels
from .errors import DimensionMismatch, EmbedderUnavailable, ZeroVector

# Embedding vectors are plain 1-D float64 arrays; ``dim`` lives on the
# embedder instance and is uniform for everything it produces.
EmbeddingVector = np.ndarray


class Embedder(Protocol):
    dim: int
    embedder_id: str

    def embed(self, text: str) -> EmbeddingVector: ...


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a,b) / (|a|*|b|) with fixed left-to-right summation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na = kernels.sq_norm(a)
    nb = kernels.sq_norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine is undefined for the zero vector")
    return kernels.dot_l2r(a, b) / (math.sqrt(na) * math.sqrt(nb))


class TrigramEmbedder:
    """Hashed character-trigram counts, L2-normalized.

    Deterministic across processes (crc32, not ``hash``); never emits the
    zero vector for nonempty text because every text yields at least one
    gram with a positive count.
    """

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.embedder_id = f"trigram-{dim}"

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        counts = np.zeros(self.dim, dtype=np.float64)
        if len(text) < 3:
            grams = [text]
        else:
            grams = [text[i : i + 3] for i in range(len(text) - 2)]
        for gram in grams:
            counts[zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
        norm = math.sqrt(kernels.sq_norm(counts))
        return counts / norm


class RemoteEmbedder:
    """HTTP embedding backend with a configurable in-flight request cap."""

    def __init__(self, endpoint: str, dim: int, auth_token: str | None = None, max_in_flight: int = 4, timeout_s: float = 30.0):
        self.endpoint = endpoint
        self.dim = dim
        self.embedder_id = f"remote-{dim}"
        self._auth_token = auth_token
        self._timeout_s = timeout_s
        self._gate = threading.Semaphore(max_in_flight)

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        import requests

        headers = {}
        if self._auth_token:
            headers["Authorization"] = f"Bearer {self._auth_token}"
        with self._gate:
            try:
                resp = requests.post(self.endpoint, json={"texts": texts}, headers=headers, timeout=self._timeout_s)
                resp.raise_for_status()
                payload = resp.json()
            except requests.RequestException as exc:
                raise EmbedderUnavailable(f"embedding endpoint {self.endpoint}: {exc}") from exc
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbedderUnavailable("embedding endpoint returned a malformed response")
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise DimensionMismatch(f"endpoint returned dim {arr.shape}, expected ({self.dim},)")
            if not arr.any():
                raise ZeroVector("embedding endpoint returned an all-zero vector")
            out.append(arr)
        return out
