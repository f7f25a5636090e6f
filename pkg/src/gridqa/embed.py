"""Deterministic text embeddings.

The default provider hashes character 3-grams into a 512-dim count vector
and L2-normalises it. Any object with ``name``, ``dim`` and ``embed`` can
stand in for it (a hosted embedding model, say).
"""

from __future__ import annotations

import re
import zlib
from functools import lru_cache
from typing import Protocol

import numpy as np

DEFAULT_DIM = 512


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class NGramEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM, n: int = 3):
        self.dim = dim
        self.n = n
        self.name = f"ngram-{dim}"
        self._cached = lru_cache(maxsize=65536)(self._embed)

    def _embed(self, text: str) -> np.ndarray:
        s = " " + re.sub(r"\s+", " ", text.lower()).strip() + " "
        vec = np.zeros(self.dim, dtype=np.float64)
        if len(s.strip()) == 0:
            vec[:] = 1.0
        else:
            for i in range(len(s) - self.n + 1):
                gram = s[i:i + self.n]
                vec[zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
            if not vec.any():
                vec[:] = 1.0
        vec /= np.linalg.norm(vec)
        vec.setflags(write=False)
        return vec

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)

    def embed_many(self, texts) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])


DEFAULT_EMBEDDER = NGramEmbedder()


def embed_default(text: str) -> np.ndarray:
    return DEFAULT_EMBEDDER.embed(text)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def get_embedder(name: str) -> EmbeddingProvider:
    if name in ("ngram-512", "default"):
        return DEFAULT_EMBEDDER
    m = re.fullmatch(r"ngram-(\d+)", name)
    if m:
        return NGramEmbedder(int(m.group(1)))
    raise ValueError(f"unknown embedder {name!r}")
