"""Sentence embeddings for rule texts.

``HashEmbedder`` is the offline provider: a signed bag-of-tokens hashed into
``dim`` buckets and L2-normalized. ``RemoteEmbedder`` calls an
OpenAI-compatible ``/embeddings`` endpoint. ``CachedEmbedder`` wraps either
one so each distinct text is embedded at most once per run, optionally
persisting vectors to a JSON-lines file.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .language.backends import BackendError, HttpClient

_TOKEN = re.compile(r"\w+")


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 768
    provider: str = "local-hash"
    model_name: str = ""
    cache_path: str | None = None

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("embedding dim must be positive")
        if self.provider not in ("local-hash", "remote"):
            raise ValueError(f"unknown embedding provider {self.provider!r}")
        if self.provider == "remote" and not self.model_name:
            raise ValueError("remote embeddings need a model_name")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class HashEmbedder:
    provider = "local-hash"
    model = "blake2b"

    def __init__(self, dim: int = 768):
        self.dim = dim

    def embed_one(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little")
            v[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError(f"text has no embeddable tokens: {text!r}")
        return v / norm

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ValueError("embed needs at least one text")
        return np.stack([self.embed_one(t) for t in texts])


class RemoteEmbedder:
    provider = "remote"

    def __init__(self, model: str, dim: int = 768, **http):
        self.model = model
        self.dim = dim
        self.http = HttpClient(**http)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ValueError("embed needs at least one text")
        body = self.http.post("/embeddings", {"model": self.model, "input": list(texts)})
        try:
            rows = sorted(body["data"], key=lambda d: d["index"])
            out = np.array([r["embedding"] for r in rows], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embedding response: {exc}") from exc
        if out.shape != (len(texts), self.dim) or not np.all(np.isfinite(out)):
            raise BackendError(f"embedding response has shape {out.shape}, expected ({len(texts)}, {self.dim})")
        return out


class CachedEmbedder:
    def __init__(self, inner, path: str | Path | None = None):
        self.inner = inner
        self.dim = inner.dim
        self.path = Path(path) if path else None
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.misses = 0
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                rec = json.loads(line)
                self._cache[rec["key"]] = np.array(rec["vector"], dtype=float)

    def key(self, text: str) -> str:
        digest = hashlib.sha256(text.encode()).hexdigest()
        return f"{self.inner.provider}:{getattr(self.inner, 'model', '')}:{digest}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ValueError("embed needs at least one text")
        keys = [self.key(t) for t in texts]
        # the lock is held across the inner call so concurrent workers never embed a text twice
        with self._lock:
            todo = list(dict.fromkeys(t for t, k in zip(texts, keys) if k not in self._cache))
            if todo:
                vecs = self.inner.embed(todo)
                self.misses += len(todo)
                new = {self.key(t): v for t, v in zip(todo, vecs)}
                self._cache.update(new)
                if self.path:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    with open(self.path, "a") as fh:
                        for k, v in new.items():
                            fh.write(json.dumps({"key": k, "vector": v.tolist()}) + "\n")
            return np.stack([self._cache[k] for k in keys])


def make_embedder(cfg: EmbeddingConfig, **http):
    if cfg.provider == "local-hash":
        inner = HashEmbedder(cfg.dim)
    else:
        inner = RemoteEmbedder(cfg.model_name, cfg.dim, **http)
    return CachedEmbedder(inner, cfg.cache_path)
