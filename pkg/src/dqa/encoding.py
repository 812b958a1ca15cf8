"""Sentence encoders mapping text to unit-norm embedding vectors.

The default provider is deterministic feature hashing over unigrams and
bigrams, which makes every downstream number reproducible across runs and
machines. A precomputed-file provider serves offline-cached vectors, and a
remote provider admits an external neural encoder over a small HTTP protocol
without code changes.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateTextError,
    DimensionMismatchError,
    RemoteProviderError,
)
from .util import dump_json

DEFAULT_DIMENSION = 256

# Function words dropped before hashing; a text made only of these has no
# content signal and would hash to the zero vector.
STOPWORDS = frozenset(
    """a an and are as at be but by did do for from had has have i if in into is
    it its me my no not of on or our so that the their them then there this to
    too very was we were what when will with you your yes still same again ok
    nothing""".split()
)

_TOKEN_RE = re.compile(r"[0-9a-z]+")


def hash_tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop stopwords."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in STOPWORDS]


@dataclass(frozen=True)
class EncoderConfig:
    provider: str = "hashing"  # hashing | precomputed | remote
    dimension: int = DEFAULT_DIMENSION
    seed: int = 0
    path: str | None = None  # precomputed vector file
    endpoint: str | None = None  # remote provider URL
    model: str | None = None
    auth_token: str | None = None
    max_in_flight: int = 4

    def validate(self) -> None:
        if self.dimension <= 0:
            raise ConfigError(f"encoder dimension must be positive, got {self.dimension}")
        if self.provider == "precomputed" and not self.path:
            raise ConfigError("precomputed provider requires 'path'")
        if self.provider == "remote" and not self.endpoint:
            raise ConfigError("remote provider requires 'endpoint'")
        if self.provider not in ("hashing", "precomputed", "remote"):
            raise ConfigError(f"unknown encoder provider {self.provider!r}")


def _normalize(vec: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateTextError(f"degenerate text: {what!r} has no content signal")
    return vec / norm


class HashingEncoder:
    """Feature hashing over unigrams + token bigrams with hash-derived signs."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0):
        if dimension <= 0:
            raise ConfigError(f"encoder dimension must be positive, got {dimension}")
        self.dimension = dimension
        self.seed = seed

    def _slot(self, gram: str) -> tuple[int, float]:
        digest = blake2b(f"{self.seed}\x1f{gram}".encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        bucket = (value >> 1) % self.dimension
        sign = 1.0 if value & 1 else -1.0
        return bucket, sign

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise DataError("cannot encode empty text")
        tokens = hash_tokenize(text)
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokens:
            bucket, sign = self._slot(tok)
            vec[bucket] += sign
        for a, b in zip(tokens, tokens[1:]):
            bucket, sign = self._slot(f"{a} {b}")
            vec[bucket] += sign
        return _normalize(vec, text)

    def encode_item(self, item_id: str, text: str) -> np.ndarray:
        return self.encode(text)


class PrecomputedEncoder:
    """Serves vectors from an offline cache keyed by item id (or literal text)."""

    def __init__(self, vectors: Mapping[str, np.ndarray], dimension: int):
        self.dimension = dimension
        self.vectors = dict(vectors)

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise DataError("cannot encode empty text")
        if text in self.vectors:
            return self.vectors[text]
        raise DataError(f"no precomputed vector for text {text[:60]!r}")

    def encode_item(self, item_id: str, text: str) -> np.ndarray:
        if item_id in self.vectors:
            return self.vectors[item_id]
        return self.encode(text)


class RemoteEncoder:
    """HTTP encoder: POST {texts: [...]} -> {vectors: [[...]]}.

    Bounds concurrent in-flight requests with a semaphore; failures raise
    RemoteProviderError carrying the provider status.
    """

    def __init__(self, config: EncoderConfig, transport=None):
        import httpx

        config.validate()
        self.config = config
        self.dimension = config.dimension
        self._semaphore = threading.Semaphore(max(1, config.max_in_flight))
        headers = {}
        if config.auth_token:
            headers["authorization"] = f"Bearer {config.auth_token}"
        self._client = httpx.Client(headers=headers, transport=transport, timeout=30.0)

    def encode_batch(self, texts: list[str]) -> list[np.ndarray]:
        for text in texts:
            if not text or not text.strip():
                raise DataError("cannot encode empty text")
        payload = {"texts": texts}
        if self.config.model:
            payload["model"] = self.config.model
        with self._semaphore:
            try:
                resp = self._client.post(self.config.endpoint, json=payload)
            except Exception as exc:  # connection-level failure
                raise RemoteProviderError(f"encoder endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteProviderError(
                f"encoder endpoint returned {resp.status_code}",
                status=resp.status_code,
                retryable=resp.status_code >= 500,
            )
        vectors = resp.json().get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise RemoteProviderError("encoder endpoint returned malformed vectors", retryable=False)
        out = []
        for text, values in zip(texts, vectors):
            vec = np.asarray(values, dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise DimensionMismatchError(
                    f"remote vector for {text[:40]!r} has dimension {vec.shape}, expected {self.dimension}"
                )
            out.append(_normalize(vec, text))
        return out

    def encode(self, text: str) -> np.ndarray:
        return self.encode_batch([text])[0]

    def encode_item(self, item_id: str, text: str) -> np.ndarray:
        return self.encode(text)


def load_precomputed(path: str | Path, dimension: int = DEFAULT_DIMENSION) -> dict[str, np.ndarray]:
    """Load a line-delimited {id, vector[]} file; vectors are re-normalized."""
    vectors: dict[str, np.ndarray] = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            item_id = rec["id"]
            vec = np.asarray(rec["vector"], dtype=np.float64)
            if vec.shape != (dimension,):
                raise DimensionMismatchError(
                    f"vector {item_id!r} (line {lineno}) has dimension {vec.shape[0] if vec.ndim == 1 else vec.shape},"
                    f" expected {dimension}"
                )
            if item_id in vectors:
                raise DataError(f"duplicate precomputed id {item_id!r} at line {lineno}")
            vectors[item_id] = _normalize(vec, item_id)
    return vectors


def save_precomputed(path: str | Path, vectors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for item_id in sorted(vectors):
            fh.write(dump_json({"id": item_id, "vector": [float(x) for x in vectors[item_id]]}))
            fh.write("\n")


def get_encoder(config: EncoderConfig):
    config.validate()
    if config.provider == "hashing":
        return HashingEncoder(config.dimension, config.seed)
    if config.provider == "precomputed":
        return PrecomputedEncoder(load_precomputed(config.path, config.dimension), config.dimension)
    return RemoteEncoder(config)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))
