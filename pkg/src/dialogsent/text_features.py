"""Tokenisation and 300-d token embeddings for the text model.

Contextual encoders are out of scope: vectors come from a precomputed table
file, with a deterministic hashed stub for out-of-vocabulary tokens and for
hermetic tests.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import is_nonverbal_marker
from .errors import InputError, LoadError

EMBED_DIM = 300
_PUNCT = string.punctuation


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = EMBED_DIM
    max_tokens: int = 64
    pad_value: float = 0.0
    provider: str = "hashed"

    def __post_init__(self):
        if self.dim != EMBED_DIM:
            raise InputError(f"embedding dim is fixed at {EMBED_DIM}")
        if self.max_tokens < 1:
            raise InputError("max_tokens must be positive")
        if self.provider not in ("table", "hashed"):
            raise InputError(f"unknown provider {self.provider!r}")


@dataclass(frozen=True)
class EmbeddedSequence:
    values: np.ndarray
    true_length: int


def tokenize(transcript: str) -> list[str]:
    tokens = []
    for chunk in transcript.lower().split():
        if is_nonverbal_marker(chunk):
            tokens.append(chunk)
            continue
        chunk = chunk.strip(_PUNCT)
        if chunk:
            tokens.append(chunk)
    return tokens


@lru_cache(maxsize=65536)
def _hashed_vector(token: str) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    v = np.random.default_rng(seed).standard_normal(EMBED_DIM)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


class HashedProvider:
    """Unit-norm pseudo-random vector per token, seeded by the token's UTF-8 bytes."""

    def vector(self, token: str) -> np.ndarray:
        return _hashed_vector(token)


class TableProvider:
    def __init__(self, table: Mapping[str, np.ndarray], fallback=None):
        self.table = dict(table)
        self.fallback = fallback or HashedProvider()

    def __len__(self):
        return len(self.table)

    def vector(self, token: str) -> np.ndarray:
        v = self.table.get(token)
        return self.fallback.vector(token) if v is None else v


def load_embedding_table(path) -> TableProvider:
    """Parse ``token v1 ... v300`` lines into a lookup provider.

    Raises LoadError (an OSError) naming the line for malformed entries,
    wrong dimensions or duplicate tokens.
    """
    path = Path(path)
    table: dict[str, np.ndarray] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise LoadError(f"cannot read embedding table {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(" ")
        token, raw = parts[0], [p for p in parts[1:] if p]
        if not token:
            raise LoadError(f"{path}:{lineno}: missing token")
        if len(raw) != EMBED_DIM:
            raise LoadError(f"{path}:{lineno}: expected {EMBED_DIM} values, got {len(raw)}")
        if token in table:
            raise LoadError(f"{path}:{lineno}: duplicate token {token!r}")
        try:
            vec = np.array([float(x) for x in raw], dtype=np.float64)
        except ValueError as exc:
            raise LoadError(f"{path}:{lineno}: {exc}") from None
        vec.setflags(write=False)
        table[token] = vec
    return TableProvider(table)


def make_provider(config: EmbeddingConfig, table_path=None):
    if config.provider == "table":
        if table_path is None:
            raise InputError("table provider needs an embedding table path")
        return load_embedding_table(table_path)
    return HashedProvider()


def embed(tokens: Sequence[str], config: EmbeddingConfig = EmbeddingConfig(), provider=None) -> EmbeddedSequence:
    provider = provider or HashedProvider()
    n = min(len(tokens), config.max_tokens)
    values = np.full((config.max_tokens, config.dim), config.pad_value, dtype=np.float64)
    for i in range(n):
        values[i] = provider.vector(tokens[i])
    return EmbeddedSequence(values, n)


def embed_many(token_lists, config: EmbeddingConfig = EmbeddingConfig(), provider=None) -> np.ndarray:
    """Stack of embedded sequences, shape (n, max_tokens, 300), float32."""
    provider = provider or HashedProvider()
    out = np.empty((len(token_lists), config.max_tokens, config.dim), dtype=np.float32)
    for i, toks in enumerate(token_lists):
        out[i] = embed(toks, config, provider).values
    return out
