"""Byte-level corpus store.

Text is tokenized to raw UTF-8 bytes (ids 0..255) with four reserved
specials on top, so one offset unit is one byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

logger = logging.getLogger(__name__)

PAD, BOS, EOS, SEP = 256, 257, 258, 259
VOCAB_SIZE = 260
DEFAULT_MIN_TOKENS = 4000
TOKEN_DTYPE = np.uint16


class CorpusError(Exception):
    """Raised for unreadable or malformed corpus input."""


class NoDocumentsError(CorpusError):
    """Raised when the length filter leaves nothing to serve."""


def tokenize(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def detokenize(ids) -> str:
    """Inverse of :func:`tokenize`; special ids are dropped."""
    return bytes(int(i) for i in ids if int(i) < 256).decode("utf-8", errors="replace")


def encode(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(TOKEN_DTYPE)


@dataclass(frozen=True)
class Document:
    id: int
    tokens: np.ndarray
    source_offset: int = 0

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TokenChunk:
    doc_id: int
    offset: int
    tokens: np.ndarray
    partial: bool = False

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class CorpusStore:
    documents: list[Document]
    vocab_size: int = VOCAB_SIZE
    min_tokens: int = DEFAULT_MIN_TOKENS
    dropped: int = 0
    source: str | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.documents)

    def __getitem__(self, doc_id: int) -> Document:
        return self.documents[doc_id]

    @property
    def total_tokens(self) -> int:
        return sum(len(d) for d in self.documents)

    def order(self, seed: int) -> np.ndarray:
        """Deterministic document permutation for a given seed."""
        return np.random.default_rng(seed).permutation(len(self.documents))

    @classmethod
    def from_texts(cls, texts, min_tokens: int = 0) -> "CorpusStore":
        docs, dropped = [], 0
        for text in texts:
            toks = encode(text)
            if len(toks) < min_tokens:
                dropped += 1
                continue
            docs.append(Document(len(docs), toks, 0))
        if not docs:
            raise NoDocumentsError("no documents passed filter")
        return cls(docs, VOCAB_SIZE, min_tokens, dropped)


def ingest(path, min_tokens: int = DEFAULT_MIN_TOKENS) -> CorpusStore:
    """Load a JSON-lines corpus, keeping documents with at least ``min_tokens`` bytes.

    Blank lines are ignored. Every other line must be a JSON object with a
    string ``text`` field.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus not found: {path}")
    docs: list[Document] = []
    dropped = 0
    offset = 0
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line_offset = offset
            offset += len(raw)
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
                text = record["text"]
                if not isinstance(text, str):
                    raise TypeError("'text' is not a string")
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from exc
            toks = encode(text)
            if len(toks) < min_tokens:
                dropped += 1
                continue
            docs.append(Document(len(docs), toks, line_offset))
    if not docs:
        raise NoDocumentsError(f"no documents passed filter (min_tokens={min_tokens}, dropped={dropped})")
    logger.info("ingested %d documents from %s (%d dropped)", len(docs), path, dropped)
    return CorpusStore(docs, VOCAB_SIZE, min_tokens, dropped, str(path))


def fetch_chunk(store: CorpusStore, doc_id: int, offset: int, length: int) -> TokenChunk:
    if not 0 <= doc_id < len(store):
        raise IndexError(f"doc_id {doc_id} out of range [0, {len(store)})")
    doc = store.documents[doc_id]
    if not 0 <= offset < len(doc):
        raise IndexError(f"offset {offset} out of range for document {doc_id} of length {len(doc)}")
    end = min(offset + length, len(doc))
    return TokenChunk(doc_id, offset, doc.tokens[offset:end], partial=end - offset < length)


def concatenated(store: CorpusStore) -> np.ndarray:
    """All documents joined end to end, each followed by one EOS."""
    parts = []
    for doc in store.documents:
        parts.append(doc.tokens)
        parts.append(np.array([EOS], dtype=TOKEN_DTYPE))
    return np.concatenate(parts) if parts else np.empty(0, dtype=TOKEN_DTYPE)


def short_chunks(store: CorpusStore, length: int) -> list[TokenChunk]:
    """Consecutive ``length``-sized chunks of the concatenated corpus, remainder dropped."""
    if length < 2:
        raise ValueError("chunk length must be >= 2")
    stream = concatenated(store)
    n = len(stream) // length
    return [TokenChunk(-1, i * length, stream[i * length:(i + 1) * length]) for i in range(n)]


def shuffled_short_chunks(store: CorpusStore, length: int, seed: int) -> Iterator[TokenChunk]:
    chunks = short_chunks(store, length)
    for i in np.random.default_rng(seed).permutation(len(chunks)):
        yield chunks[i]
