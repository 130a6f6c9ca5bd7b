"""Loss-guided skip scheduling over a document.

After the model reads a window starting at cursor ``S``, the pooled
per-token loss ``C`` of that window sets how far to jump::

    D = K * min(floor((|X| - S - L) / K), floor(alpha / C))

and reading resumes at ``S + window_len + D``. ``K = 0`` means plain
sequential reading.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

from skim.corpus import CorpusStore, TokenChunk, fetch_chunk

POOLINGS = ("average", "last_token", "exp_decay")


class _End:
    """Marker returned by :func:`advance` once a document is exhausted."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "END"

    def __bool__(self):
        return False


END = _End()


class TraversalError(RuntimeError):
    pass


@dataclass(frozen=True)
class SkipConfig:
    K: int = 0
    alpha: float = 2.0
    L: int = 256
    pooling: str = "average"
    decay: float = 0.9
    c_min: float = 1e-6

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 0:
            raise ValueError(f"K must be a non-negative integer, got {self.K!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha!r}")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay!r}")
        if not self.c_min > 0:
            raise ValueError(f"c_min must be > 0, got {self.c_min!r}")


@dataclass(frozen=True)
class SkipDecision:
    confidence: float
    distance: int
    cap_remaining: int
    cap_confidence: int


@dataclass(frozen=True)
class ReadState:
    doc_id: int
    cursor: int
    doc_len: int
    steps_taken: int = 0
    tokens_skipped_total: int = 0
    tokens_read_total: int = 0

    def window_len(self, config: SkipConfig) -> int:
        return min(config.L, self.doc_len - self.cursor)


def begin(doc_id: int, doc_len: int, cursor: int = 0) -> ReadState:
    if doc_len - cursor < 2:
        raise ValueError(f"document {doc_id} has fewer than 2 tokens to read from {cursor}")
    return ReadState(doc_id, cursor, doc_len)


def pool_losses(losses: Sequence[float], strategy: str = "average", decay: float = 0.9) -> float:
    values = [float(x) for x in losses]
    n = len(values)
    if n == 0:
        raise ValueError("cannot pool an empty loss sequence")
    if strategy == "average":
        return math.fsum(values) / n
    if strategy == "last_token":
        return values[-1]
    if strategy == "exp_decay":
        weights = [decay ** (n - 1 - i) for i in range(n)]
        return math.fsum(w * x for w, x in zip(weights, values)) / math.fsum(weights)
    raise ValueError(f"unknown pooling strategy {strategy!r}")


def confidence(losses: Sequence[float], config: SkipConfig) -> float:
    """Pooled loss clamped below at ``config.c_min``."""
    return max(pool_losses(losses, config.pooling, config.decay), config.c_min)


def skip_distance(confidence: float, cursor: int, doc_len: int, config: SkipConfig) -> SkipDecision:
    if not math.isfinite(confidence):
        raise ValueError(f"non-finite confidence {confidence!r}")
    c = max(confidence, config.c_min)
    cap_confidence = max(0, int(config.alpha // c))
    if config.K == 0:
        return SkipDecision(c, 0, 0, cap_confidence)
    cap_remaining = max(0, (doc_len - cursor - config.L) // config.K)
    return SkipDecision(c, config.K * min(cap_remaining, cap_confidence), cap_remaining, cap_confidence)


def step(state: ReadState, losses: Sequence[float], config: SkipConfig) -> tuple[SkipDecision, ReadState, bool]:
    """One read/skip cycle. Returns the decision, the new state and whether the document is done."""
    wlen = state.window_len(config)
    if len(losses) != wlen - 1:
        raise ValueError(
            f"expected {wlen - 1} losses for window of {wlen} tokens at offset {state.cursor}, got {len(losses)}"
        )
    decision = skip_distance(confidence(losses, config), state.cursor, state.doc_len, config)
    new_cursor = state.cursor + wlen + decision.distance
    new_state = replace(
        state,
        cursor=new_cursor,
        steps_taken=state.steps_taken + 1,
        tokens_skipped_total=state.tokens_skipped_total + decision.distance,
        tokens_read_total=state.tokens_read_total + wlen,
    )
    return decision, new_state, state.doc_len - new_cursor < 2


def advance(state: ReadState, losses: Sequence[float], config: SkipConfig):
    """Move the cursor past the window just read plus the skip; ``END`` when done."""
    _, new_state, done = step(state, losses, config)
    return END if done else new_state


@dataclass(frozen=True)
class TraceStep:
    offset: int
    window_len: int
    confidence: float
    distance: int
    cap_remaining: int
    cap_confidence: int


@dataclass
class TraversalTrace:
    doc_id: int
    doc_len: int
    steps: list[TraceStep] = field(default_factory=list)

    @property
    def offsets(self) -> list[int]:
        return [s.offset for s in self.steps]

    @property
    def distances(self) -> list[int]:
        return [s.distance for s in self.steps]

    @property
    def windows_read(self) -> int:
        return len(self.steps)

    @property
    def tokens_read(self) -> int:
        return sum(s.window_len for s in self.steps)

    @property
    def tokens_skipped(self) -> int:
        return sum(s.distance for s in self.steps)

    @property
    def tokens_unreached(self) -> int:
        return self.doc_len - self.tokens_read - self.tokens_skipped

    def summary(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "doc_len": self.doc_len,
            "windows_read": self.windows_read,
            "tokens_read": self.tokens_read,
            "tokens_skipped": self.tokens_skipped,
            "tokens_unreached": self.tokens_unreached,
            "avg_skip": average_skips([self]) if self.steps else 0.0,
        }

    def records(self) -> list[dict]:
        return [{"doc_id": self.doc_id, **asdict(s)} for s in self.steps]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())


def traverse(
    store: CorpusStore,
    doc_id: int,
    config: SkipConfig,
    confidence_source: Callable[[TokenChunk], Sequence[float]],
) -> TraversalTrace:
    doc = store[doc_id]
    trace = TraversalTrace(doc_id, len(doc))
    state = begin(doc_id, len(doc))
    while True:
        chunk = fetch_chunk(store, doc_id, state.cursor, config.L)
        try:
            losses = confidence_source(chunk)
        except Exception as exc:
            raise TraversalError(f"loss callback failed on document {doc_id} at offset {state.cursor}: {exc}") from exc
        decision, new_state, done = step(state, losses, config)
        trace.steps.append(
            TraceStep(
                state.cursor,
                len(chunk),
                decision.confidence,
                decision.distance,
                decision.cap_remaining,
                decision.cap_confidence,
            )
        )
        if done:
            return trace
        state = new_state


def average_skips(traces: Iterable[TraversalTrace]) -> float:
    """Mean skip distance over every step of every trace."""
    distances = [d for t in traces for d in t.distances]
    if not distances:
        raise ValueError("average_skips needs at least one traversal step")
    return sum(distances) / len(distances)
