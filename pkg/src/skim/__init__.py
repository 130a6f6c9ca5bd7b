"""Loss-guided random-access reading for long documents.

A data server pools the per-token losses of the window a model just read
and uses them to decide how far to jump ahead before reading the next
window. The package bundles a byte-level corpus store, a small numpy
transformer with optional key/value memory, and training/eval harnesses.
"""

from skim.corpus import CorpusStore, Document, TokenChunk, fetch_chunk, ingest, tokenize
from skim.dataserver import (
    END,
    ReadState,
    SkipConfig,
    SkipDecision,
    TraversalTrace,
    advance,
    average_skips,
    pool_losses,
    skip_distance,
    traverse,
)

__version__ = "0.1.0"

__all__ = [
    "CorpusStore",
    "Document",
    "TokenChunk",
    "fetch_chunk",
    "ingest",
    "tokenize",
    "END",
    "ReadState",
    "SkipConfig",
    "SkipDecision",
    "TraversalTrace",
    "advance",
    "average_skips",
    "pool_losses",
    "skip_distance",
    "traverse",
]
