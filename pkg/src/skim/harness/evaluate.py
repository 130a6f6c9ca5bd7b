"""Perplexity with skipping disabled."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from skim import dataserver
from skim.checkpoint import Checkpoint
from skim.corpus import CorpusStore, fetch_chunk
from skim.harness.training import memory_for
from skim.model import forward


@dataclass(frozen=True)
class EvalResult:
    ppl: float
    total_nll: float
    n_tokens: int
    n_docs: int

    def to_dict(self) -> dict:
        return {"ppl": self.ppl, "total_nll": self.total_nll, "n_tokens": self.n_tokens, "n_docs": self.n_docs}


def eval_ppl(ckpt: Checkpoint, store: CorpusStore, max_docs: int = 0) -> EvalResult:
    """Sequential (K=0) pass over every document; ``exp(total NLL / predicted tokens)``.

    Memory is used iff the checkpoint was trained with it, reset per document.
    """
    mcfg = ckpt.config
    docs = range(len(store)) if not max_docs else range(min(max_docs, len(store)))
    if len(docs) == 0:
        raise ValueError("empty evaluation set")
    skip = dataserver.SkipConfig(K=0, L=mcfg.max_window)
    total_nll, n_tokens = 0.0, 0
    for doc_id in docs:
        pool = memory_for(mcfg, ckpt.meta)
        state = dataserver.begin(doc_id, len(store[doc_id]))
        while True:
            chunk = fetch_chunk(store, doc_id, state.cursor, skip.L)
            out = forward(ckpt.params, mcfg, chunk.tokens, pool)
            total_nll += float(np.sum(out.token_losses, dtype=np.float64))
            n_tokens += len(out.token_losses)
            state = dataserver.advance(state, out.token_losses, skip)
            if state is dataserver.END:
                break
    return EvalResult(math.exp(total_nll / n_tokens), total_nll, n_tokens, len(docs))
