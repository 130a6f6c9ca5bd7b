"""Synthetic long-context QA: generation, skip-reading evaluation and the K grid.

Evidence is read window by window with the question prefixed to every
window, so the losses that drive skipping are conditioned on the question.
After the last window the answer is greedily decoded from
``question + SEP + context + SEP``, where the context is empty for memory
models (they rely on the pool) and the final evidence window otherwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from skim import dataserver
from skim.checkpoint import Checkpoint
from skim.corpus import EOS, detokenize
from skim.dataserver import TraceStep, TraversalTrace
from skim.harness.config import RunConfig
from skim.harness.synth import QAExample, QASettings, SynthSettings, qa_examples, write_qa
from skim.harness.training import answer_window, memory_for, qa_prefix
from skim.model import forward, generate

Scorer = Callable[[np.ndarray, object, int], np.ndarray]


def qa_generate(cfg: RunConfig, seed_offset: int = 0) -> Path:
    examples = qa_examples(QASettings.from_config(cfg), SynthSettings.from_config(cfg), cfg["seed"] + seed_offset)
    path = cfg["qa.path"] or Path(cfg["out_dir"]) / "qa.jsonl"
    return write_qa(examples, path)


@dataclass(frozen=True)
class QAOutcome:
    correct: bool
    prediction: str
    windows_read: int
    tokens_skipped: int
    evidence_len: int


@dataclass
class QAResult:
    k_train: int
    k_infer: int
    accuracy: float
    mean_windows: float
    mean_skipped: float
    outcomes: list[QAOutcome] = field(default_factory=list, repr=False)

    def cell(self) -> dict:
        return {"k_train": self.k_train, "k_infer": self.k_infer, "accuracy": self.accuracy,
                "mean_windows": self.mean_windows, "mean_skipped": self.mean_skipped,
                "n_examples": len(self.outcomes)}


def model_scorer(ckpt: Checkpoint) -> Scorer:
    def score(window, pool, prefix_len):
        out = forward(ckpt.params, ckpt.config, window, pool, store_from=prefix_len)
        return out.token_losses[prefix_len:]
    return score


def read_evidence(example: QAExample, skip: dataserver.SkipConfig, scorer: Scorer, pool=None):
    """Skip-read one example's evidence. Returns ``(trace, last_window)``."""
    prefix = qa_prefix(example)
    body = example.evidence_tokens
    trace = TraversalTrace(0, len(body))
    state = dataserver.begin(0, len(body))
    while True:
        wlen = state.window_len(skip)
        chunk = body[state.cursor:state.cursor + wlen]
        losses = scorer(np.concatenate([prefix, chunk]), pool, len(prefix))
        decision, state_next, done = dataserver.step(state, losses, skip)
        trace.steps.append(TraceStep(state.cursor, wlen, decision.confidence, decision.distance,
                                     decision.cap_remaining, decision.cap_confidence))
        if done:
            return trace, chunk
        state = state_next


def qa_eval(ckpt: Checkpoint, examples: list[QAExample], k_infer: int, *, alpha: float = 2.0,
            pooling: str = "average", decay: float = 0.9, c_min: float = 1e-6,
            scorer: Scorer | None = None) -> QAResult:
    mcfg = ckpt.config
    scorer = scorer or model_scorer(ckpt)
    outcomes = []
    for ex in examples:
        prefix = qa_prefix(ex)
        skip = dataserver.SkipConfig(K=k_infer, alpha=alpha, L=mcfg.max_window - len(prefix),
                                     pooling=pooling, decay=decay, c_min=c_min)
        pool = memory_for(mcfg, ckpt.meta)
        trace, last = read_evidence(ex, skip, scorer, pool)
        head, _ = answer_window(ex, prefix, None if pool is not None else last, mcfg.max_window,
                                with_answer=False)
        produced = generate(ckpt.params, mcfg, head, len(ex.answer_tokens) + 1, pool, stop_token=EOS)
        if produced and produced[-1] == EOS:
            produced = produced[:-1]
        correct = produced == [int(t) for t in ex.answer_tokens]
        outcomes.append(QAOutcome(correct, detokenize(produced), trace.windows_read,
                                  trace.tokens_skipped, trace.doc_len))
    n = len(outcomes)
    if n == 0:
        raise ValueError("no QA examples to evaluate")
    return QAResult(
        ckpt.meta.get("skip_k", 0), k_infer,
        sum(o.correct for o in outcomes) / n,
        sum(o.windows_read for o in outcomes) / n,
        sum(o.tokens_skipped for o in outcomes) / n,
        outcomes,
    )


def update_grid(path, result: QAResult) -> dict:
    """Merge one (K_train, K_infer) cell into the grid file and rebuild its matrices."""
    path = Path(path)
    grid = json.loads(path.read_text()) if path.exists() else {"cells": []}
    cells = [c for c in grid["cells"] if (c["k_train"], c["k_infer"]) != (result.k_train, result.k_infer)]
    cells.append(result.cell())
    cells.sort(key=lambda c: (c["k_train"], c["k_infer"]))
    k_train = sorted({c["k_train"] for c in cells})
    k_infer = sorted({c["k_infer"] for c in cells})
    lookup = {(c["k_train"], c["k_infer"]): c for c in cells}

    def matrix(metric):
        return [[lookup[(a, b)][metric] if (a, b) in lookup else None for b in k_infer] for a in k_train]

    grid = {"k_train": k_train, "k_infer": k_infer, "accuracy": matrix("accuracy"),
            "mean_windows": matrix("mean_windows"), "mean_skipped": matrix("mean_skipped"), "cells": cells}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(grid, indent=2, sort_keys=True) + "\n")
    return grid


def qa_grid(checkpoints: dict[int, Checkpoint], examples: list[QAExample], k_values, grid_path,
            **skip_kwargs) -> dict:
    grid = None
    for k_train, ckpt in sorted(checkpoints.items()):
        for k_infer in k_values:
            res = qa_eval(ckpt, examples, k_infer, **skip_kwargs)
            res.k_train = k_train
            grid = update_grid(grid_path, res)
    return grid


def outcomes_jsonl(result: QAResult) -> str:
    return "".join(json.dumps(asdict(o)) + "\n" for o in result.outcomes)
