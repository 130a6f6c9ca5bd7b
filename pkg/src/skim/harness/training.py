"""Training loops: skipping (pre)training, finetuning and the short-text baseline.

Skipping runs keep ``batch_size`` document cursors and step them in
lockstep. Each step reads one window per cursor, trains on the batch, and
hands each window's per-token losses to the data server, which moves that
cursor. Finished documents are replaced by the next one in a seeded order;
when the corpus runs out the order is reshuffled.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from skim import dataserver
from skim.checkpoint import Checkpoint, ParameterMismatch, load, save
from skim.corpus import EOS, SEP, CorpusStore, ingest, shuffled_short_chunks
from skim.dataserver import TraceStep, TraversalTrace
from skim.harness.config import RunConfig
from skim.harness.metrics import MetricsRecord, MetricsWriter
from skim.harness.synth import QAExample, SynthSettings, read_qa, write_corpus
from skim.memory import MemoryPool
from skim.model import ModelConfig, init_params, new_memory, train_step
from skim.optim import Adam

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    params: dict
    config: ModelConfig
    metrics: list[MetricsRecord]
    traces: list[TraversalTrace] = field(default_factory=list)
    checkpoint_path: Path | None = None

    @property
    def avg_skip(self) -> float:
        steps = [t for t in self.traces if t.steps]
        return dataserver.average_skips(steps) if steps else 0.0


def load_text_corpus(cfg: RunConfig, key: str = "corpus", seed_offset: int = 0) -> CorpusStore:
    """Ingest ``<key>.path``; without one, write and ingest a synthetic corpus."""
    path = cfg[f"{key}.path"]
    if path is None:
        path = Path(cfg["out_dir"]) / f"{key}_synthetic.jsonl"
        write_corpus(SynthSettings.from_config(cfg), cfg["seed"] + seed_offset, path)
    return ingest(path, cfg[f"{key}.min_tokens"])


def checkpoint_meta(cfg: RunConfig, kind: str) -> dict:
    return {
        "trained_by": cfg["mode"],
        "corpus_kind": kind,
        "skip_k": cfg["skip.k"],
        "skip_alpha": cfg["skip.alpha"],
        "memory_enabled": cfg["memory.enabled"],
        "memory_capacity": cfg["memory.capacity"],
        "memory_k_retrieve": cfg["memory.k_retrieve"],
    }


def memory_for(mcfg: ModelConfig, meta_or_cfg, enabled=None) -> MemoryPool | None:
    """A fresh pool if memory is enabled in a run config or checkpoint meta."""
    get = meta_or_cfg.get
    if enabled is None:
        enabled = get("memory.enabled", get("memory_enabled", False))
    if not enabled:
        return None
    capacity = get("memory.capacity", get("memory_capacity", 256))
    k = get("memory.k_retrieve", get("memory_k_retrieve", 32))
    return new_memory(mcfg, capacity, k)


# -- cursor sources ---------------------------------------------------------------

@dataclass
class _Cursor:
    doc_id: int
    body: np.ndarray
    skip: dataserver.SkipConfig
    state: dataserver.ReadState
    trace: TraversalTrace
    pool: MemoryPool | None
    prefix: np.ndarray
    example: QAExample | None = None
    answering: bool = False
    last_window: np.ndarray | None = None


class _Order:
    """Endless seeded permutation over ``n`` items; reshuffles each epoch."""

    def __init__(self, n: int, seed: int):
        self.n, self.seed, self.epoch, self.pos = n, seed, 0, 0
        self.order = np.random.default_rng([seed, 0]).permutation(n)

    def next(self) -> int:
        if self.pos == self.n:
            self.epoch += 1
            self.pos = 0
            self.order = np.random.default_rng([self.seed, self.epoch]).permutation(self.n)
        item = int(self.order[self.pos])
        self.pos += 1
        return item


class _TextCursors:
    def __init__(self, store: CorpusStore, cfg: RunConfig, mcfg: ModelConfig):
        self.store, self.cfg, self.mcfg = store, cfg, mcfg
        self.order = _Order(len(store), cfg["seed"])
        self.skip = cfg.skip_config()

    def next(self) -> _Cursor:
        doc_id = self.order.next()
        body = self.store[doc_id].tokens
        return _Cursor(doc_id, body, self.skip, dataserver.begin(doc_id, len(body)),
                       TraversalTrace(doc_id, len(body)), memory_for(self.mcfg, self.cfg),
                       np.empty(0, dtype=body.dtype))


def qa_prefix(example: QAExample) -> np.ndarray:
    return np.concatenate([example.question_tokens, np.array([SEP], dtype=np.uint16)])


def answer_window(example: QAExample, prefix: np.ndarray, context: np.ndarray | None,
                  max_window: int, with_answer: bool = True) -> tuple[np.ndarray, int]:
    """``prefix + context + SEP [+ answer + EOS]`` and the index where the answer starts.

    ``context`` is cut from the left so the whole answer window fits.
    """
    tail = len(example.answer_tokens) + 1
    room = max_window - len(prefix) - 1 - tail
    if room < 0:
        raise ValueError("max_window too small for question and answer")
    ctx = np.empty(0, dtype=np.uint16) if context is None or room == 0 else context[-room:]
    head = np.concatenate([prefix, ctx, np.array([SEP], dtype=np.uint16)])
    if not with_answer:
        return head, len(head)
    return np.concatenate([head, example.answer_tokens, np.array([EOS], dtype=np.uint16)]), len(head)


class _QACursors:
    def __init__(self, examples: list[QAExample], cfg: RunConfig, mcfg: ModelConfig):
        self.examples, self.cfg, self.mcfg = examples, cfg, mcfg
        self.order = _Order(len(examples), cfg["seed"])

    def next(self) -> _Cursor:
        i = self.order.next()
        ex = self.examples[i]
        prefix = qa_prefix(ex)
        body = ex.evidence_tokens
        skip = self.cfg.skip_config(L=self.mcfg.max_window - len(prefix))
        return _Cursor(i, body, skip, dataserver.begin(i, len(body)), TraversalTrace(i, len(body)),
                       memory_for(self.mcfg, self.cfg), prefix, ex)


# -- loops ------------------------------------------------------------------------

def _skipping_loop(cfg: RunConfig, params, mcfg: ModelConfig, source, kind: str) -> RunResult:
    out_dir = Path(cfg["out_dir"])
    opt = Adam(lr=cfg["lr"], warmup=cfg["warmup"], clip=cfg["clip"])
    cursors: list[_Cursor | None] = [None] * cfg["batch_size"]
    finished: list[TraversalTrace] = []
    records: list[MetricsRecord] = []
    docs_completed = 0
    with MetricsWriter(out_dir) as writer:
        for step in range(1, cfg["steps"] + 1):
            t0 = time.perf_counter()
            windows, pools, loss_starts, store_froms, doc_ids = [], [], [], [], []
            for i, cur in enumerate(cursors):
                if cur is None:
                    cur = cursors[i] = source.next()
                if cur.answering:
                    win, start = answer_window(cur.example, cur.prefix,
                                               None if cur.pool is not None else cur.last_window,
                                               mcfg.max_window)
                    windows.append(win)
                    loss_starts.append(start)
                    store_froms.append(len(win))
                else:
                    wlen = cur.state.window_len(cur.skip)
                    body = cur.body[cur.state.cursor:cur.state.cursor + wlen]
                    cur.last_window = body
                    windows.append(np.concatenate([cur.prefix, body]) if len(cur.prefix) else body)
                    loss_starts.append(len(cur.prefix) + 1)
                    store_froms.append(len(cur.prefix))
                pools.append(cur.pool)
                doc_ids.append(cur.doc_id)

            mean_loss, outputs = train_step(params, mcfg, opt, windows, pools, loss_starts=loss_starts,
                                            store_froms=store_froms, doc_ids=doc_ids)

            distances, tokens_read = [], 0
            for i, (cur, out, ls) in enumerate(zip(cursors, outputs, loss_starts)):
                if cur.answering:
                    cursors[i] = None
                    docs_completed += 1
                    continue
                wlen = cur.state.window_len(cur.skip)
                decision, new_state, done = dataserver.step(cur.state, out.token_losses[ls - 1:], cur.skip)
                cur.trace.steps.append(TraceStep(cur.state.cursor, wlen, decision.confidence,
                                                 decision.distance, decision.cap_remaining,
                                                 decision.cap_confidence))
                distances.append(decision.distance)
                tokens_read += wlen
                cur.state = new_state
                if done:
                    finished.append(cur.trace)
                    if cur.example is not None:
                        cur.answering = True
                    else:
                        cursors[i] = None
                        docs_completed += 1

            rec = MetricsRecord(
                step=step,
                mean_loss=mean_loss,
                avg_skip=sum(distances) / len(distances) if distances else 0.0,
                tokens_read=tokens_read,
                docs_completed=docs_completed,
                wall_ms=int(round((time.perf_counter() - t0) * 1000)),
            )
            writer.write(rec)
            records.append(rec)
            if cfg["checkpoint_every"] and step % cfg["checkpoint_every"] == 0:
                save(Checkpoint(mcfg, params, step, checkpoint_meta(cfg, kind)), out_dir / f"ckpt_{step:06d}.skim")
            if step % 100 == 0:
                logger.info("step %d loss %.4f avg_skip %.1f", step, mean_loss, rec.avg_skip)

    in_flight = [c.trace for c in cursors if c is not None and not c.answering and c.trace.steps]
    result = RunResult(params, mcfg, records, finished + in_flight)
    result.checkpoint_path = save(Checkpoint(mcfg, params, cfg["steps"], checkpoint_meta(cfg, kind)),
                                  out_dir / "model.skim")
    _write_summary(out_dir, result)
    return result


def _write_summary(out_dir: Path, result: RunResult) -> None:
    last = result.metrics[-1] if result.metrics else None
    summary = {
        "steps": len(result.metrics),
        "final_mean_loss": last.mean_loss if last else None,
        "avg_skip": result.avg_skip,
        "documents_traversed": len(result.traces),
        "checkpoint": str(result.checkpoint_path) if result.checkpoint_path else None,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _source_for(cfg: RunConfig, mcfg: ModelConfig):
    if cfg["corpus.kind"] == "qa":
        if not cfg["corpus.path"]:
            from skim.harness.qa import qa_generate

            path = qa_generate(cfg.replace(**{"qa.path": str(Path(cfg["out_dir"]) / "qa_train.jsonl")}),
                               seed_offset=1)
        else:
            path = cfg["corpus.path"]
        return _QACursors(read_qa(path), cfg, mcfg)
    return _TextCursors(load_text_corpus(cfg), cfg, mcfg)


def pretrain(cfg: RunConfig) -> RunResult:
    mcfg = cfg.model_config()
    params = init_params(mcfg)
    return _skipping_loop(cfg, params, mcfg, _source_for(cfg, mcfg), cfg["corpus.kind"])


def load_matching(path, mcfg: ModelConfig) -> Checkpoint:
    ckpt = load(path)
    a = {k: v for k, v in ckpt.config.to_dict().items() if k != "seed"}
    b = {k: v for k, v in mcfg.to_dict().items() if k != "seed"}
    if a != b:
        diff = {k: (a[k], b[k]) for k in a if a[k] != b[k]}
        raise ParameterMismatch(f"checkpoint {path} does not match model config: {diff}")
    return ckpt


def finetune(cfg: RunConfig) -> RunResult:
    mcfg = cfg.model_config()
    ckpt = load_matching(cfg["init_checkpoint"], mcfg)
    params = {k: v.copy() for k, v in ckpt.params.items()}
    return _skipping_loop(cfg, params, mcfg, _source_for(cfg, mcfg), cfg["corpus.kind"])


def pretrain_short(cfg: RunConfig) -> RunResult:
    """Baseline: concatenate, chunk to ``max_window``, shuffle; no skipping."""
    out_dir = Path(cfg["out_dir"])
    mcfg = cfg.model_config()
    params = init_params(mcfg)
    store = load_text_corpus(cfg)
    opt = Adam(lr=cfg["lr"], warmup=cfg["warmup"], clip=cfg["clip"])
    epoch = 0

    def chunks():
        nonlocal epoch
        while True:
            yield from shuffled_short_chunks(store, mcfg.max_window, cfg["seed"] + epoch)
            epoch += 1

    stream = chunks()
    records = []
    with MetricsWriter(out_dir) as writer:
        for step in range(1, cfg["steps"] + 1):
            t0 = time.perf_counter()
            batch = [next(stream) for _ in range(cfg["batch_size"])]
            mean_loss, _ = train_step(params, mcfg, opt, batch)
            rec = MetricsRecord(step, mean_loss, 0.0, sum(len(c) for c in batch), 0,
                                int(round((time.perf_counter() - t0) * 1000)))
            writer.write(rec)
            records.append(rec)
            if cfg["checkpoint_every"] and step % cfg["checkpoint_every"] == 0:
                save(Checkpoint(mcfg, params, step, checkpoint_meta(cfg, "short")), out_dir / f"ckpt_{step:06d}.skim")
    meta = checkpoint_meta(cfg, "short")
    meta["skip_k"] = 0
    result = RunResult(params, mcfg, records)
    result.checkpoint_path = save(Checkpoint(mcfg, params, cfg["steps"], meta), out_dir / "model.skim")
    _write_summary(out_dir, result)
    return result
