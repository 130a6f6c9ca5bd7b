import json
import math

import numpy as np
import pytest

from skim import dataserver as ds
from skim import model as M
from skim.checkpoint import Checkpoint, ParameterMismatch, load, save
from skim.corpus import CorpusStore, ingest
from skim.harness import RunConfig, eval_ppl, finetune, pretrain, pretrain_short, read_metrics
from skim.harness.config import ConfigError, parse_lines
from skim.harness.metrics import MetricsRecord, MetricsWriter
from skim.harness.qa import qa_eval, qa_generate, read_evidence, update_grid
from skim.harness.synth import QAExample, QASettings, SynthSettings, qa_examples, read_qa
from skim.harness.training import answer_window, qa_prefix

TINY = {
    "model.n_layers": 1, "model.d_model": 16, "model.n_heads": 2, "model.d_ff": 32,
    "model.max_window": 32, "batch_size": 3, "steps": 12, "warmup": 2,
    "synth.n_docs": 5, "synth.min_len": 300, "synth.max_len": 500, "synth.block_len": 64,
    "corpus.min_tokens": 100, "eval.min_tokens": 100,
}


def tiny_cfg(tmp_path, name="run", **extra):
    values = dict(TINY, out_dir=str(tmp_path / name))
    values.update({k.replace("__", "."): v for k, v in extra.items()})
    return RunConfig.build(values, env={})


# -- config ---------------------------------------------------------------------

def test_config_precedence_and_env():
    file_values = parse_lines("steps = 10\n[skip]\nk = 64  # inline\n")
    cfg = RunConfig.build(file_values, {"skip.k": "256"}, env={"SKIM_SEED": "9"})
    assert cfg["steps"] == 10 and cfg["skip.k"] == 256 and cfg["seed"] == 9


def test_config_unknown_key_lists_valid():
    with pytest.raises(ConfigError, match="valid keys:.*skip.k"):
        RunConfig.build({"skip.kk": "1"}, env={})


def test_config_requirements():
    with pytest.raises(ConfigError, match="init_checkpoint"):
        RunConfig.build({"mode": "finetune"}, env={})
    with pytest.raises(ConfigError, match="checkpoint"):
        RunConfig.build({"mode": "eval"}, env={})
    with pytest.raises(ConfigError):
        RunConfig.build({"model.d_model": "30"}, env={})
    with pytest.raises(ConfigError):
        RunConfig.build({"steps": "1.5"}, env={})


def test_config_dumps_roundtrip():
    cfg = RunConfig.build({"out_dir": "a b", "checkpoint": '""', "memory.enabled": "yes"}, env={})
    assert RunConfig.build(parse_lines(cfg.dumps()), env={}) == cfg


# -- metrics --------------------------------------------------------------------

def test_metrics_writer_enforces_order(tmp_path):
    with MetricsWriter(tmp_path) as w:
        w.write(MetricsRecord(1, 1.0, 0.0, 10, 0, 1))
        with pytest.raises(ValueError):
            w.write(MetricsRecord(1, 1.0, 0.0, 10, 0, 1))
    assert len(read_metrics(tmp_path / "metrics.jsonl")) == 1


# -- training -------------------------------------------------------------------

@pytest.fixture(scope="module")
def k0_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("k0")
    return tmp, pretrain(tiny_cfg(tmp))


def test_k0_run_never_skips(k0_run):
    tmp, result = k0_run
    recs = read_metrics(tmp / "run" / "metrics.jsonl")
    assert [r.step for r in recs] == list(range(1, 13))
    assert all(r.avg_skip == 0 for r in recs)
    assert (tmp / "run" / "model.skim").exists()


def test_avg_skip_consistency(tmp_path):
    result = pretrain(tiny_cfg(tmp_path, skip__k=8, skip__alpha=20.0))
    recs = result.metrics
    total = sum(sum(t.distances) for t in result.traces)
    assert math.isclose(sum(r.avg_skip for r in recs) * 3, total)
    assert result.avg_skip == ds.average_skips([t for t in result.traces if t.steps])
    assert total > 0
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["avg_skip"] == result.avg_skip
    for t in result.traces:
        assert t.tokens_read + t.tokens_skipped + t.tokens_unreached == t.doc_len


def test_pretrain_deterministic(tmp_path):
    a = pretrain(tiny_cfg(tmp_path, "a", skip__k=8))
    b = pretrain(tiny_cfg(tmp_path, "b", skip__k=8))
    strip = [(r.step, r.mean_loss, r.avg_skip, r.tokens_read, r.docs_completed) for r in a.metrics]
    assert strip == [(r.step, r.mean_loss, r.avg_skip, r.tokens_read, r.docs_completed) for r in b.metrics]
    assert load(a.checkpoint_path).digest() == load(b.checkpoint_path).digest()


def test_corpus_exhaustion_reshuffles(tmp_path):
    result = pretrain(tiny_cfg(tmp_path, steps=80, batch_size=4))
    assert result.metrics[-1].docs_completed > 5


def test_checkpoint_every(tmp_path):
    pretrain(tiny_cfg(tmp_path, steps=4, checkpoint_every=2))
    assert sorted(p.name for p in (tmp_path / "run").glob("ckpt_*.skim")) == ["ckpt_000002.skim", "ckpt_000004.skim"]


def test_memory_run(tmp_path):
    result = pretrain(tiny_cfg(tmp_path, memory__enabled="true", memory__capacity=16, memory__k_retrieve=4,
                               skip__k=8, steps=5))
    assert load(result.checkpoint_path).meta["memory_enabled"] is True


def test_pretrain_short_no_skip(tmp_path):
    a = pretrain_short(tiny_cfg(tmp_path, "a"))
    b = pretrain_short(tiny_cfg(tmp_path, "b"))
    assert all(r.avg_skip == 0 for r in a.metrics)
    assert [r.mean_loss for r in a.metrics] == [r.mean_loss for r in b.metrics]


def test_finetune_lr_zero_keeps_params(k0_run, tmp_path):
    tmp, _ = k0_run
    init = tmp / "run" / "model.skim"
    res = finetune(tiny_cfg(tmp_path, mode="finetune", init_checkpoint=str(init), lr=0.0, skip__k=8))
    before, after = load(init), load(res.checkpoint_path)
    assert before.digest() == after.digest()


def test_finetune_config_mismatch(k0_run, tmp_path):
    tmp, _ = k0_run
    cfg = tiny_cfg(tmp_path, mode="finetune", init_checkpoint=str(tmp / "run" / "model.skim"), model__d_ff=64)
    with pytest.raises(ParameterMismatch):
        finetune(cfg)


# -- evaluation -----------------------------------------------------------------

def test_eval_isolation_and_determinism(k0_run):
    tmp, result = k0_run
    ckpt = load(result.checkpoint_path)
    store = ingest(tmp / "run" / "corpus_synthetic.jsonl", 100)
    before = ckpt.digest()
    a, b = eval_ppl(ckpt, store), eval_ppl(ckpt, store)
    assert ckpt.digest() == before
    assert a == b
    assert a.n_tokens == sum(len(d) - math.ceil(len(d) / 32) for d in store.documents)


def test_eval_uniform_head():
    cfg = M.ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, max_window=32)
    params = M.init_params(cfg)
    params["head.w"][:] = 0
    res = eval_ppl(Checkpoint(cfg, params), CorpusStore.from_texts(["abc" * 100, "xyz" * 50]))
    assert abs(res.ppl - 260) / 260 < 1e-3


def test_eval_empty():
    cfg = M.ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, max_window=32)
    store = CorpusStore.from_texts(["abc"])
    store.documents.clear()
    with pytest.raises(ValueError):
        eval_ppl(Checkpoint(cfg, M.init_params(cfg)), store)


# -- QA -------------------------------------------------------------------------

SMALL_QA = QASettings(n_examples=5, distractors=6, answer_passages=2, min_evidence=1500)


def test_qa_generation_defaults():
    exs = qa_examples(QASettings(n_examples=20), SynthSettings(), 3)
    assert np.mean([len(e.evidence_tokens) for e in exs]) >= 8192
    for e in exs:
        assert len(e.passages) == 43
        assert e.answer in bytes(e.evidence_tokens[e.evidence_tokens < 256].astype(np.uint8)).decode()
        for p in e.answer_positions:
            assert e.answer in e.passages[p]


def test_qa_generation_seeded(tmp_path):
    cfg = RunConfig.build({"out_dir": str(tmp_path), "qa.n_examples": "4", "qa.min_evidence": "600",
                           "qa.distractors": "4"}, env={})
    a = qa_generate(cfg).read_text()
    b = qa_generate(cfg).read_text()
    assert a == b
    rec = json.loads(a.splitlines()[0])
    assert set(rec) == {"question", "evidence", "answer", "answer_positions"}
    assert read_qa(tmp_path / "qa.jsonl")[0].to_record() == rec


def test_qa_from_record_string_evidence():
    ex = QAExample.from_record({"question": "q?", "evidence": "the key is 42", "answer": "42"})
    assert ex.answer_positions == [0]


def test_answer_window_layout():
    ex = qa_examples(SMALL_QA, SynthSettings(), 0)[0]
    prefix = qa_prefix(ex)
    ctx = np.arange(100, dtype=np.uint16)
    win, start = answer_window(ex, prefix, ctx, 64)
    assert len(win) == 64
    assert win[start:start + len(ex.answer_tokens)].tolist() == ex.answer_tokens.tolist()
    assert win[-1] == 258
    head, s2 = answer_window(ex, prefix, None, 64, with_answer=False)
    assert s2 == len(head) == len(prefix) + 1


def _stub(value):
    return lambda window, pool, prefix_len: np.full(len(window) - prefix_len - 1, value)


def test_k0_windows_read_arithmetic():
    for ex in qa_examples(SMALL_QA, SynthSettings(), 1):
        prefix = qa_prefix(ex)
        L = 96 - len(prefix)
        trace, _ = read_evidence(ex, ds.SkipConfig(K=0, L=L), _stub(1.0))
        n = len(ex.evidence_tokens)
        # a lone final token is never a window of its own
        assert trace.windows_read == math.ceil((n - 1) / L)


def test_stub_skipping_reads_fewer_windows():
    for ex in qa_examples(SMALL_QA, SynthSettings(), 2):
        L = 96 - len(qa_prefix(ex))
        reads = [read_evidence(ex, ds.SkipConfig(K=k, alpha=2.0, L=L), _stub(1.0))[0].windows_read
                 for k in (0, 64)]
        assert reads[1] < reads[0]


def test_qa_eval_and_grid(tmp_path):
    cfg = M.ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, max_window=96)
    ckpt = Checkpoint(cfg, M.init_params(cfg), meta={"skip_k": 0, "memory_enabled": True,
                                                    "memory_capacity": 64, "memory_k_retrieve": 4})
    exs = qa_examples(SMALL_QA, SynthSettings(), 4)[:2]
    grid = None
    for k_train in (0, 32):
        for k_infer in (0, 32, 64):
            res = qa_eval(ckpt, exs, k_infer, alpha=8.0)
            res.k_train = k_train
            assert res.mean_windows > 0 and 0 <= res.accuracy <= 1
            grid = update_grid(tmp_path / "grid.json", res)
    assert grid["k_train"] == [0, 32] and grid["k_infer"] == [0, 32, 64]
    assert len(grid["cells"]) == 6
    assert all(v is not None for row in grid["accuracy"] for v in row)


def test_training_lowers_eval_ppl(tmp_path):
    short = pretrain_short(tiny_cfg(tmp_path, "short", steps=40, lr=1e-2))
    cfg = tiny_cfg(tmp_path, "ft", mode="finetune", init_checkpoint=str(short.checkpoint_path),
                   steps=60, lr=1e-2, skip__k=16)
    tuned = finetune(cfg)
    store = ingest(tmp_path / "ft" / "corpus_synthetic.jsonl", 100)
    init = Checkpoint(short.config, M.init_params(short.config))
    ppl_init = eval_ppl(init, store).ppl
    ppl_short = eval_ppl(load(short.checkpoint_path), store).ppl
    ppl_tuned = eval_ppl(load(tuned.checkpoint_path), store).ppl
    assert ppl_short < ppl_init
    assert ppl_tuned < ppl_short
