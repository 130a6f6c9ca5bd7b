"""Experiment orchestration: training loops, evaluation, synthetic data and QA."""

from skim.harness.config import ConfigError, RunConfig
from skim.harness.evaluate import EvalResult, eval_ppl
from skim.harness.metrics import MetricsRecord, read_metrics
from skim.harness.qa import QAResult, qa_eval, qa_generate, qa_grid, update_grid
from skim.harness.training import RunResult, finetune, pretrain, pretrain_short

__all__ = [
    "ConfigError", "RunConfig", "EvalResult", "eval_ppl", "MetricsRecord", "read_metrics",
    "QAResult", "qa_eval", "qa_generate", "qa_grid", "update_grid",
    "RunResult", "finetune", "pretrain", "pretrain_short",
]
