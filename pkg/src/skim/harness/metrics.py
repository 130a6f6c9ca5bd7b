from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    mean_loss: float
    avg_skip: float
    tokens_read: int
    docs_completed: int
    wall_ms: int


class MetricsWriter:
    """Appends one JSON line per record to ``out_dir/metrics.jsonl``."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / "metrics.jsonl"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._last_step = 0

    def write(self, rec: MetricsRecord) -> None:
        if rec.step <= self._last_step:
            raise ValueError(f"metrics step {rec.step} not after {self._last_step}")
        self._last_step = rec.step
        self._fh.write(json.dumps(asdict(rec)) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[MetricsRecord]:
    with open(path) as fh:
        return [MetricsRecord(**json.loads(line)) for line in fh if line.strip()]
