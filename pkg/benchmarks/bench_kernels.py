"""Compiled vs numpy top-k, plus a memory-enabled forward pass under each backend.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from skim import _kernels_py

try:
    from skim import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng):
    # memory retrieval: one query row per window position against the pool
    scores = rng.normal(size=(256, 1024)).astype(np.float32)
    big = rng.normal(size=(256, 4096)).astype(np.float32)
    return {
        "topk_rows 256x1024 k=32": lambda m: m.topk_rows(scores, 32),
        "topk_rows 256x256 k=32": lambda m: m.topk_rows(scores[:, :256].copy(), 32),
        "topk_rows 256x4096 k=32": lambda m: m.topk_rows(big, 32),
    }


FORWARD = """
import numpy as np
from skim import model as M
cfg = M.ModelConfig(n_layers=4, d_model=64, n_heads=4, d_ff=256, max_window=128)
p = M.init_params(cfg)
toks = np.random.default_rng(0).integers(0, 260, 128)
pool = M.new_memory(cfg, capacity=256, k_retrieve=32)
for _ in range(2):
    M.forward(p, cfg, toks, pool)
"""


def forward_ms(pure: bool, repeat: int) -> float:
    env = dict(os.environ, SKIM_PURE_PYTHON="1" if pure else "0")
    code = (f"import timeit; t = timeit.repeat(stmt='M.forward(p, cfg, toks, pool, store=False)', "
            f"setup={FORWARD!r}, number=20, repeat={repeat}); print(min(t) / 20 * 1000)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng).items():
        py = min(timeit.repeat(lambda: fn(_kernels_py), number=50, repeat=args.repeat)) / 50 * 1e3
        cy = None
        if _compiled is not None:
            cy = min(timeit.repeat(lambda: fn(_compiled), number=50, repeat=args.repeat)) / 50 * 1e3
        rows.append({"case": name, "python_ms": py, "cython_ms": cy})
    rows.append({"case": "model.forward L=128 with memory",
                 "python_ms": forward_ms(True, args.repeat),
                 "cython_ms": forward_ms(False, args.repeat) if _compiled is not None else None})

    print(f"{'case':36s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for r in rows:
        cy = r["cython_ms"]
        sp = f"{r['python_ms'] / cy:7.2f}x" if cy else "     n/a"
        print(f"{r['case']:36s} {r['python_ms']:10.3f} {cy if cy else float('nan'):10.3f} {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
