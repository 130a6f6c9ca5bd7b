"""Kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``SKIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from skim import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SKIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from skim import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def topk_rows(scores, k):
    """Row-wise top-k column indices of a 2-D score array, best first.

    Equal scores are ordered by ascending column index, so when columns
    are stored oldest-first the tie goes to the older entry.
    """
    scores = np.ascontiguousarray(scores)
    if scores.dtype not in (np.float32, np.float64):
        scores = scores.astype(np.float64)
    return _impl.topk_rows(scores, int(k))


def log_softmax_nll(logits, targets):
    """Return ``(nll, probs)`` for each row of ``logits`` against ``targets``.

    Always numpy: its vectorized exp beats a scalar compiled loop here.
    """
    return _kernels_py.log_softmax_nll(np.asarray(logits), np.asarray(targets, dtype=np.int64))
