"""Causal multi-head attention kernels with explicit backward passes.

Arrays are laid out ``(heads, time, d_head)``.
"""

import numpy as np


def _scale(q):
    return q.dtype.type(1.0 / np.sqrt(q.shape[-1]))


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))


def causal_attention(q, k, v):
    scale = _scale(q)
    t = q.shape[1]
    s = np.matmul(q, k.transpose(0, 2, 1)) * scale
    s = np.where(causal_mask(t), s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    return np.matmul(p, v), (q, k, v, p)


def causal_attention_backward(dout, cache):
    q, k, v, p = cache
    scale = _scale(q)
    dp = np.matmul(dout, v.transpose(0, 2, 1))
    dv = np.matmul(p.transpose(0, 2, 1), dout)
    ds = p * (dp - (p * dp).sum(axis=-1, keepdims=True))
    dq = np.matmul(ds, k) * scale
    dk = np.matmul(ds.transpose(0, 2, 1), q) * scale
    return dq, dk, dv
