"""Bounded per-layer key/value memory with FIFO eviction and exact top-k reads.

Each (layer, head) slot holds its entries oldest-first. Queries from the
current window retrieve their top-k memory keys by dot product and attend
over them jointly with the causal window keys, under a single softmax.
Stored keys and values are constants: no gradient flows into them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from skim import kernels
from skim.attention import _scale, causal_attention, causal_attention_backward, causal_mask


@dataclass(frozen=True)
class Retrieved:
    indices: np.ndarray
    seqs: np.ndarray
    scores: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.indices)


class MemoryPool:
    def __init__(self, n_layers: int, n_heads: int, d_head: int, capacity: int = 256,
                 k_retrieve: int = 32, dtype=np.float32):
        if capacity < 0 or k_retrieve < 0:
            raise ValueError("capacity and k_retrieve must be non-negative")
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_head = d_head
        self.capacity = capacity
        self.k_retrieve = k_retrieve
        self.dtype = np.dtype(dtype)
        self.reset()

    def reset(self) -> "MemoryPool":
        shape = (self.n_layers, self.n_heads)
        self._keys = np.empty(shape, dtype=object)
        self._values = np.empty(shape, dtype=object)
        self._seqs = np.empty(shape, dtype=object)
        self._next_seq = np.zeros(shape, dtype=np.int64)
        for layer in range(self.n_layers):
            for head in range(self.n_heads):
                self._keys[layer, head] = np.empty((0, self.d_head), dtype=self.dtype)
                self._values[layer, head] = np.empty((0, self.d_head), dtype=self.dtype)
                self._seqs[layer, head] = np.empty(0, dtype=np.int64)
        return self

    def size(self, layer: int, head: int) -> int:
        return len(self._seqs[layer, head])

    def __len__(self) -> int:
        """Total entries across all (layer, head) slots."""
        return sum(len(s) for s in self._seqs.flat)

    def entries(self, layer: int, head: int):
        """``(keys, values, insert_seqs)`` oldest first. Views; do not mutate."""
        return self._keys[layer, head], self._values[layer, head], self._seqs[layer, head]

    def append(self, layer: int, head: int, keys, values) -> "MemoryPool":
        keys = np.asarray(keys, dtype=self.dtype)
        values = np.asarray(values, dtype=self.dtype)
        if keys.ndim != 2 or values.ndim != 2 or keys.shape != values.shape or keys.shape[1] != self.d_head:
            raise ValueError(
                f"expected matching (n, {self.d_head}) keys/values, got {keys.shape} and {values.shape}"
            )
        n = len(keys)
        if n == 0:
            return self
        start = self._next_seq[layer, head]
        seqs = np.arange(start, start + n, dtype=np.int64)
        self._next_seq[layer, head] = start + n
        all_k = np.concatenate([self._keys[layer, head], keys])
        all_v = np.concatenate([self._values[layer, head], values])
        all_s = np.concatenate([self._seqs[layer, head], seqs])
        drop = max(0, len(all_s) - self.capacity)
        self._keys[layer, head] = all_k[drop:]
        self._values[layer, head] = all_v[drop:]
        self._seqs[layer, head] = all_s[drop:]
        return self

    def retrieve_topk(self, layer: int, head: int, query, k: int | None = None) -> Retrieved:
        k = self.k_retrieve if k is None else k
        if k < 0:
            raise ValueError("k must be >= 0")
        query = np.asarray(query, dtype=self.dtype)
        if query.shape != (self.d_head,):
            raise ValueError(f"query must have shape ({self.d_head},), got {query.shape}")
        keys, values, seqs = self.entries(layer, head)
        scores = keys @ query
        idx = kernels.topk_rows(scores[None, :], k)[0]
        return Retrieved(idx, seqs[idx], scores[idx], keys[idx], values[idx])

    def dump_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for layer in range(self.n_layers):
                for head in range(self.n_heads):
                    keys, values, seqs = self.entries(layer, head)
                    for key, value, seq in zip(keys, values, seqs):
                        fh.write(json.dumps({
                            "layer": layer, "head": head, "insert_seq": int(seq),
                            "key": key.tolist(), "value": value.tolist(),
                        }) + "\n")


def attend_with_memory(q, k, v, pool: MemoryPool | None = None, layer: int = 0,
                       k_retrieve: int | None = None):
    """Joint softmax over causal window keys and each query's top-k memory keys.

    ``q, k, v`` are ``(heads, T, d_head)``. Returns ``(out, cache)``; with no
    pool or an empty pool this is exactly :func:`causal_attention`. The pool
    is not modified; see :func:`store_window`.
    """
    kk = 0
    if pool is not None:
        kk = pool.k_retrieve if k_retrieve is None else k_retrieve
    if pool is None or kk == 0 or all(pool.size(layer, h) == 0 for h in range(q.shape[0])):
        out, cache = causal_attention(q, k, v)
        return out, ("plain", cache)

    scale = _scale(q)
    n_heads, t, _ = q.shape
    mask = causal_mask(t)
    out = np.empty_like(q)
    heads = []
    for h in range(n_heads):
        mem_k, mem_v, _ = pool.entries(layer, h)
        sw = np.where(mask, (q[h] @ k[h].T) * scale, -np.inf)
        if len(mem_k):
            raw = q[h] @ mem_k.T
            idx = kernels.topk_rows(raw, kk)
            sm = np.take_along_axis(raw, idx, axis=1) * scale
            k_sel, v_sel = mem_k[idx], mem_v[idx]
        else:
            idx = np.empty((t, 0), dtype=np.int64)
            sm = np.empty((t, 0), dtype=q.dtype)
            k_sel = v_sel = np.empty((t, 0, q.shape[2]), dtype=q.dtype)
        m = np.maximum(sw.max(axis=1), sm.max(axis=1, initial=-np.inf))[:, None]
        ew, em = np.exp(sw - m), np.exp(sm - m)
        z = ew.sum(axis=1, keepdims=True) + em.sum(axis=1, keepdims=True)
        pw, pm = ew / z, em / z
        out[h] = pw @ v[h] + np.einsum("tk,tkd->td", pm, v_sel)
        heads.append((pw, pm, k_sel, v_sel, idx))
    return out, ("memory", (q, k, v, heads))


def attend_with_memory_backward(dout, cache):
    kind, inner = cache
    if kind == "plain":
        return causal_attention_backward(dout, inner)
    q, k, v, heads = inner
    scale = _scale(q)
    dq, dk, dv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
    for h, (pw, pm, k_sel, v_sel, _) in enumerate(heads):
        dpw = dout[h] @ v[h].T
        dpm = np.einsum("td,tkd->tk", dout[h], v_sel)
        dot = (pw * dpw).sum(axis=1, keepdims=True) + (pm * dpm).sum(axis=1, keepdims=True)
        dsw = pw * (dpw - dot)
        dsm = pm * (dpm - dot)
        dv[h] = pw.T @ dout[h]
        dq[h] = (dsw @ k[h] + np.einsum("tk,tkd->td", dsm, k_sel)) * scale
        dk[h] = (dsw.T @ q[h]) * scale
    return dq, dk, dv


def store_window(pool: MemoryPool, layer: int, k, v, start: int = 0) -> None:
    """Append a window's per-head keys/values (positions ``start:``) to the pool."""
    for h in range(k.shape[0]):
        pool.append(layer, h, k[h, start:], v[h, start:])


def attention_probs(cache):
    """Per head ``(window_probs, memory_probs, memory_indices)``, for inspection."""
    kind, inner = cache
    if kind == "plain":
        p = inner[3]
        t = p.shape[1]
        return [(p[h], np.empty((t, 0), dtype=p.dtype), np.empty((t, 0), dtype=np.int64))
                for h in range(p.shape[0])]
    return [(pw, pm, idx) for pw, pm, _, _, idx in inner[3]]
