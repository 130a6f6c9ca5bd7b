"""Small pre-LayerNorm decoder-only transformer in numpy with manual backprop.

Parameters live in a plain ``dict[str, np.ndarray]`` whose key order is
the on-disk order (see :func:`param_spec`). Every function is pure with
respect to the parameters; an optional :class:`~skim.memory.MemoryPool`
is read during attention and, unless ``store=False``, extended with the
window's keys and values afterwards.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from skim import kernels
from skim.corpus import VOCAB_SIZE
from skim.memory import (
    MemoryPool,
    attend_with_memory,
    attend_with_memory_backward,
    attention_probs,
    store_window,
)

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    vocab_size: int = VOCAB_SIZE
    max_window: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_window < 2:
            raise ValueError("max_window must be >= 2")
        if min(self.n_layers, self.d_model, self.n_heads, self.d_ff, self.vocab_size) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def param_spec(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in canonical (serialization) order."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    spec = [("tok_emb", (v, d)), ("pos_emb", (cfg.max_window, d))]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        spec += [
            (p + "ln1.g", (d,)), (p + "ln1.b", (d,)),
            (p + "attn.wqkv", (d, 3 * d)), (p + "attn.bqkv", (3 * d,)),
            (p + "attn.wo", (d, d)), (p + "attn.bo", (d,)),
            (p + "ln2.g", (d,)), (p + "ln2.b", (d,)),
            (p + "mlp.w1", (d, f)), (p + "mlp.b1", (f,)),
            (p + "mlp.w2", (f, d)), (p + "mlp.b2", (d,)),
        ]
    spec += [("lnf.g", (d,)), ("lnf.b", (d,)), ("head.w", (d, v))]
    return spec


def n_params(cfg: ModelConfig) -> int:
    return sum(math.prod(shape) for _, shape in param_spec(cfg))


def init_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    resid_std = 0.02 / math.sqrt(2 * cfg.n_layers)
    params = {}
    for name, shape in param_spec(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif leaf.startswith("b"):
            arr = np.zeros(shape)
        elif leaf in ("wo", "w2"):
            arr = rng.normal(0.0, resid_std, shape)
        else:
            arr = rng.normal(0.0, 0.02, shape)
        params[name] = arr.astype(dtype)
    return params


def cast_params(params, dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


def new_memory(cfg: ModelConfig, capacity: int = 256, k_retrieve: int = 32, dtype=np.float32) -> MemoryPool:
    return MemoryPool(cfg.n_layers, cfg.n_heads, cfg.d_head, capacity, k_retrieve, dtype)


@dataclass
class ForwardOutput:
    logits: np.ndarray
    token_losses: np.ndarray
    mean_loss: float
    attention: list | None = field(default=None, repr=False)


# -- primitives ---------------------------------------------------------------

def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(LN_EPS))
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_backward(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _gelu(x):
    c = x.dtype.type(_GELU_C)
    a = x.dtype.type(0.044715)
    t = np.tanh(c * (x + a * x * x * x))
    return x.dtype.type(0.5) * x * (1 + t), t


def _gelu_backward(dy, x, t):
    c = x.dtype.type(_GELU_C)
    a = x.dtype.type(0.044715)
    half = x.dtype.type(0.5)
    dt = (1 - t * t) * c * (1 + 3 * a * x * x)
    return dy * (half * (1 + t) + half * x * dt)


def _check_tokens(cfg: ModelConfig, tokens, min_len: int = 2) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise ValueError("tokens must be a 1-D sequence")
    if not min_len <= len(tokens) <= cfg.max_window:
        raise ValueError(f"window length {len(tokens)} outside [{min_len}, {cfg.max_window}]")
    if len(tokens) and (tokens.max() >= cfg.vocab_size or tokens.min() < 0):
        raise ValueError(f"token id outside vocabulary of size {cfg.vocab_size}")
    return tokens


# -- forward / backward ---------------------------------------------------------

def _run(params, cfg, tokens, memory, store, store_from, loss_start, want_grad, grad_scale,
         keep_attention=False):
    t = len(tokens)
    d, nh, dh = cfg.d_model, cfg.n_heads, cfg.d_head
    x = params["tok_emb"][tokens] + params["pos_emb"][:t]
    layer_caches = []
    attn_probs = [] if keep_attention else None
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        a_in, ln1 = _layernorm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        qkv = a_in @ params[p + "attn.wqkv"] + params[p + "attn.bqkv"]
        q, k, v = (qkv[:, j * d:(j + 1) * d].reshape(t, nh, dh).transpose(1, 0, 2) for j in range(3))
        att, acache = attend_with_memory(q, k, v, memory, i)
        if keep_attention:
            attn_probs.append(attention_probs(acache))
        if memory is not None and store:
            store_window(memory, i, k, v, start=store_from)
        merged = att.transpose(1, 0, 2).reshape(t, d)
        x = x + merged @ params[p + "attn.wo"] + params[p + "attn.bo"]
        m_in, ln2 = _layernorm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        h1 = m_in @ params[p + "mlp.w1"] + params[p + "mlp.b1"]
        g, tanh_u = _gelu(h1)
        x = x + g @ params[p + "mlp.w2"] + params[p + "mlp.b2"]
        if want_grad:
            layer_caches.append((a_in, ln1, acache, merged, m_in, ln2, h1, g, tanh_u))
    xf, lnf = _layernorm(x, params["lnf.g"], params["lnf.b"])
    logits = xf @ params["head.w"]

    if t >= 2:
        nll, probs = kernels.log_softmax_nll(logits[:-1], tokens[1:])
        counted = nll[loss_start - 1:]
        mean_loss = float(np.mean(counted, dtype=np.float64)) if len(counted) else float("nan")
    else:
        nll, probs, mean_loss = np.empty(0, dtype=logits.dtype), None, float("nan")
    out = ForwardOutput(logits, nll, mean_loss, attn_probs)
    if not want_grad:
        return out, None

    # backward
    dt = logits.dtype.type
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    dlogits = np.zeros_like(logits)
    rows = np.arange(loss_start - 1, t - 1)
    dlogits[rows] = probs[rows]
    dlogits[rows, tokens[rows + 1]] -= 1
    dlogits *= dt(grad_scale)

    grads["head.w"] = xf.T @ dlogits
    dx, grads["lnf.g"], grads["lnf.b"] = _layernorm_backward(dlogits @ params["head.w"].T, params["lnf.g"], lnf)
    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        a_in, ln1, acache, merged, m_in, ln2, h1, g, tanh_u = layer_caches[i]
        # mlp branch
        grads[p + "mlp.w2"] = g.T @ dx
        grads[p + "mlp.b2"] = dx.sum(axis=0)
        dh1 = _gelu_backward(dx @ params[p + "mlp.w2"].T, h1, tanh_u)
        grads[p + "mlp.w1"] = m_in.T @ dh1
        grads[p + "mlp.b1"] = dh1.sum(axis=0)
        dm, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layernorm_backward(dh1 @ params[p + "mlp.w1"].T,
                                                                         params[p + "ln2.g"], ln2)
        dx = dx + dm
        # attention branch
        grads[p + "attn.wo"] = merged.T @ dx
        grads[p + "attn.bo"] = dx.sum(axis=0)
        datt = (dx @ params[p + "attn.wo"].T).reshape(t, nh, dh).transpose(1, 0, 2)
        dq, dk, dv = attend_with_memory_backward(datt, acache)
        dqkv = np.concatenate([a.transpose(1, 0, 2).reshape(t, d) for a in (dq, dk, dv)], axis=1)
        grads[p + "attn.wqkv"] = a_in.T @ dqkv
        grads[p + "attn.bqkv"] = dqkv.sum(axis=0)
        da, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layernorm_backward(dqkv @ params[p + "attn.wqkv"].T,
                                                                         params[p + "ln1.g"], ln1)
        dx = dx + da
    np.add.at(grads["tok_emb"], tokens, dx)
    grads["pos_emb"][:t] = dx
    return out, grads


def forward(params, cfg: ModelConfig, tokens, memory: MemoryPool | None = None, *,
            store: bool = True, store_from: int = 0, loss_start: int = 1,
            keep_attention: bool = False) -> ForwardOutput:
    """Logits and next-token losses for one window.

    ``token_losses[i - 1]`` is the NLL of ``tokens[i]``; ``mean_loss``
    averages positions ``i >= loss_start``.
    """
    tokens = _check_tokens(cfg, tokens)
    out, _ = _run(params, cfg, tokens, memory, store, store_from, loss_start, False, 1.0, keep_attention)
    return out


def value_and_grad(params, cfg: ModelConfig, tokens, memory: MemoryPool | None = None, *,
                   store: bool = True, store_from: int = 0, loss_start: int = 1,
                   grad_scale: float | None = None):
    """Forward pass plus gradients of the masked loss.

    By default gradients are of ``mean_loss``; pass ``grad_scale`` to get
    ``grad_scale * sum`` of the counted losses instead (used for batching).
    """
    tokens = _check_tokens(cfg, tokens)
    if not 1 <= loss_start < len(tokens):
        raise ValueError(f"loss_start {loss_start} leaves no predicted positions")
    scale = 1.0 / (len(tokens) - loss_start) if grad_scale is None else grad_scale
    return _run(params, cfg, tokens, memory, store, store_from, loss_start, True, scale)


def backward(params, cfg: ModelConfig, tokens, memory: MemoryPool | None = None, **kwargs):
    """Gradients of ``mean_loss`` with the same names and shapes as ``params``."""
    return value_and_grad(params, cfg, tokens, memory, **kwargs)[1]


def generate(params, cfg: ModelConfig, prefix, n: int, memory: MemoryPool | None = None,
             stop_token: int | None = None) -> list[int]:
    """Greedy decoding; ties go to the lowest token id.

    The memory pool is read but never written. Context beyond
    ``max_window`` tokens is truncated from the left.
    """
    seq = [int(x) for x in prefix]
    if not seq:
        raise ValueError("generate needs a non-empty prefix")
    if len(seq) > cfg.max_window:
        raise ValueError(f"prefix of {len(seq)} tokens exceeds max_window={cfg.max_window}")
    _check_tokens(cfg, seq, min_len=1)
    produced: list[int] = []
    for _ in range(n):
        window = np.asarray(seq[-cfg.max_window:], dtype=np.int64)
        out, _ = _run(params, cfg, window, memory, False, 0, 1, False, 1.0)
        nxt = int(np.argmax(out.logits[-1]))
        produced.append(nxt)
        seq.append(nxt)
        if stop_token is not None and nxt == stop_token:
            break
    return produced


def train_step(params, cfg: ModelConfig, opt, batch, memories=None, *, loss_starts=None,
               store_froms=None, doc_ids=None):
    """One optimizer update over a batch of windows.

    The loss is averaged over every predicted position in the batch. Params
    and optimizer state are updated in place; returns ``(mean_loss, outputs)``
    where ``outputs`` holds one :class:`ForwardOutput` per window.
    """
    n = len(batch)
    memories = memories or [None] * n
    loss_starts = loss_starts or [1] * n
    store_froms = store_froms or [0] * n
    windows = [_check_tokens(cfg, getattr(w, "tokens", w)) for w in batch]
    counts = [len(w) - s for w, s in zip(windows, loss_starts)]
    total = sum(counts)
    if total <= 0:
        raise ValueError("batch has no predicted positions")
    grads = None
    outputs = []
    loss_sum = 0.0
    for w, mem, ls, sf in zip(windows, memories, loss_starts, store_froms):
        out, g = _run(params, cfg, w, mem, True, sf, ls, True, 1.0 / total)
        outputs.append(out)
        loss_sum += float(np.sum(out.token_losses[ls - 1:], dtype=np.float64))
        if grads is None:
            grads = g
        else:
            for name in grads:
                grads[name] += g[name]
    mean_loss = loss_sum / total
    if not math.isfinite(mean_loss):
        ids = doc_ids if doc_ids is not None else [getattr(w, "doc_id", None) for w in batch]
        raise NonFiniteLoss(f"non-finite loss {mean_loss} at step {opt.step + 1}, documents {ids}")
    opt.update(params, grads)
    return mean_loss, outputs
