"""Adam with linear warmup and global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


@dataclass
class Adam:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup: int = 100
    clip: float = 1.0
    step: int = 0
    m: dict = field(default_factory=dict, repr=False)
    v: dict = field(default_factory=dict, repr=False)

    def lr_at(self, step: int) -> float:
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, step / self.warmup)

    def update(self, params, grads) -> float:
        """Apply one update in place. Returns the pre-clip gradient norm."""
        self.step += 1
        norm = global_norm(grads)
        scale = self.clip / norm if self.clip > 0 and norm > self.clip else 1.0
        lr = self.lr_at(self.step)
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step
        bc2 = 1.0 - b2 ** self.step
        for name, p in params.items():
            g = grads[name] * p.dtype.type(scale)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= p.dtype.type(b1)
            m += p.dtype.type(1 - b1) * g
            v *= p.dtype.type(b2)
            v += p.dtype.type(1 - b2) * g * g
            if lr == 0.0:
                continue
            denom = np.sqrt(v / p.dtype.type(bc2)) + p.dtype.type(self.eps)
            p -= p.dtype.type(lr / bc1) * m / denom
        return norm

    def state_dict(self) -> dict:
        return {"step": self.step, "m": {k: a.copy() for k, a in self.m.items()},
                "v": {k: a.copy() for k, a in self.v.items()}}
