"""AdamW with decoupled weight decay.

State (first/second moments plus the shared step counter) is exposed as
named float32 arrays so checkpoints can capture it and a resumed run
replays the original bit for bit.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - self.lr * (update + self.weight_decay * p.data)

    # -- checkpoint support --------------------------------------------------

    def state_arrays(self, prefix):
        out = {}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k].copy()
            out[f"{prefix}.v.{k}"] = self.v[k].copy()
        return out

    def load_state_arrays(self, prefix, arrays, t):
        for k, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                arr = np.asarray(arrays[f"{prefix}.{slot}.{k}"],
                                 dtype=p.data.dtype)
                if arr.shape != p.data.shape:
                    raise ValueError(f"optimizer state shape mismatch at {k}")
                store[k] = arr.copy()
        self.t = int(t)
