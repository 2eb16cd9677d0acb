"""Layers and parameter bookkeeping on top of the autograd core.

Modules hold named parameter Tensors.  named_params() walks attributes
recursively (sub-modules, lists of sub-modules) and produces a flat
"a.b.weight" -> Tensor mapping; that mapping is the single source of truth
for optimizers, checkpoints, and the freeze audits in the trainer.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    def named_params(self):
        out = {}
        for attr, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[attr] = value
            elif isinstance(value, Module):
                for k, v in value.named_params().items():
                    out[f"{attr}.{k}"] = v
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for k, v in item.named_params().items():
                            out[f"{attr}.{i}.{k}"] = v
        return out

    def zero_grad(self):
        for p in self.named_params().values():
            p.grad = None

    def state(self):
        """Copy of every parameter array, keyed by name."""
        return {k: p.data.copy() for k, p in self.named_params().items()}

    def load_state(self, arrays):
        params = self.named_params()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise KeyError(f"missing parameters in state: {missing}")
        for k, p in params.items():
            arr = np.asarray(arrays[k], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {k}: checkpoint {arr.shape} "
                    f"vs model {p.data.shape}")
            p.data = arr.copy()


def _param(rng, shape, scale, dtype):
    return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype),
                  requires_grad=True)


class Linear(Module):
    """y = x @ W + b with Glorot-uniform init (optionally rescaled)."""

    def __init__(self, d_in, d_out, rng, dtype=np.float32, gain=1.0):
        scale = gain * np.sqrt(6.0 / (d_in + d_out))
        self.weight = _param(rng, (d_in, d_out), scale, dtype)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ag.matmul(x, self.weight) + self.bias


class Embedding(Module):
    def __init__(self, vocab, d, rng, dtype=np.float32, std=0.5):
        self.weight = Tensor(
            (rng.standard_normal((vocab, d)) * std).astype(dtype),
            requires_grad=True)

    def __call__(self, ids):
        return ag.embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, d, dtype=np.float32, eps=1e-5):
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = (var + self.eps) ** -0.5
        return xc * inv * self.gamma + self.beta


class Conv1d(Module):
    """Same-padded stride-1 conv over [B, L, C_in] -> [B, L, C_out].

    Implemented as a sum of shifted position-wise matmuls, so the whole op
    is differentiable through the existing primitives.
    """

    def __init__(self, kernel, c_in, c_out, rng, dtype=np.float32, gain=1.0):
        if kernel % 2 != 1:
            raise ValueError("Conv1d kernel must be odd for same padding")
        scale = gain * np.sqrt(6.0 / (kernel * c_in + c_out))
        self.weight = _param(rng, (kernel, c_in, c_out), scale, dtype)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.kernel = kernel

    def __call__(self, x):
        b, length, c_in = x.shape
        half = self.kernel // 2
        pad = Tensor(np.zeros((b, half, c_in), dtype=x.dtype))
        xp = ag.concat([pad, x, pad], axis=1)
        out = None
        for k in range(self.kernel):
            term = ag.matmul(xp[:, k:k + length, :], self.weight[k])
            out = term if out is None else out + term
        return out + self.bias


class TransposedConv1d(Module):
    """Stride-2 kernel-2 transposed conv: [B, L, C_in] -> [B, 2L, C_out].

    With stride 2 and kernel 2 every output position receives exactly one
    kernel tap, so the op is two position-wise matmuls interleaved.
    """

    def __init__(self, c_in, c_out, rng, dtype=np.float32, gain=1.0):
        scale = gain * np.sqrt(6.0 / (2 * c_in + c_out))
        self.weight = _param(rng, (2, c_in, c_out), scale, dtype)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        b, length, _ = x.shape
        y0 = ag.matmul(x, self.weight[0])
        y1 = ag.matmul(x, self.weight[1])
        c_out = y0.shape[-1]
        pair = ag.concat([y0.reshape((b, length, 1, c_out)),
                          y1.reshape((b, length, 1, c_out))], axis=2)
        return pair.reshape((b, 2 * length, c_out)) + self.bias


# -- attention ---------------------------------------------------------------


def sinusoidal_positions(length, d, dtype=np.float32):
    """Fixed transformer position table [length, d]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((length, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d - d // 2])
    return table.astype(dtype)


def split_heads(x, heads):
    b, length, d = x.shape
    return x.reshape((b, length, heads, d // heads)).swapaxes(1, 2)


def merge_heads(x):
    b, heads, length, dh = x.shape
    return x.swapaxes(1, 2).reshape((b, length, heads * dh))


def attention(q, k, v, key_mask=None):
    """Scaled dot-product attention on [B, H, L, dh] tensors.

    key_mask: bool ndarray [B, L_k]; False positions get a -1e9 logit bias
    and end up with exactly zero weight after the shifted softmax.
    """
    dh = q.shape[-1]
    logits = ag.matmul(q, k.swapaxes(-1, -2)) * float(1.0 / np.sqrt(dh))
    if key_mask is not None:
        bias = np.where(key_mask[:, None, None, :], 0.0, -1e9)
        logits = logits + Tensor(bias.astype(np.float64 if
                                 q.dtype == np.float64 else np.float32))
    weights = ag.softmax(logits, axis=-1)
    return ag.matmul(weights, v)


class SelfAttentionBlock(Module):
    """Pre-norm transformer block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, d, heads, d_ff, rng, dtype=np.float32):
        if d % heads != 0:
            raise ValueError("model dim must be divisible by head count")
        self.heads = heads
        self.ln1 = LayerNorm(d, dtype)
        self.qkv = Linear(d, 3 * d, rng, dtype)
        self.out = Linear(d, d, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.ff1 = Linear(d, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d, rng, dtype)

    def __call__(self, x, key_mask=None):
        d = x.shape[-1]
        h = self.ln1(x)
        qkv = self.qkv(h)
        q = split_heads(qkv[:, :, :d], self.heads)
        k = split_heads(qkv[:, :, d:2 * d], self.heads)
        v = split_heads(qkv[:, :, 2 * d:], self.heads)
        x = x + self.out(merge_heads(attention(q, k, v, key_mask)))
        h = self.ln2(x)
        return x + self.ff2(ag.gelu(self.ff1(h)))


class CrossAttentionBlock(Module):
    """Queries attend to a context sequence, then a feed-forward refit."""

    def __init__(self, d, heads, d_ff, rng, dtype=np.float32):
        if d % heads != 0:
            raise ValueError("model dim must be divisible by head count")
        self.heads = heads
        self.ln_q = LayerNorm(d, dtype)
        self.ln_c = LayerNorm(d, dtype)
        self.wq = Linear(d, d, rng, dtype)
        self.wk = Linear(d, d, rng, dtype)
        self.wv = Linear(d, d, rng, dtype)
        self.out = Linear(d, d, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.ff1 = Linear(d, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d, rng, dtype)

    def __call__(self, x, context, context_mask=None):
        q = split_heads(self.wq(self.ln_q(x)), self.heads)
        ctx = self.ln_c(context)
        k = split_heads(self.wk(ctx), self.heads)
        v = split_heads(self.wv(ctx), self.heads)
        x = x + self.out(merge_heads(attention(q, k, v, context_mask)))
        return x + self.ff2(ag.gelu(self.ff1(self.ln2(x))))
