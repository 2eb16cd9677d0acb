"""Span-based grounding model with bias injection seams.

Video features and query tokens are projected into a shared width, tagged
with sinusoidal positions, encoded by per-modality self-attention, and
fused by cross-attention (video attends to the query).  Two position-wise
heads emit start/end distributions over frames (the span predictor); a
masked mean-pool feeds a two-way head that classifies the input as real
or bias-injected (the bias discriminator).

Bias vectors enter at one of two seams per modality: "before" adds them
to the projected features ahead of the encoder, "after" adds them to the
encoder output.  A zero bias at either seam is exactly a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .core import Moment

BEFORE_ENCODER = "before"
AFTER_ENCODER = "after"


@dataclass(frozen=True)
class Injection:
    """Where generated bias enters each modality (defaults per ablation)."""
    visual: str = BEFORE_ENCODER
    query: str = AFTER_ENCODER

    def __post_init__(self):
        for seam in (self.visual, self.query):
            if seam not in (BEFORE_ENCODER, AFTER_ENCODER):
                raise ValueError(f"unknown injection seam {seam!r}")


@dataclass(frozen=True)
class BackboneConfig:
    n: int
    m: int
    d_v: int
    vocab: int
    d: int = 64
    heads: int = 4
    d_ff: int = 128
    encoder_blocks: int = 1


@dataclass
class SpanPrediction:
    """Per-frame span distributions and the real/fake domain posterior."""
    p_start: Tensor  # [B, n], simplex over frames, ~0 on padding
    p_end: Tensor    # [B, n]
    p_domain: Tensor  # [B, 2], index 0 = real, 1 = bias-injected


class GroundingModel(nn.Module):
    def __init__(self, config, rng, dtype=np.float32):
        c = config
        self.config = c
        self.dtype = dtype
        self.video_proj = nn.Linear(c.d_v, c.d, rng, dtype)
        self.tok_embed = nn.Embedding(c.vocab, c.d, rng, dtype)
        self.pe_video = Tensor(nn.sinusoidal_positions(c.n, c.d, dtype))
        self.pe_query = Tensor(nn.sinusoidal_positions(c.m, c.d, dtype))
        self.video_blocks = [nn.SelfAttentionBlock(c.d, c.heads, c.d_ff,
                                                   rng, dtype)
                             for _ in range(c.encoder_blocks)]
        self.query_blocks = [nn.SelfAttentionBlock(c.d, c.heads, c.d_ff,
                                                   rng, dtype)
                             for _ in range(c.encoder_blocks)]
        self.interactor = nn.CrossAttentionBlock(c.d, c.heads, c.d_ff,
                                                 rng, dtype)
        self.start_head = nn.Linear(c.d, 1, rng, dtype)
        self.end_head = nn.Linear(c.d, 1, rng, dtype)
        self.domain_head = nn.Linear(c.d, 2, rng, dtype, gain=0.1)

    # -- helpers -------------------------------------------------------------

    def frame_mask(self, n_true):
        return np.arange(self.config.n)[None, :] < np.asarray(n_true)[:, None]

    def _check_bias(self, bias, length, what):
        expected = (length, self.config.d)
        if bias.shape[1:] != expected or bias.ndim != 3:
            raise ValueError(
                f"{what} bias shape {tuple(bias.shape)} does not match "
                f"injection point [B, {length}, {self.config.d}]")

    # -- forward -------------------------------------------------------------

    def forward(self, video, query, n_true, visual_bias=None,
                query_bias=None, injection=Injection()):
        """Run the span predictor and bias discriminator.

        video: [B, n, d_v] array, query: [B, m] int array, n_true: [B].
        At most one of visual_bias / query_bias ([B, len, d] Tensor or
        array) may be supplied; it enters at the seam named by injection.
        """
        c = self.config
        video = np.asarray(video, dtype=self.dtype)
        query = np.asarray(query)
        if video.ndim != 3 or video.shape[1:] != (c.n, c.d_v):
            raise ValueError(f"video shape {video.shape} does not match "
                             f"[B, {c.n}, {c.d_v}]")
        if query.ndim != 2 or query.shape[1] != c.m:
            raise ValueError(f"query shape {query.shape} does not match "
                             f"[B, {c.m}]")
        if visual_bias is not None and query_bias is not None:
            raise ValueError("at most one bias source per forward pass")
        if visual_bias is not None:
            visual_bias = ag.as_tensor(visual_bias)
            self._check_bias(visual_bias, c.n, "visual")
        if query_bias is not None:
            query_bias = ag.as_tensor(query_bias)
            self._check_bias(query_bias, c.m, "query")

        mask = self.frame_mask(n_true)

        v = self.video_proj(Tensor(video)) + self.pe_video
        if visual_bias is not None and injection.visual == BEFORE_ENCODER:
            v = v + visual_bias
        for block in self.video_blocks:
            v = block(v, key_mask=mask)
        if visual_bias is not None and injection.visual == AFTER_ENCODER:
            v = v + visual_bias

        q = self.tok_embed(query) + self.pe_query
        if query_bias is not None and injection.query == BEFORE_ENCODER:
            q = q + query_bias
        for block in self.query_blocks:
            q = block(q)
        if query_bias is not None and injection.query == AFTER_ENCODER:
            q = q + query_bias

        fused = self.interactor(v, q)

        neg = Tensor(np.where(mask, 0.0, -1e9).astype(self.dtype))
        start_logits = self.start_head(fused).reshape((-1, c.n)) + neg
        end_logits = self.end_head(fused).reshape((-1, c.n)) + neg
        p_start = ag.softmax(start_logits, axis=-1)
        p_end = ag.softmax(end_logits, axis=-1)

        weights = Tensor((mask / mask.sum(axis=1, keepdims=True))
                         .astype(self.dtype))
        pooled = (fused * weights.reshape((-1, c.n, 1))).sum(axis=1)
        p_domain = ag.softmax(self.domain_head(pooled), axis=-1)
        return SpanPrediction(p_start, p_end, p_domain)

    def predict(self, video, query, n_true, batch_size=64):
        """Numpy-only inference path used by evaluation."""
        outs = []
        with ag.no_grad():
            for lo in range(0, len(video), batch_size):
                hi = lo + batch_size
                pred = self.forward(video[lo:hi], query[lo:hi], n_true[lo:hi])
                outs.append((pred.p_start.data, pred.p_end.data,
                             pred.p_domain.data))
        return (np.concatenate([o[0] for o in outs]),
                np.concatenate([o[1] for o in outs]),
                np.concatenate([o[2] for o in outs]))


# -- span decoding -----------------------------------------------------------


def decode_span(p_start, p_end):
    """Highest-product span with start <= end.

    Ties resolve to the smallest start, then the smallest end, matching an
    exhaustive scan in (start, end) lexicographic order with strict
    improvement.  One pass: track the first prefix argmax of p_start.
    """
    p_start = np.asarray(p_start)
    p_end = np.asarray(p_end)
    if p_start.shape != p_end.shape or p_start.ndim != 1:
        raise ValueError("p_start and p_end must be equal-length vectors")
    run_s = 0
    best = (0, 0)
    best_p = p_start[0] * p_end[0]
    for e in range(1, len(p_start)):
        if p_start[e] > p_start[run_s]:
            run_s = e
        p = p_start[run_s] * p_end[e]
        if p > best_p:
            best = (run_s, e)
            best_p = p
    return Moment(*best)


def decode_spans(p_start, p_end):
    """Batched decode: [B, n] arrays -> list of Moments."""
    return [decode_span(s, e) for s, e in zip(np.asarray(p_start),
                                              np.asarray(p_end))]
