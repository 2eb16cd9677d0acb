"""Shared vocabulary for moments, labels, noise, and IoU.

A moment is an inclusive frame pair (start, end) on a clip whose true
length n_true may be shorter than the padded length n.  All probability
vectors and label masks in the package live on the padded grid; the
three-channel PositionLabel marks each frame background / foreground /
ignored-padding so losses and generators agree on what is real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BG, FG, IGNORED = 0, 1, 2


@dataclass(frozen=True)
class Moment:
    """Inclusive frame span: covers frames start..end."""
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"invalid moment ({self.start}, {self.end})")

    @property
    def length(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class NoiseVector:
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("noise vector contains non-finite values")


NOISE_KINDS = ("appearance", "motion", "query")


def encode_moment(moment, n_true, n):
    """One-hot position labels, shape [3, n] (channels BG/FG/IGNORED).

    Frames inside [start, end] are foreground, other real frames are
    background, frames at or beyond n_true are ignored padding.
    """
    if n_true > n:
        raise ValueError(f"n_true={n_true} exceeds padded length n={n}")
    if moment.end >= n_true:
        raise ValueError(f"moment {moment} does not fit n_true={n_true}")
    label = np.zeros((3, n), dtype=np.float32)
    idx = np.arange(n)
    fg = (idx >= moment.start) & (idx <= moment.end)
    ign = idx >= n_true
    label[FG, fg] = 1.0
    label[IGNORED, ign] = 1.0
    label[BG, ~(fg | ign)] = 1.0
    return label


def foreground_indicator(moment, n_true, n):
    """Float [n] vector: 1 on the moment, 0 elsewhere (padding included)."""
    return encode_moment(moment, n_true, n)[FG]


def _pair_offsets(n_true):
    # ordered spans (s, e), s <= e, enumerated s-major; offsets[s] is the
    # rank of (s, s)
    s = np.arange(n_true + 1, dtype=np.int64)
    return s * n_true - (s * (s - 1)) // 2


def sample_fake_moment(n_true, rng):
    """Uniform draw over all n_true*(n_true+1)/2 ordered spans."""
    return sample_fake_moments(np.asarray([n_true]), rng)[0]


def sample_fake_moments(n_trues, rng):
    """Vectorized uniform span draws; one Moment per entry of n_trues."""
    n_trues = np.asarray(n_trues, dtype=np.int64)
    if np.any(n_trues < 1):
        raise ValueError("n_true must be at least 1")
    totals = n_trues * (n_trues + 1) // 2
    ranks = rng.integers(0, totals)
    out = [None] * len(n_trues)
    for n_true in np.unique(n_trues):
        offs = _pair_offsets(int(n_true))
        sel = np.nonzero(n_trues == n_true)[0]
        starts = np.searchsorted(offs, ranks[sel], side="right") - 1
        ends = starts + (ranks[sel] - offs[starts])
        for i, s, e in zip(sel, starts, ends):
            out[i] = Moment(int(s), int(e))
    return out


def sample_noise(kind, dim, rng):
    """Standard-normal latent draw tagged with its stream."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; one of {NOISE_KINDS}")
    return NoiseVector(kind, rng.standard_normal(dim))


def temporal_iou(a, b):
    """IoU of two inclusive frame spans (frame i covers [i, i+1))."""
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union
