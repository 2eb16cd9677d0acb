"""The seven adversarial training objectives as pure scalar functions.

Naming: the generator fools the discriminator (gen_cls) while steering
the span predictor toward the fake moment (gen_loc); the discriminator
learns to flag injected samples (disc_cls), keeps localizing the real
moment on both branches (disc_loc), and pins the bias-conflict span
distributions near the real-branch ones with a KL regularizer whose
reference side is treated as constant (kl_regularizer).

All cross-entropies are -log p[target] with probabilities clamped at
EPS=1e-12 before the log, averaged over the batch.  Domain label 0 means
real/unbiased, 1 means bias-injected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

EPS = 1e-12
REAL, FAKE = 0, 1


@dataclass(frozen=True)
class LossWeights:
    """lambda_1 scales gen_cls; lambda_2/lambda_3 scale disc_cls/KL."""
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    g_cls: float
    g_loc: float
    g_total: float
    d_cls: float
    d_loc: float
    d_kl: float
    d_total: float

    TERMS = ("g_cls", "g_loc", "g_total", "d_cls", "d_loc", "d_kl", "d_total")

    def items(self):
        return [(name, getattr(self, name)) for name in self.TERMS]

    def check_totals(self, weights, atol=1e-6):
        ok_g = abs(self.g_total
                   - (self.g_loc + weights.lambda1 * self.g_cls)) <= atol
        ok_d = abs(self.d_total - (self.d_loc + weights.lambda2 * self.d_cls
                                   + weights.lambda3 * self.d_kl)) <= atol
        return ok_g and ok_d


def _as_batch(p):
    p = ag.as_tensor(p)
    if p.ndim == 1:
        p = p.reshape((1, -1))
    return p


def cross_entropy(probs, targets):
    """-log probs[i, targets[i]], clamped at EPS, mean over the batch."""
    probs = _as_batch(probs)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    picked = ag.select_index(probs, targets)
    return -ag.log(ag.clamp_min(picked, EPS)).mean()


def kl_divergence(p_ref, p_other):
    """Forward KL(p_ref || p_other), p_ref constant, batch-averaged."""
    p_ref = _as_batch(p_ref).detach()
    p_other = _as_batch(p_other)
    ref = ag.clamp_min(p_ref, EPS)
    oth = ag.clamp_min(p_other, EPS)
    per_sample = (ref * (ag.log(ref) - ag.log(oth))).sum(axis=-1)
    return per_sample.mean()


# -- generator objectives ----------------------------------------------------


def gen_cls_loss(p_domain_fake):
    """Deception term: bias-conflict samples should look real."""
    p = _as_batch(p_domain_fake)
    return cross_entropy(p, np.full(p.shape[0], REAL))


def gen_loc_loss(p_start_fake, p_end_fake, fake_starts, fake_ends):
    """Steer the span predictor toward the fake moment endpoints."""
    return 0.5 * (cross_entropy(p_start_fake, fake_starts)
                  + cross_entropy(p_end_fake, fake_ends))


def gen_total(loc, cls, weights=LossWeights()):
    return loc + weights.lambda1 * cls


# -- discriminator objectives ------------------------------------------------


def disc_cls_loss(p_domain_real, p_domain_fake):
    """Judge real as real and injected as injected."""
    p_r = _as_batch(p_domain_real)
    p_f = _as_batch(p_domain_fake)
    return (cross_entropy(p_r, np.full(p_r.shape[0], REAL))
            + cross_entropy(p_f, np.full(p_f.shape[0], FAKE)))


def disc_loc_loss(p_start_real, p_end_real, p_start_fake, p_end_fake,
                  real_starts, real_ends):
    """Both branches supervised by the REAL moment endpoints."""
    real_half = 0.5 * (cross_entropy(p_start_real, real_starts)
                       + cross_entropy(p_end_real, real_ends))
    fake_half = 0.5 * (cross_entropy(p_start_fake, real_starts)
                       + cross_entropy(p_end_fake, real_ends))
    return real_half + fake_half


def kl_regularizer(p_start_real, p_end_real, p_start_fake, p_end_fake):
    """Keep bias-conflict span distributions near the real-branch ones.

    The real-branch distributions are references: no gradient flows into
    them (the regularizer constrains the fake branch only).
    """
    return (kl_divergence(p_start_real, p_start_fake)
            + kl_divergence(p_end_real, p_end_fake))


def disc_total(loc, cls, kl, weights=LossWeights()):
    return loc + weights.lambda2 * cls + weights.lambda3 * kl


# -- step-level assembly -----------------------------------------------------


def _val(x):
    return float(x.item()) if isinstance(x, Tensor) else float(x)


def breakdown(g_loc, g_cls, d_loc, d_cls, d_kl, weights=LossWeights()):
    """Scalar LossBreakdown from term tensors, totals recomputed."""
    g_loc_v, g_cls_v = _val(g_loc), _val(g_cls)
    d_loc_v, d_cls_v, d_kl_v = _val(d_loc), _val(d_cls), _val(d_kl)
    return LossBreakdown(
        g_cls=g_cls_v, g_loc=g_loc_v,
        g_total=g_loc_v + weights.lambda1 * g_cls_v,
        d_cls=d_cls_v, d_loc=d_loc_v, d_kl=d_kl_v,
        d_total=d_loc_v + weights.lambda2 * d_cls_v
        + weights.lambda3 * d_kl_v)
