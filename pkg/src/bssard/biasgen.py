"""Conditional generators that synthesize bias features from noise.

The visual generator runs three parallel streams: a temporal stream
seeded from motion noise plus sinusoidal positions, a static appearance
stream, and a joint stream that fuses the other two at every block.
After n1 fusion blocks the three-channel position label of the fake
moment is concatenated onto the temporal and joint streams (the static
stream never sees positions), and m1 more blocks mix it in; a final
projection emits a [n, d] bias ready to add to video features.

The query generator embeds a noisy foreground-indicator of the fake
moment with a fully connected layer, concatenates query noise, applies
n2 linear layers, and upsamples a length-1 sequence to the m query slots
with m2 transposed-convolution stages (stride 2 while doubling toward m,
stride 1 afterwards).

Both start near zero (small output gain) so early training injects mild
perturbations rather than noise storms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .core import encode_moment, foreground_indicator


@dataclass(frozen=True)
class GeneratorConfig:
    n: int            # padded clip length (visual bias length)
    m: int            # query length (query bias length)
    d: int            # backbone width both biases must match
    hidden: int = 32
    z_appearance: int = 16
    z_motion: int = 16
    z_query: int = 16
    n1: int = 4       # visual fusion blocks before the position concat
    m1: int = 2       # visual fusion blocks after it
    n2: int = 2       # query linear layers
    m2: int = 4       # query upsampling stages
    pos_noise_std: float = 0.1
    output_scale: float = 1.0    # bias amplitude bound (tanh output)

    def validate(self):
        if min(self.n, self.m, self.d, self.hidden) < 1:
            raise ValueError("generator dims must be positive")
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")
        if self.n1 < 0 or self.m1 < 1 or self.n2 < 1 or self.m2 < 1:
            raise ValueError("need n1 >= 0, m1 >= 1, n2 >= 1, m2 >= 1")
        doublings = int(np.log2(self.m)) if self.m > 0 else -1
        if 2 ** doublings != self.m:
            raise ValueError(f"query length m={self.m} must be a power "
                             "of two for transposed-conv upsampling")
        if doublings > self.m2:
            raise ValueError(f"m={self.m} needs {doublings} doublings but "
                             f"only m2={self.m2} stages are configured")


class FusionBlock(nn.Module):
    """One step of the three-stream fusion."""

    def __init__(self, c_t, c_s, c_v, c_out, rng, dtype=np.float32):
        self.conv_t = nn.Conv1d(3, c_t, c_out, rng, dtype)
        self.lin_s = nn.Linear(c_s, c_out, rng, dtype)
        self.conv_v = nn.Conv1d(3, c_v, c_out, rng, dtype)

    def __call__(self, f_t, f_s, f_v):
        t = ag.tanh(self.conv_t(f_t))
        s = ag.tanh(self.lin_s(f_s))
        v = ag.tanh(self.conv_v(f_v) + t + s.reshape((-1, 1, s.shape[-1])))
        return t, s, v


class VisualBiasGenerator(nn.Module):
    def __init__(self, config, rng, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        c = config
        self.temporal_init = nn.Linear(c.z_motion, c.hidden, rng, dtype)
        self.static_init = nn.Linear(c.z_appearance, c.hidden, rng, dtype)
        self.pe = Tensor(nn.sinusoidal_positions(c.n, c.hidden, dtype))
        self.pre_blocks = [
            FusionBlock(c.hidden, c.hidden, c.hidden, c.hidden, rng, dtype)
            for _ in range(c.n1)]
        # after the concat the temporal and joint streams carry 3 extra
        # position channels
        self.post_blocks = [
            FusionBlock(c.hidden + 3, c.hidden, c.hidden + 3, c.hidden,
                        rng, dtype)]
        self.post_blocks += [
            FusionBlock(c.hidden, c.hidden, c.hidden, c.hidden, rng, dtype)
            for _ in range(c.m1 - 1)]
        self.out = nn.Linear(c.hidden, c.d, rng, dtype, gain=0.1)

    def __call__(self, z_appearance, z_motion, z_position):
        """z_appearance [B, za], z_motion [B, zm], z_position [B, 3, n]."""
        c = self.config
        z_appearance = ag.as_tensor(np.asarray(z_appearance,
                                               dtype=self.dtype))
        z_motion = ag.as_tensor(np.asarray(z_motion, dtype=self.dtype))
        z_position = np.asarray(z_position, dtype=self.dtype)
        if z_position.shape[1:] != (3, c.n):
            raise ValueError(f"z_position shape {z_position.shape} does "
                             f"not match [B, 3, {c.n}]")
        f_t = ag.tanh(self.temporal_init(z_motion))
        f_t = f_t.reshape((-1, 1, c.hidden)) + self.pe
        f_s = ag.tanh(self.static_init(z_appearance))
        f_v = f_t + f_s.reshape((-1, 1, c.hidden))
        for block in self.pre_blocks:
            f_t, f_s, f_v = block(f_t, f_s, f_v)
        pos = Tensor(np.swapaxes(z_position, 1, 2))
        f_t = ag.concat([f_t, pos], axis=2)
        f_v = ag.concat([f_v, pos], axis=2)
        for block in self.post_blocks:
            f_t, f_s, f_v = block(f_t, f_s, f_v)
        # bounded bias keeps the adversarial game from drowning the signal
        return ag.tanh(self.out(f_v)) * c.output_scale


class QueryBiasGenerator(nn.Module):
    def __init__(self, config, rng, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        c = config
        self.pos_fc = nn.Linear(c.n, c.hidden, rng, dtype)
        dims = [c.hidden + c.z_query] + [c.hidden] * c.n2
        self.fc_layers = [nn.Linear(dims[i], dims[i + 1], rng, dtype)
                          for i in range(c.n2)]
        doublings = int(np.log2(c.m))
        self.up_layers = [nn.TransposedConv1d(c.hidden, c.hidden, rng, dtype)
                          for _ in range(doublings)]
        self.refine_layers = [nn.Conv1d(3, c.hidden, c.hidden, rng, dtype)
                              for _ in range(c.m2 - doublings)]
        self.out = nn.Linear(c.hidden, c.d, rng, dtype, gain=0.1)

    def __call__(self, z_query, z_position):
        """z_query [B, zq], z_position [B, n] noisy foreground indicator."""
        c = self.config
        z_query = ag.as_tensor(np.asarray(z_query, dtype=self.dtype))
        z_position = np.asarray(z_position, dtype=self.dtype)
        if z_position.shape[1:] != (c.n,):
            raise ValueError(f"z_position shape {z_position.shape} does "
                             f"not match [B, {c.n}]")
        x = ag.tanh(self.pos_fc(Tensor(z_position)))
        x = ag.concat([x, z_query], axis=1)
        for layer in self.fc_layers:
            x = ag.tanh(layer(x))
        x = x.reshape((-1, 1, c.hidden))
        for layer in self.up_layers:
            x = ag.tanh(layer(x))
        for layer in self.refine_layers:
            x = ag.tanh(layer(x))
        return ag.tanh(self.out(x)) * c.output_scale


# -- latent draws ------------------------------------------------------------


def visual_position_input(moments, n_trues, n):
    """Stack of [3, n] position labels for the fake moments."""
    return np.stack([encode_moment(m, int(nt), n)
                     for m, nt in zip(moments, n_trues)])


def query_position_input(moments, n_trues, n, rng, noise_std=0.1):
    """Foreground indicators of the fake moments plus N(0, std^2) noise."""
    base = np.stack([foreground_indicator(m, int(nt), n)
                     for m, nt in zip(moments, n_trues)])
    return base + rng.normal(0.0, noise_std, base.shape).astype(np.float32)


def make_bias_conflict(features, bias):
    """Additive injection: biased = features + bias (shapes must match)."""
    f = features.data if isinstance(features, Tensor) else np.asarray(features)
    b = bias.data if isinstance(bias, Tensor) else np.asarray(bias)
    if f.shape != b.shape:
        raise ValueError(f"feature shape {f.shape} does not match "
                         f"bias shape {b.shape}")
    return ag.add(features if isinstance(features, Tensor)
                  else ag.as_tensor(features),
                  bias if isinstance(bias, Tensor) else ag.as_tensor(bias))
