"""Alternating adversarial training with parameter freezing.

One iteration under the default schedule runs the visual phase then the
query phase on the same batch.  A phase samples a fake moment and noise
per sample, synthesizes the bias, runs one forward for the real inputs
and one for the bias-conflict inputs, then performs two sub-updates on
that shared forward graph: the active generator descends its deception
plus fake-localization objective, and the discriminator (the whole
grounding backbone) descends its classification, localization, and KL
objectives.  Every sub-update hashes the parameter groups that must stay
frozen and verifies them bit-identical afterwards.

Training is float32 end to end; per-epoch RNG streams are derived from
(seed, epoch), so a run resumed from any epoch checkpoint replays the
original run exactly, metrics log included.
"""

from __future__ import annotations

import dataclasses
import hashlib
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .backbone import BackboneConfig, GroundingModel, Injection
from .biasgen import (GeneratorConfig, QueryBiasGenerator,
                      VisualBiasGenerator, query_position_input,
                      visual_position_input)
from .checkpoint import load_checkpoint, save_checkpoint, split_namespace
from .core import sample_fake_moments
from .evaluation import evaluate_model
from .losses import LossWeights
from .optim import AdamW

MODES = ("bssard", "baseline", "visual-only", "query-only")
SCHEDULES = ("alternate-each-step", "alternate-each-epoch",
             "random-each-step")
VISUAL, QUERY, PLAIN = "visual", "query", "plain"


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; the run must abort."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    schedule: str = "alternate-each-step"
    mode: str = "bssard"
    injection: Injection = Injection()
    weights: LossWeights = LossWeights()
    seed: int = 0
    refresh_forward: bool = False
    d: int = 64
    heads: int = 4
    d_ff: int = 128
    encoder_blocks: int = 1
    gen_hidden: int = 32
    z_appearance: int = 16
    z_motion: int = 16
    z_query: int = 16
    pos_noise_std: float = 0.1
    bias_scale: float = 1.0

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, "
                             f"got {self.schedule!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class StepReport:
    step: int
    phase: str
    losses: losses.LossBreakdown
    audits: dict = field(default_factory=dict)

    @property
    def freeze_ok(self):
        return all(self.audits.values())


@dataclass
class ModelBundle:
    backbone: GroundingModel
    vbg: VisualBiasGenerator | None
    qbg: QueryBiasGenerator | None
    opt_disc: AdamW
    opt_vbg: AdamW | None
    opt_qbg: AdamW | None
    train_config: TrainConfig
    backbone_config: BackboneConfig
    gen_config: GeneratorConfig

    def generator(self, phase):
        return self.vbg if phase == VISUAL else self.qbg

    def gen_optimizer(self, phase):
        return self.opt_vbg if phase == VISUAL else self.opt_qbg

    def zero_all_grads(self):
        self.backbone.zero_grad()
        for gen in (self.vbg, self.qbg):
            if gen is not None:
                gen.zero_grad()

    def named_arrays(self):
        out = {f"backbone.{k}": v for k, v in self.backbone.state().items()}
        if self.vbg is not None:
            out.update({f"vbg.{k}": v for k, v in self.vbg.state().items()})
        if self.qbg is not None:
            out.update({f"qbg.{k}": v for k, v in self.qbg.state().items()})
        out.update(self.opt_disc.state_arrays("opt.disc"))
        if self.opt_vbg is not None:
            out.update(self.opt_vbg.state_arrays("opt.vbg"))
        if self.opt_qbg is not None:
            out.update(self.opt_qbg.state_arrays("opt.qbg"))
        return out


def build_models(corpus_config, train_config):
    train_config.validate()
    c, t = corpus_config, train_config
    bcfg = BackboneConfig(n=c.n, m=c.m, d_v=c.d_v, vocab=c.vocab, d=t.d,
                          heads=t.heads, d_ff=t.d_ff,
                          encoder_blocks=t.encoder_blocks)
    gcfg = GeneratorConfig(n=c.n, m=c.m, d=t.d, hidden=t.gen_hidden,
                           z_appearance=t.z_appearance, z_motion=t.z_motion,
                           z_query=t.z_query,
                           pos_noise_std=t.pos_noise_std,
                           output_scale=t.bias_scale)
    backbone = GroundingModel(bcfg, np.random.default_rng([t.seed, 11]))
    vbg = qbg = opt_vbg = opt_qbg = None
    if t.mode in ("bssard", "visual-only"):
        vbg = VisualBiasGenerator(gcfg, np.random.default_rng([t.seed, 12]))
        opt_vbg = AdamW(vbg.named_params(), lr=t.lr,
                        weight_decay=t.weight_decay)
    if t.mode in ("bssard", "query-only"):
        qbg = QueryBiasGenerator(gcfg, np.random.default_rng([t.seed, 13]))
        opt_qbg = AdamW(qbg.named_params(), lr=t.lr,
                        weight_decay=t.weight_decay)
    opt_disc = AdamW(backbone.named_params(), lr=t.lr,
                     weight_decay=t.weight_decay)
    return ModelBundle(backbone, vbg, qbg, opt_disc, opt_vbg, opt_qbg,
                       t, bcfg, gcfg)


# -- freeze audits -----------------------------------------------------------


def group_hash(module):
    """Order-stable sha256 over every parameter's raw bytes."""
    h = hashlib.sha256()
    for name in sorted(module.named_params()):
        h.update(name.encode())
        h.update(module.named_params()[name].data.tobytes())
    return h.hexdigest()


def _hashes(bundle):
    out = {"backbone": group_hash(bundle.backbone)}
    if bundle.vbg is not None:
        out["vbg"] = group_hash(bundle.vbg)
    if bundle.qbg is not None:
        out["qbg"] = group_hash(bundle.qbg)
    return out


# -- batches -----------------------------------------------------------------


def make_batch(samples):
    return {
        "video": np.stack([s.video for s in samples]),
        "query": np.stack([s.query for s in samples]),
        "n_true": np.array([s.n_true for s in samples]),
        "y_start": np.array([s.moment.start for s in samples]),
        "y_end": np.array([s.moment.end for s in samples]),
    }


def _require_finite(name, tensor):
    value = float(tensor.item())
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite {name} loss ({value})")
    return value


def _require_finite_pred(name, pred):
    # probability clamps downstream would mask a NaN forward, so check here
    for field_name in ("p_start", "p_end", "p_domain"):
        if not np.isfinite(getattr(pred, field_name).data).all():
            raise TrainingDiverged(f"non-finite {field_name} in the "
                                   f"{name} forward pass")


# -- the two-sub-update phase ------------------------------------------------


def _forward_pair(bundle, batch, phase, latents):
    """One real forward and one bias-conflict forward, shared graph."""
    t = bundle.train_config
    backbone = bundle.backbone
    if phase == VISUAL:
        bias = bundle.vbg(latents["z_a"], latents["z_m"], latents["z_pv"])
        kwargs = {"visual_bias": bias}
    else:
        bias = bundle.qbg(latents["z_q"], latents["z_pq"])
        kwargs = {"query_bias": bias}
    pred_r = backbone.forward(batch["video"], batch["query"],
                              batch["n_true"])
    pred_f = backbone.forward(batch["video"], batch["query"],
                              batch["n_true"], injection=t.injection,
                              **kwargs)
    return pred_r, pred_f


def train_step(batch, phase, bundle, rng, step=0):
    """One adversarial phase: generator sub-update, then discriminator."""
    t = bundle.train_config
    w = t.weights
    if phase == PLAIN:
        return _plain_step(batch, bundle, step)
    gen = bundle.generator(phase)
    if gen is None:
        raise ValueError(f"phase {phase!r} has no generator in mode "
                         f"{t.mode!r}")

    b = len(batch["n_true"])
    n = bundle.backbone_config.n
    fake = sample_fake_moments(batch["n_true"], rng)
    latents = {}
    if phase == VISUAL:
        latents["z_a"] = rng.standard_normal(
            (b, bundle.gen_config.z_appearance)).astype(np.float32)
        latents["z_m"] = rng.standard_normal(
            (b, bundle.gen_config.z_motion)).astype(np.float32)
        latents["z_pv"] = visual_position_input(fake, batch["n_true"], n)
    else:
        latents["z_q"] = rng.standard_normal(
            (b, bundle.gen_config.z_query)).astype(np.float32)
        latents["z_pq"] = query_position_input(fake, batch["n_true"], n,
                                               rng, t.pos_noise_std)
    fake_starts = np.array([m.start for m in fake])
    fake_ends = np.array([m.end for m in fake])

    before = _hashes(bundle)
    other = QUERY if phase == VISUAL else VISUAL
    other_name = "qbg" if phase == VISUAL else "vbg"
    gen_name = "vbg" if phase == VISUAL else "qbg"

    # generator sub-update (discriminator frozen)
    pred_r, pred_f = _forward_pair(bundle, batch, phase, latents)
    _require_finite_pred("real", pred_r)
    _require_finite_pred("bias-conflict", pred_f)
    g_loc = losses.gen_loc_loss(pred_f.p_start, pred_f.p_end,
                                fake_starts, fake_ends)
    g_cls = losses.gen_cls_loss(pred_f.p_domain)
    g_tot = losses.gen_total(g_loc, g_cls, w)
    g_loc_v = _require_finite("gen_loc", g_loc)
    g_cls_v = _require_finite("gen_cls", g_cls)
    _require_finite("gen_total", g_tot)
    g_tot.backward()
    bundle.gen_optimizer(phase).step()
    bundle.zero_all_grads()

    after_gen = _hashes(bundle)
    audits = {
        "backbone_frozen_during_gen":
            after_gen["backbone"] == before["backbone"]}
    if other_name in before:
        audits[f"{other_name}_frozen_during_gen"] = \
            after_gen[other_name] == before[other_name]

    if t.refresh_forward:
        pred_r, pred_f = _forward_pair(bundle, batch, phase, latents)

    # discriminator sub-update (generators frozen)
    d_loc = losses.disc_loc_loss(pred_r.p_start, pred_r.p_end,
                                 pred_f.p_start, pred_f.p_end,
                                 batch["y_start"], batch["y_end"])
    d_cls = losses.disc_cls_loss(pred_r.p_domain, pred_f.p_domain)
    d_kl = losses.kl_regularizer(pred_r.p_start, pred_r.p_end,
                                 pred_f.p_start, pred_f.p_end)
    d_tot = losses.disc_total(d_loc, d_cls, d_kl, w)
    d_loc_v = _require_finite("disc_loc", d_loc)
    d_cls_v = _require_finite("disc_cls", d_cls)
    d_kl_v = _require_finite("disc_kl", d_kl)
    _require_finite("disc_total", d_tot)
    d_tot.backward()
    bundle.opt_disc.step()
    bundle.zero_all_grads()

    after_disc = _hashes(bundle)
    audits[f"{gen_name}_frozen_during_disc"] = \
        after_disc[gen_name] == after_gen[gen_name]
    if other_name in before:
        audits[f"{other_name}_frozen_during_disc"] = \
            after_disc[other_name] == before[other_name]

    report = StepReport(
        step=step, phase=phase,
        losses=losses.LossBreakdown(
            g_cls=g_cls_v, g_loc=g_loc_v,
            g_total=g_loc_v + w.lambda1 * g_cls_v,
            d_cls=d_cls_v, d_loc=d_loc_v, d_kl=d_kl_v,
            d_total=d_loc_v + w.lambda2 * d_cls_v + w.lambda3 * d_kl_v),
        audits=audits)
    if not report.freeze_ok:
        raise AssertionError(f"freeze audit failed at step {step}: "
                             f"{report.audits}")
    return report


def _plain_step(batch, bundle, step):
    """Baseline: span training on real samples only, no adversary."""
    backbone = bundle.backbone
    pred = backbone.forward(batch["video"], batch["query"], batch["n_true"])
    _require_finite_pred("real", pred)
    half = 0.5 * (losses.cross_entropy(pred.p_start, batch["y_start"])
                  + losses.cross_entropy(pred.p_end, batch["y_end"]))
    d_loc_v = _require_finite("disc_loc", half)
    half.backward()
    bundle.opt_disc.step()
    bundle.zero_all_grads()
    return StepReport(
        step=step, phase=PLAIN,
        losses=losses.LossBreakdown(g_cls=0.0, g_loc=0.0, g_total=0.0,
                                    d_cls=0.0, d_loc=d_loc_v, d_kl=0.0,
                                    d_total=d_loc_v),
        audits={})


# -- schedules ---------------------------------------------------------------


def phases_for_iteration(mode, schedule, epoch, rng):
    """Phases to run for one iteration (one batch)."""
    if mode == "baseline":
        return (PLAIN,)
    if mode == "visual-only":
        return (VISUAL,)
    if mode == "query-only":
        return (QUERY,)
    if schedule == "alternate-each-step":
        return (VISUAL, QUERY)
    if schedule == "alternate-each-epoch":
        return (VISUAL,) if epoch % 2 == 0 else (QUERY,)
    return (VISUAL,) if rng.random() < 0.5 else (QUERY,)


def iterations_per_epoch(n_samples, batch_size):
    if n_samples < batch_size:
        return 1
    return n_samples // batch_size


def train_epoch(train_samples, bundle, epoch):
    """One pass over the train split under the configured schedule."""
    t = bundle.train_config
    if not train_samples:
        raise ValueError("train split is empty")
    rng = np.random.default_rng([t.seed, 7701, epoch])
    perm = rng.permutation(len(train_samples))
    iters = iterations_per_epoch(len(train_samples), t.batch_size)
    reports = []
    for i in range(iters):
        idx = perm[i * t.batch_size:(i + 1) * t.batch_size]
        batch = make_batch([train_samples[j] for j in idx])
        step = epoch * iters + i
        for phase in phases_for_iteration(t.mode, t.schedule, epoch, rng):
            reports.append(train_step(batch, phase, bundle, rng, step=step))
    return reports


# -- fit / resume ------------------------------------------------------------


def _metrics_lines(reports, val_step=None, val_miou=None):
    lines = []
    for r in reports:
        for term, value in r.losses.items():
            lines.append(f"{r.step},{r.phase},{term},{value!r}")
    if val_miou is not None:
        lines.append(f"{val_step},val,miou,{val_miou!r}")
    return lines


def _checkpoint_metadata(bundle, epoch, best_epoch, best_val):
    t = bundle.train_config
    return {
        "epoch": epoch,
        "best_epoch": best_epoch,
        "best_val_miou": best_val,
        "mode": t.mode,
        "train_config": dataclasses.asdict(t),
        "backbone_config": dataclasses.asdict(bundle.backbone_config),
        "generator_config": dataclasses.asdict(bundle.gen_config),
        "opt_steps": {
            "disc": bundle.opt_disc.t,
            "vbg": bundle.opt_vbg.t if bundle.opt_vbg else None,
            "qbg": bundle.opt_qbg.t if bundle.opt_qbg else None,
        },
    }


def _load_bundle_state(bundle, metadata, arrays):
    bundle.backbone.load_state(split_namespace(arrays, "backbone"))
    bundle.opt_disc.load_state_arrays("opt.disc", arrays,
                                      metadata["opt_steps"]["disc"])
    if bundle.vbg is not None:
        bundle.vbg.load_state(split_namespace(arrays, "vbg"))
        bundle.opt_vbg.load_state_arrays("opt.vbg", arrays,
                                         metadata["opt_steps"]["vbg"])
    if bundle.qbg is not None:
        bundle.qbg.load_state(split_namespace(arrays, "qbg"))
        bundle.opt_qbg.load_state_arrays("opt.qbg", arrays,
                                         metadata["opt_steps"]["qbg"])


@dataclass
class FitResult:
    out_dir: Path
    best_epoch: int
    best_val_miou: float
    final_checkpoint: Path
    best_checkpoint: Path
    metrics_path: Path


def fit(corpus, config, out_dir, resume=False):
    """Full training run with per-epoch checkpoints and metrics logging."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    bundle = build_models(corpus.config, config)
    train_samples = corpus.split("train")
    iters = iterations_per_epoch(len(train_samples), config.batch_size)

    start_epoch = 0
    best_epoch, best_val = -1, -1.0
    if resume:
        existing = sorted(out_dir.glob("checkpoint_epoch_*.npz"))
        if existing:
            metadata, arrays = load_checkpoint(existing[-1])
            saved = dict(metadata["train_config"])
            wanted = dataclasses.asdict(config)
            saved.pop("epochs"), wanted.pop("epochs")
            if saved != wanted:
                raise ValueError("resume config does not match checkpoint")
            _load_bundle_state(bundle, metadata, arrays)
            start_epoch = metadata["epoch"] + 1
            best_epoch = metadata["best_epoch"]
            best_val = metadata["best_val_miou"]
            _truncate_metrics(metrics_path, start_epoch * iters)
    if not resume or start_epoch == 0:
        metrics_path.write_text("step,phase,term,value\n")

    for epoch in range(start_epoch, config.epochs):
        try:
            reports = train_epoch(train_samples, bundle, epoch)
        except TrainingDiverged:
            save_checkpoint(out_dir / "diverged.npz",
                            _checkpoint_metadata(bundle, epoch, best_epoch,
                                                 best_val),
                            bundle.named_arrays())
            raise
        val_report, _ = evaluate_model(bundle.backbone, corpus,
                                       splits=("val",))
        val_miou = val_report.per_split["val"].miou
        last_step = (epoch + 1) * iters - 1
        with open(metrics_path, "a") as fh:
            fh.write("\n".join(_metrics_lines(reports, last_step,
                                              val_miou)) + "\n")
        if val_miou > best_val:
            best_epoch, best_val = epoch, val_miou
        path = out_dir / f"checkpoint_epoch_{epoch:04d}.npz"
        save_checkpoint(path,
                        _checkpoint_metadata(bundle, epoch, best_epoch,
                                             best_val),
                        bundle.named_arrays())
        if best_epoch == epoch:
            shutil.copyfile(path, out_dir / "checkpoint_best.npz")

    final = out_dir / f"checkpoint_epoch_{config.epochs - 1:04d}.npz"
    return FitResult(out_dir=out_dir, best_epoch=best_epoch,
                     best_val_miou=best_val, final_checkpoint=final,
                     best_checkpoint=out_dir / "checkpoint_best.npz",
                     metrics_path=metrics_path)


def _truncate_metrics(metrics_path, first_invalid_step):
    """Drop rows from epochs at or beyond the resume point."""
    if not metrics_path.exists():
        metrics_path.write_text("step,phase,term,value\n")
        return
    kept = []
    with open(metrics_path) as fh:
        header = fh.readline().rstrip("\n")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            step = int(line.split(",", 1)[0])
            if step < first_invalid_step:
                kept.append(line)
    metrics_path.write_text("\n".join([header] + kept) + "\n")
