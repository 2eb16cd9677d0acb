"""Grounding metrics, IID/OOD gap reports, and the query-shuffle probe.

A model is anything with .predict(video, query, n_true) returning span
distributions; decoded spans are scored with top-1 recall at IoU 0.5 and
0.7 (r1i5 / r1i7) and mean IoU.  Reports carry raw [0,1] values; the
serialized forms also render x100 so percentage tables are unambiguous.
Per-sample predictions are dumped as JSON lines so every reported number
can be recomputed from the dump by an independent pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig, GroundingModel, decode_spans
from .checkpoint import load_checkpoint, split_namespace
from .core import Moment, temporal_iou

EVAL_SPLITS = ("val", "test-iid", "test-ood")


@dataclass(frozen=True)
class SplitMetrics:
    r1i5: float
    r1i7: float
    miou: float

    def as_dict(self):
        return {"r1i5": self.r1i5, "r1i7": self.r1i7, "miou": self.miou}


@dataclass(frozen=True)
class ShuffleProbe:
    original_miou: float
    shuffled_miou: float
    relative_drop: float


@dataclass
class MetricsReport:
    per_split: dict
    iid_ood_gap: SplitMetrics | None = None
    shuffle: ShuffleProbe | None = None


def recall_at(predictions, truths, threshold):
    """Fraction of samples whose top-1 IoU reaches the threshold."""
    if len(predictions) == 0 or len(predictions) != len(truths):
        raise ValueError("need equal-length, nonempty prediction/truth lists")
    hits = sum(1 for p, t in zip(predictions, truths)
               if temporal_iou(p, t) >= threshold)
    return hits / len(predictions)


def mean_iou(predictions, truths):
    if len(predictions) == 0 or len(predictions) != len(truths):
        raise ValueError("need equal-length, nonempty prediction/truth lists")
    return float(np.mean([temporal_iou(p, t)
                          for p, t in zip(predictions, truths)]))


def _split_metrics(predictions, truths):
    return SplitMetrics(r1i5=recall_at(predictions, truths, 0.5),
                        r1i7=recall_at(predictions, truths, 0.7),
                        miou=mean_iou(predictions, truths))


def _stack_split(samples):
    video = np.stack([s.video for s in samples])
    query = np.stack([s.query for s in samples])
    n_true = np.array([s.n_true for s in samples])
    return video, query, n_true


def predict_split(model, samples, query_override=None):
    video, query, n_true = _stack_split(samples)
    if query_override is not None:
        query = query_override
    p_start, p_end, _ = model.predict(video, query, n_true)
    return decode_spans(p_start, p_end)


def evaluate_model(model, corpus, splits=EVAL_SPLITS):
    """MetricsReport plus per-sample dump rows for the given splits."""
    cfg = getattr(model, "config", None)
    if cfg is not None and (cfg.n != corpus.config.n
                            or cfg.d_v != corpus.config.d_v
                            or cfg.m != corpus.config.m):
        raise ValueError(
            f"model dims (n={cfg.n}, d_v={cfg.d_v}, m={cfg.m}) do not "
            f"match corpus (n={corpus.config.n}, d_v={corpus.config.d_v}, "
            f"m={corpus.config.m})")
    per_split = {}
    dump_rows = []
    for split in splits:
        samples = corpus.split(split)
        preds = predict_split(model, samples)
        truths = [s.moment for s in samples]
        per_split[split] = _split_metrics(preds, truths)
        for s, p in zip(samples, preds):
            dump_rows.append({
                "id": s.sample_id, "split": split,
                "pred": [p.start, p.end],
                "truth": [s.moment.start, s.moment.end],
                "iou": temporal_iou(p, s.moment)})
    gap = None
    if "test-iid" in per_split and "test-ood" in per_split:
        iid, ood = per_split["test-iid"], per_split["test-ood"]
        gap = SplitMetrics(r1i5=iid.r1i5 - ood.r1i5,
                           r1i7=iid.r1i7 - ood.r1i7,
                           miou=iid.miou - ood.miou)
    return MetricsReport(per_split=per_split, iid_ood_gap=gap), dump_rows


def shuffle_query_probe(model, corpus, seed, split="test-ood"):
    """mIoU before/after per-sample word-order shuffling of queries."""
    samples = corpus.split(split)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    truths = [s.moment for s in samples]
    orig = mean_iou(predict_split(model, samples), truths)
    shuffled = np.stack([
        s.query[np.random.default_rng([seed, i]).permutation(len(s.query))]
        for i, s in enumerate(samples)])
    shuf = mean_iou(predict_split(model, samples, query_override=shuffled),
                    truths)
    drop = (orig - shuf) / orig if orig > 0 else 0.0
    return ShuffleProbe(original_miou=orig, shuffled_miou=shuf,
                        relative_drop=drop)


def relative_drop(original, shuffled):
    """Degradation fraction, e.g. (47.20 - 15.11) / 47.20 = 0.6799."""
    return (original - shuffled) / original if original > 0 else 0.0


# -- checkpoint loading ------------------------------------------------------


def load_trained_backbone(path):
    """Rebuild the grounding model stored under the 'backbone' namespace."""
    metadata, arrays = load_checkpoint(path)
    if "backbone_config" not in metadata:
        raise ValueError(f"{path} has no backbone_config metadata")
    config = BackboneConfig(**metadata["backbone_config"])
    model = GroundingModel(config, np.random.default_rng(0))
    model.load_state(split_namespace(arrays, "backbone"))
    return model, metadata


def evaluate(checkpoint_path, corpus, splits=EVAL_SPLITS,
             shuffle_seed=None):
    """Evaluate a checkpoint; optionally run the shuffle probe."""
    model, _ = load_trained_backbone(checkpoint_path)
    report, dump_rows = evaluate_model(model, corpus, splits)
    if shuffle_seed is not None:
        report.shuffle = shuffle_query_probe(model, corpus, shuffle_seed)
    return report, dump_rows


# -- serialization and the independent recomputation -------------------------


def write_report(report, dump_rows, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    csv_rows = ["split,metric,value,value_pct"]

    def emit(split, metrics):
        for key, value in metrics.as_dict().items():
            lines.append(f"{split} {key}={value!r} pct={100.0 * value!r}")
            csv_rows.append(f"{split},{key},{value!r},{100.0 * value!r}")

    for split in sorted(report.per_split):
        emit(split, report.per_split[split])
    if report.iid_ood_gap is not None:
        emit("iid_ood_gap", report.iid_ood_gap)
    if report.shuffle is not None:
        s = report.shuffle
        for key, value in (("original_miou", s.original_miou),
                           ("shuffled_miou", s.shuffled_miou),
                           ("relative_drop", s.relative_drop)):
            lines.append(f"shuffle_probe {key}={value!r} "
                         f"pct={100.0 * value!r}")
            csv_rows.append(f"shuffle_probe,{key},{value!r},"
                            f"{100.0 * value!r}")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")
    (out_dir / "report.csv").write_text("\n".join(csv_rows) + "\n")
    with open(out_dir / "predictions.jsonl", "w") as fh:
        for row in dump_rows:
            fh.write(json.dumps(row, sort_keys=True,
                                separators=(",", ":")) + "\n")
    return out_dir / "report.txt"


def recompute_from_dump(path):
    """Re-derive per-split metrics from a prediction dump, from scratch.

    IoUs are recomputed from the dumped spans, not read back, so this is
    an independent audit of the reported numbers.
    """
    by_split = {}
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            pred = Moment(*row["pred"])
            truth = Moment(*row["truth"])
            by_split.setdefault(row["split"], []).append(
                (pred, truth, row["iou"]))
    out = {}
    for split, triples in by_split.items():
        preds = [p for p, _, _ in triples]
        truths = [t for _, t, _ in triples]
        for p, t, stored in triples:
            if abs(temporal_iou(p, t) - stored) > 1e-12:
                raise ValueError(f"dump IoU mismatch in split {split}")
        out[split] = _split_metrics(preds, truths)
    return out
