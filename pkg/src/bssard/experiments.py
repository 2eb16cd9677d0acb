"""Canned experiments: the debiasing comparison and the injection ablation.

The debiasing experiment trains all four modes (baseline, visual-only,
query-only, bssard) on a shared planted-bias corpus across several
seeds, evaluates the best-on-validation checkpoint of each run on the
IID and OOD test splits, runs the query-shuffle probe, and reports
per-mode medians.  The corpus and training settings below were
calibrated so the debiasing effect is visible within minutes per run on
one CPU core; they are deliberately frozen so results are comparable
across machines.
"""

from __future__ import annotations

import csv
import dataclasses
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

from .backbone import Injection
from .evaluation import evaluate, write_report
from .synthdata import BiasRule, CorpusConfig, Region, generate_corpus
from .trainer import MODES, TrainConfig, fit

EXPERIMENT_RULES = (
    BiasRule(name="early-q", trigger_kind="query-token", trigger_id=45,
             region=Region(0.0, 0.12, 0.1, 0.35), strength=0.9, rate=0.25),
    BiasRule(name="late-q", trigger_kind="query-token", trigger_id=46,
             region=Region(0.6, 0.88, 0.1, 0.3), strength=0.9, rate=0.25),
    BiasRule(name="mid-v", trigger_kind="visual-motif", trigger_id=0,
             region=Region(0.3, 0.55, 0.15, 0.4), strength=0.9, rate=0.4),
)


def experiment_corpus_config(seed, rules=EXPERIMENT_RULES):
    return CorpusConfig(n=32, d_v=32, m=8, vocab=50, motifs=16,
                        context_motifs=6, train_samples=2000,
                        val_samples=400, test_iid_samples=400,
                        test_ood_samples=400, rules=rules, seed=seed,
                        motif_amplitude=0.8, background_std=0.18,
                        context_amplitude=0.9)


def experiment_train_config(mode, seed, epochs=14,
                            injection=Injection(visual="after",
                                                query="after")):
    return TrainConfig(mode=mode, epochs=epochs, seed=seed, d=64,
                       heads=4, d_ff=128, injection=injection,
                       bias_scale=0.5)


@dataclass(frozen=True)
class ModeResult:
    mode: str
    seed: int
    iid_miou: float
    ood_miou: float
    gap_miou: float
    ood_r1i5: float
    shuffle_drop: float
    best_epoch: int
    runtime_s: float
    run_dir: Path


def run_mode(corpus, mode, seed, out_dir, epochs=14, injection=None):
    """Train one mode, evaluate its best checkpoint, dump reports."""
    kwargs = {} if injection is None else {"injection": injection}
    config = experiment_train_config(mode, seed, epochs, **kwargs)
    t0 = time.time()
    result = fit(corpus, config, Path(out_dir))
    report, dump_rows = evaluate(result.best_checkpoint, corpus,
                                 splits=("val", "test-iid", "test-ood"),
                                 shuffle_seed=seed + 500)
    write_report(report, dump_rows, Path(out_dir) / "eval")
    iid = report.per_split["test-iid"]
    ood = report.per_split["test-ood"]
    return ModeResult(mode=mode, seed=seed, iid_miou=iid.miou,
                      ood_miou=ood.miou, gap_miou=iid.miou - ood.miou,
                      ood_r1i5=ood.r1i5,
                      shuffle_drop=report.shuffle.relative_drop,
                      best_epoch=result.best_epoch,
                      runtime_s=time.time() - t0, run_dir=Path(out_dir))


def run_debias_experiment(out_root, seeds=(0, 1, 2, 3, 4), modes=MODES,
                          epochs=14, log=None,
                          corpus_config_fn=experiment_corpus_config):
    """All modes x seeds on per-seed corpora; returns per-run results."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in seeds:
        corpus = generate_corpus(corpus_config_fn(seed))
        for mode in modes:
            run_dir = out_root / f"seed{seed}" / mode
            r = run_mode(corpus, mode, seed, run_dir, epochs)
            results.append(r)
            if log is not None:
                log(f"seed={seed} mode={mode} ood={r.ood_miou:.4f} "
                    f"gap={r.gap_miou:.4f} drop={r.shuffle_drop:.4f} "
                    f"[{r.runtime_s:.0f}s]")
    write_results_csv(results, out_root / "results.csv")
    return results


def write_results_csv(results, path):
    fields = [f.name for f in dataclasses.fields(ModeResult)]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in results:
            row = dataclasses.asdict(r)
            row["run_dir"] = str(row["run_dir"])
            writer.writerow(row)
    return path


@dataclass(frozen=True)
class ModeSummary:
    mode: str
    runs: int
    median_ood_miou: float
    median_iid_miou: float
    median_gap_miou: float
    median_shuffle_drop: float
    max_runtime_s: float


def summarize(results):
    """Per-mode medians over seeds."""
    out = {}
    for mode in sorted({r.mode for r in results}):
        rs = [r for r in results if r.mode == mode]
        out[mode] = ModeSummary(
            mode=mode, runs=len(rs),
            median_ood_miou=statistics.median(r.ood_miou for r in rs),
            median_iid_miou=statistics.median(r.iid_miou for r in rs),
            median_gap_miou=statistics.median(r.gap_miou for r in rs),
            median_shuffle_drop=statistics.median(r.shuffle_drop
                                                  for r in rs),
            max_runtime_s=max(r.runtime_s for r in rs))
    return out


def gap_shrink(summary):
    """Relative shrink of the median IID-OOD gap, bssard vs baseline."""
    base = summary["baseline"].median_gap_miou
    if base <= 0:
        return 0.0
    return (base - summary["bssard"].median_gap_miou) / base


def write_summary_table(summary, path):
    lines = ["mode,runs,median_ood_miou,median_iid_miou,median_gap_miou,"
             "median_shuffle_drop,max_runtime_s"]
    for mode in sorted(summary):
        s = summary[mode]
        lines.append(f"{s.mode},{s.runs},{s.median_ood_miou!r},"
                     f"{s.median_iid_miou!r},{s.median_gap_miou!r},"
                     f"{s.median_shuffle_drop!r},{s.max_runtime_s!r}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


# -- injection-position ablation ---------------------------------------------

INJECTION_COMBOS = tuple(Injection(visual=v, query=q)
                         for v in ("before", "after")
                         for q in ("before", "after"))


def run_injection_ablation(out_root, seed=0, epochs=2, corpus=None,
                           log=None):
    """Full bssard at every visual/query seam combination."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    if corpus is None:
        corpus = generate_corpus(experiment_corpus_config(seed))
    rows = []
    for injection in INJECTION_COMBOS:
        tag = f"v-{injection.visual}_q-{injection.query}"
        r = run_mode(corpus, "bssard", seed, out_root / tag, epochs,
                     injection=injection)
        rows.append((injection, r))
        if log is not None:
            log(f"{tag}: ood={r.ood_miou:.4f} gap={r.gap_miou:.4f}")
    table = out_root / "ablation.csv"
    lines = ["visual_injection,query_injection,iid_miou,ood_miou,gap_miou"]
    for injection, r in rows:
        lines.append(f"{injection.visual},{injection.query},"
                     f"{r.iid_miou!r},{r.ood_miou!r},{r.gap_miou!r}")
    table.write_text("\n".join(lines) + "\n")
    return rows, table
