"""Canned-experiment plumbing: result tables, medians, ablation harness."""

import csv
import math
from pathlib import Path

import pytest

from bssard.backbone import Injection
from bssard.experiments import (EXPERIMENT_RULES, INJECTION_COMBOS,
                                ModeResult, experiment_corpus_config,
                                experiment_train_config, gap_shrink,
                                run_debias_experiment,
                                run_injection_ablation, run_mode,
                                summarize, write_results_csv,
                                write_summary_table)
from bssard.synthdata import BiasRule, CorpusConfig, Region, generate_corpus
from bssard.trainer import MODES


def fake_result(mode, seed, ood, gap, drop, iid=None):
    return ModeResult(mode=mode, seed=seed,
                      iid_miou=iid if iid is not None else ood + gap,
                      ood_miou=ood, gap_miou=gap, ood_r1i5=ood,
                      shuffle_drop=drop, best_epoch=3, runtime_s=1.0,
                      run_dir=Path(f"/tmp/{mode}{seed}"))


def tiny_corpus_config(seed):
    rules = (BiasRule(name="early", trigger_kind="query-token",
                      trigger_id=25,
                      region=Region(0.0, 0.1, 0.1, 0.5),
                      strength=0.9, rate=0.3),)
    return CorpusConfig(n=20, d_v=16, m=8, vocab=30, motifs=8,
                        context_motifs=4, train_samples=32,
                        val_samples=12, test_iid_samples=12,
                        test_ood_samples=12, rules=rules, seed=seed)


@pytest.fixture(scope="module")
def tiny_corpus():
    return generate_corpus(tiny_corpus_config(5))


# -- frozen configurations ---------------------------------------------------


def test_experiment_corpus_matches_stated_scale():
    config = experiment_corpus_config(0)
    config.validate()
    assert (config.n, config.d_v, config.m, config.vocab) == (32, 32, 8, 50)
    assert config.train_samples == 2000
    assert config.val_samples == 400
    assert config.test_iid_samples == 400
    assert config.test_ood_samples == 400
    assert len(config.rules) == 3
    assert all(r.strength == 0.9 for r in config.rules)


def test_experiment_corpus_has_both_trigger_kinds():
    kinds = {r.trigger_kind for r in EXPERIMENT_RULES}
    assert kinds == {"query-token", "visual-motif"}


@pytest.mark.parametrize("mode", MODES)
def test_experiment_train_config_is_valid(mode):
    experiment_train_config(mode, seed=3).validate()


# -- summaries ---------------------------------------------------------------


def test_summarize_takes_per_mode_medians():
    results = [fake_result("baseline", s, ood, gap, drop)
               for s, (ood, gap, drop) in enumerate(
                   [(0.40, 0.30, 0.50), (0.50, 0.20, 0.40),
                    (0.45, 0.25, 0.45)])]
    results += [fake_result("bssard", s, ood, gap, drop)
                for s, (ood, gap, drop) in enumerate(
                    [(0.60, 0.10, 0.70), (0.70, 0.05, 0.60),
                     (0.65, 0.15, 0.65)])]
    summary = summarize(results)
    assert summary["baseline"].runs == 3
    assert summary["baseline"].median_ood_miou == 0.45
    assert summary["baseline"].median_gap_miou == 0.25
    assert summary["bssard"].median_ood_miou == 0.65
    assert summary["bssard"].median_gap_miou == 0.10
    assert summary["bssard"].median_shuffle_drop == 0.65


def test_gap_shrink_relative_formula():
    summary = summarize(
        [fake_result("baseline", 0, 0.4, 0.30, 0.5),
         fake_result("bssard", 0, 0.6, 0.12, 0.6)])
    assert math.isclose(gap_shrink(summary), (0.30 - 0.12) / 0.30)


def test_gap_shrink_guards_nonpositive_base():
    summary = summarize([fake_result("baseline", 0, 0.4, 0.0, 0.5),
                         fake_result("bssard", 0, 0.6, 0.1, 0.6)])
    assert gap_shrink(summary) == 0.0


def test_results_csv_roundtrip(tmp_path):
    results = [fake_result("baseline", 0, 0.4, 0.3, 0.5),
               fake_result("bssard", 0, 0.6, 0.1, 0.7)]
    path = write_results_csv(results, tmp_path / "results.csv")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["mode"] == "baseline"
    assert float(rows[1]["ood_miou"]) == 0.6
    assert rows[1]["run_dir"] == "/tmp/bssard0"


def test_summary_table_emits_one_row_per_mode(tmp_path):
    summary = summarize([fake_result("baseline", 0, 0.4, 0.3, 0.5),
                         fake_result("bssard", 0, 0.6, 0.1, 0.7)])
    path = write_summary_table(summary, tmp_path / "summary.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("mode,runs,median_ood_miou")
    assert len(lines) == 3
    assert lines[1].startswith("baseline,1,")
    assert lines[2].startswith("bssard,1,")


# -- the harnesses themselves ------------------------------------------------


def test_run_mode_produces_artifacts(tiny_corpus, tmp_path):
    r = run_mode(tiny_corpus, "baseline", seed=1, out_dir=tmp_path / "m",
                 epochs=1)
    assert r.mode == "baseline"
    assert 0.0 <= r.ood_miou <= 1.0
    assert math.isclose(r.gap_miou, r.iid_miou - r.ood_miou)
    assert (tmp_path / "m" / "metrics.csv").exists()
    assert (tmp_path / "m" / "eval" / "report.txt").exists()
    assert (tmp_path / "m" / "eval" / "predictions.jsonl").exists()


def test_run_debias_experiment_writes_results(tmp_path):
    results = run_debias_experiment(
        tmp_path, seeds=(0,), modes=("baseline", "bssard"), epochs=1,
        corpus_config_fn=tiny_corpus_config)
    assert [r.mode for r in results] == ["baseline", "bssard"]
    assert (tmp_path / "results.csv").exists()
    assert (tmp_path / "seed0" / "baseline" / "metrics.csv").exists()
    assert (tmp_path / "seed0" / "bssard" / "metrics.csv").exists()


def test_injection_combos_cover_all_four():
    assert len(INJECTION_COMBOS) == 4
    assert len(set(INJECTION_COMBOS)) == 4
    assert Injection(visual="before", query="after") in INJECTION_COMBOS


def test_injection_ablation_emits_table(tiny_corpus, tmp_path):
    rows, table = run_injection_ablation(tmp_path, seed=0, epochs=1,
                                         corpus=tiny_corpus)
    assert len(rows) == 4
    lines = table.read_text().splitlines()
    assert lines[0] == ("visual_injection,query_injection,iid_miou,"
                       "ood_miou,gap_miou")
    assert len(lines) == 5
    seams = {tuple(line.split(",")[:2]) for line in lines[1:]}
    assert seams == {("before", "before"), ("before", "after"),
                     ("after", "before"), ("after", "after")}
