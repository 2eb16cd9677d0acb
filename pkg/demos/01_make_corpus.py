"""Generate a small planted-bias corpus and look at what was planted.

Two rules tie a query token and a visual context motif to narrow moment
regions on the training side; the OOD test split breaks both ties.  The
script prints per-split counts and, for each rule, where the tagged
samples' moments actually landed.
"""

import sys
from pathlib import Path

import numpy as np

from bssard.synthdata import (BiasRule, CorpusConfig, Region, SPLITS,
                              generate_corpus, write_corpus)

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out/corpus")

config = CorpusConfig(
    n=24, d_v=24, m=8, vocab=40, motifs=12, context_motifs=5,
    train_samples=600, val_samples=150, test_iid_samples=150,
    test_ood_samples=150, seed=0,
    rules=(
        BiasRule(name="early-q", trigger_kind="query-token", trigger_id=35,
                 region=Region(0.0, 0.12, 0.1, 0.35), strength=0.9,
                 rate=0.3),
        BiasRule(name="mid-v", trigger_kind="visual-motif", trigger_id=0,
                 region=Region(0.35, 0.55, 0.15, 0.4), strength=0.9,
                 rate=0.3),
    ))

corpus = generate_corpus(config)
write_corpus(corpus, OUT)
print(f"corpus written to {OUT}\n")

for split in SPLITS:
    samples = corpus.split(split)
    tagged = sum(1 for s in samples if s.bias_tag)
    print(f"{split:>9}: {len(samples):4d} samples, {tagged:3d} rule-tagged")

for rule in config.rules:
    print(f"\nrule {rule.name} ({rule.trigger_kind} {rule.trigger_id}), "
          f"target region: start in [{rule.region.start_lo:.2f}, "
          f"{rule.region.start_hi:.2f}], duration in "
          f"[{rule.region.dur_lo:.2f}, {rule.region.dur_hi:.2f}]")
    for split in ("train", "test-ood"):
        starts = [s.moment.start / s.n_true for s in corpus.split(split)
                  if s.bias_tag == rule.name]
        if not starts:
            print(f"  {split}: no tagged samples")
            continue
        print(f"  {split}: {len(starts):3d} tagged, normalized start "
              f"mean {np.mean(starts):.3f}, std {np.std(starts):.3f}")
