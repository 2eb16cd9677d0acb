"""Train a plain grounding model and a debiased one, then compare.

Uses a reduced corpus and few epochs so the whole script stays near a
minute; the gap numbers are noisier than the full experiment's but the
direction is usually visible: adversarial training narrows the spread
between the IID and OOD test splits.
"""

import sys
from pathlib import Path

from bssard.evaluation import evaluate, shuffle_query_probe
from bssard.experiments import EXPERIMENT_RULES
from bssard.synthdata import CorpusConfig, generate_corpus
from bssard.trainer import TrainConfig, fit
from bssard.backbone import Injection

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out/train")
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 6

corpus = generate_corpus(CorpusConfig(
    n=32, d_v=32, m=8, vocab=50, motifs=16, context_motifs=6,
    train_samples=600, val_samples=150, test_iid_samples=150,
    test_ood_samples=150, rules=EXPERIMENT_RULES, seed=0,
    motif_amplitude=0.8, background_std=0.18, context_amplitude=0.9))

for mode in ("baseline", "bssard"):
    config = TrainConfig(mode=mode, epochs=EPOCHS, seed=0, d=64, heads=4,
                         d_ff=128, bias_scale=0.5,
                         injection=Injection(visual="after", query="after"))
    result = fit(corpus, config, OUT / mode)
    report, _ = evaluate(result.best_checkpoint, corpus,
                         splits=("test-iid", "test-ood"),
                         shuffle_seed=99)
    iid = report.per_split["test-iid"].miou
    ood = report.per_split["test-ood"].miou
    print(f"{mode:>9}: best epoch {result.best_epoch}, "
          f"IID mIoU {iid:.4f}, OOD mIoU {ood:.4f}, "
          f"gap {iid - ood:+.4f}, "
          f"shuffle drop {report.shuffle.relative_drop:.1%}")
