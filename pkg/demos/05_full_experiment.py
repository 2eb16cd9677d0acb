"""The full debiasing comparison: four modes, five seeds, frozen config.

This is the long one (roughly an hour on one CPU core).  Each seed gets
its own corpus; every mode trains on it, is evaluated on the IID and
OOD test splits, and runs the query-shuffle probe.  Pass a smaller seed
list to sample the behavior quickly, e.g.

    python3 demos/05_full_experiment.py demo_out/full 0 1
"""

import sys
from pathlib import Path

from bssard.experiments import (gap_shrink, run_debias_experiment,
                                summarize, write_summary_table)

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out/full")
SEEDS = tuple(int(s) for s in sys.argv[2:]) or (0, 1, 2, 3, 4)

results = run_debias_experiment(OUT, seeds=SEEDS, log=print)
summary = summarize(results)
write_summary_table(summary, OUT / "summary.csv")

print()
for mode, s in summary.items():
    print(f"{mode:>12}: median OOD mIoU {s.median_ood_miou:.4f}, "
          f"median gap {s.median_gap_miou:.4f}, "
          f"median shuffle drop {s.median_shuffle_drop:.1%}")
print(f"\nbssard vs baseline: OOD mIoU "
      f"{summary['bssard'].median_ood_miou - summary['baseline'].median_ood_miou:+.4f}, "
      f"gap shrink {gap_shrink(summary):.1%}")
print(f"per-run table: {OUT / 'results.csv'}")
