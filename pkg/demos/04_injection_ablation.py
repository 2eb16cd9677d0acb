"""Try all four bias-injection seam combinations.

Visual bias can be added before or after the visual feature encoder and
query bias before or after the query encoder.  This runs the full
adversarial mode once per combination (short runs, one seed, so treat
orderings as illustrative only) and prints the emitted table.
"""

import sys
from pathlib import Path

from bssard.experiments import run_injection_ablation

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out/ablation")
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 2

rows, table = run_injection_ablation(OUT, seed=0, epochs=EPOCHS, log=print)
print()
print(table.read_text())
