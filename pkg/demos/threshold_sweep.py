"""Weighted sum rate against the AP selection threshold for each scheme.

Usage: python demos/threshold_sweep.py [trials]
"""

import sys

from cfurllc import ExperimentSpec, run

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 3
spec = ExperimentSpec("threshold_sweep", grid=(0.85, 0.9, 0.95, 1.0), trials=trials, seed=5)
for cell in run(spec).summary:
    if cell.variant == "proposed":
        print(f"{cell.scheme:4} T_h={cell.value:<5} mean {cell.mean_weighted_sum:.4f} "
              f"feasible {cell.feasible}/{cell.trials}")
