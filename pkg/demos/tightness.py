"""Compare the closed-form rate bound with the Monte Carlo ergodic rate.

Each AP splits 0.1 W evenly over the devices it serves.  The printed gap
is (ergodic - bound) / ergodic of the weighted sum.

Usage: python demos/tightness.py [draws]
"""

import sys

from cfurllc import ExperimentSpec, SystemConfig, run

draws = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
spec = ExperimentSpec("tightness", grid=(16, 64, 144), trials=1, mc_draws=draws, seed=1,
                      base=SystemConfig(selection_threshold=0.9), tightness_aps=(4, 16))
print(f"{'scheme':6} {'M':>3} {'N':>3} {'bound':>8} {'ergodic':>8} {'gap':>7}")
for r in run(spec).records:
    if r.status != "Evaluated":
        continue
    print(f"{r.scheme:6} {r.num_aps:3d} {r.antennas_per_ap:3d} {r.weighted_sum:8.4f} "
          f"{r.extra['ergodic_weighted_sum']:8.4f} {r.extra['relative_gap']:7.2%}")
