"""Run the SCA power allocation on one network with the default settings and print its trace.

Usage: python demos/convergence.py [seed]
"""

import sys

import numpy as np

from cfurllc import Scenario, SystemConfig, algorithm1, baseline_equal_power, deploy

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
rng = np.random.default_rng(seed)

for scheme in ("mrt", "fzf", "lzf"):
    cfg = SystemConfig(scheme=scheme)
    net = deploy(cfg, np.random.default_rng(seed))
    weights = rng.uniform(0.0, 1.0, cfg.num_devices)
    scn = Scenario.build(cfg, net.beta, weights)
    res = algorithm1(scn)
    base = baseline_equal_power(scn)
    trace = " -> ".join(f"{v:.4f}" for v in res.objective_history)
    print(f"{scheme}: {res.status.value}, {res.iterations} iterations")
    print(f"  objective trace  {trace}")
    print(f"  equal power      {base.weighted_sum_rate:.4f} ({base.status.value})")
