"""
How strongly to pull towards the past: a sweep over lambda
==========================================================

lambda = 0 is plain replay. The equivalent CLI call writes one report per
grid point and seed plus ``sweep.csv``::

    topocl sweep --param lambda --values 0 0.01 0.1 1 --seeds 0 1 2
"""

import numpy as np

from topocl.data import make_synthetic_tasks
from topocl.trainer import TrainerConfig, run_experiment

grid = [0.0, 0.01, 0.1, 1.0, 3.0]
seeds = range(3)
streams = [make_synthetic_tasks(num_tasks=5, per_task=1000, seed=s) for s in seeds]

print(f"{'lambda':>8} {'ACC':>8} {'BWT':>8}")
for lam in grid:
    reps = [run_experiment(st, TrainerConfig(seed=s, lam=lam), "top-ring") for s, st in zip(seeds, streams)]
    acc = np.mean([r.acc for r in reps])
    bwt = np.mean([r.bwt for r in reps])
    print(f"{lam:>8} {100 * acc:>7.2f}% {100 * bwt:>7.2f}%")
