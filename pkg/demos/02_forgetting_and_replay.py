"""
Forgetting, replay and the cycle penalty on a permuted stream
=============================================================

Five tasks share ten classes; every task after the first shuffles the input
coordinates. A plain network forgets earlier tasks, replay from a tiny
memory helps a lot, and the cycle penalty on top of replay keeps the
hidden-layer weights closer to what earlier tasks built.

Runs in a few seconds: ``python demos/02_forgetting_and_replay.py``.
MNIST IDX files in ``$TOPCL_DATA_DIR`` can be used instead through
``topocl compare --dataset permuted``.
"""

import numpy as np

from topocl.data import make_synthetic_tasks
from topocl.metrics import aggregate_reports, format_table
from topocl.trainer import TrainerConfig, run_experiment

methods = ["finetune", "er-ring", "er-res", "top-ring", "top-res", "multitask"]
reports = {m: [] for m in methods}
for seed in range(3):
    stream = make_synthetic_tasks(num_tasks=5, per_task=1000, seed=seed)
    for m in methods:
        reports[m].append(run_experiment(stream, TrainerConfig(seed=seed), m))

# Accuracy on every task after each task, for one seed
np.set_printoptions(precision=3, suppress=True)
for m in ("finetune", "top-ring"):
    print(m)
    print(reports[m][0].R)

print()
print(format_table(aggregate_reports(reports)))
