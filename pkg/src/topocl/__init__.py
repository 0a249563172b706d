"""Topological regularisation of network cycle structure for continual learning."""

from .data import Task, TaskStream, make_permuted_tasks, make_rotated_tasks, make_synthetic_tasks
from .memory import EpisodicMemory, mem_update
from .metrics import ExperimentReport, compute_acc, compute_bwt, write_report
from .nn import Mlp, SubgraphSpec, backward_cross_entropy, forward, init_mlp, sgd_step
from .topology import (
    BettiCurve,
    CycleBarycenter,
    PersistenceDescriptor,
    WeightedGraph,
    barycenter_online_update,
    betti_curve,
    birth_death_decompose,
    cycle_barycenter,
    wasserstein_cycle_distance,
    wasserstein_cycle_gradient,
)
from .trainer import TrainerConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BettiCurve", "CycleBarycenter", "EpisodicMemory", "ExperimentReport", "Mlp",
    "PersistenceDescriptor", "SubgraphSpec", "Task", "TaskStream", "TrainerConfig", "WeightedGraph",
    "backward_cross_entropy", "barycenter_online_update", "betti_curve", "birth_death_decompose",
    "compute_acc", "compute_bwt", "cycle_barycenter", "forward", "init_mlp", "make_permuted_tasks",
    "make_rotated_tasks", "make_synthetic_tasks", "mem_update", "run_experiment", "sgd_step",
    "wasserstein_cycle_distance", "wasserstein_cycle_gradient", "write_report",
]
