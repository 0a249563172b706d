"""Sequential training with replay and topological regularisation.

Methods
-------
``finetune``   plain SGD through the tasks in order.
``er``         experience replay: each step uses the current batch together
               with a batch sampled from an episodic memory.
``top``        ER plus a penalty pulling the sorted cycle-edge weights of each
               configured subgraph towards the barycenter of past tasks.
``multitask``  one pass of SGD over the shuffled union of all tasks.

From the second task on, a TOP step does the following: every ``m``
iterations the birth/death decomposition of each subgraph is recomputed and
the set of death edges is cached. Each iteration the current weights of the
cached death edges are sorted and matched against the barycenter. Each death
edge then receives ``lam * (w - matched)`` on top of its ERM gradient. After
the task the barycenter is moved towards the final death set with weights
``p : q``.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Task, TaskStream
from .memory import EpisodicMemory
from .metrics import ExperimentReport, compute_acc, compute_bwt
from .nn import (
    Mlp,
    SubgraphSpec,
    backward_cross_entropy,
    extract_subgraphs,
    init_mlp,
    predict,
    scatter_topo_gradient,
    sgd_step,
    subgraph_weights,
)
from .topology import (
    CycleBarycenter,
    PersistenceDescriptor,
    barycenter_online_update,
    birth_death_decompose,
    chain_factor,
    filtration_weights,
    wasserstein_cycle_gradient,
)

log = logging.getLogger(__name__)

METHODS = ("finetune", "er", "top", "multitask")
MEMORY_STRATEGIES = ("ring", "reservoir", "none")
CURVE_WINDOW = 10


@dataclass
class TrainerConfig:
    lam: float = 1.0
    m: int = 5
    p: float = 9.0
    q: float = 1.0
    gamma: float = 0.1
    batch_size: int = 10
    memory: str = "ring"
    mem_per_class: int = 1
    hidden: tuple[int, ...] = (64, 64)
    subgraphs: tuple[tuple[int, int], ...] | None = None
    weight_mode: str = "raw"
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.subgraphs is not None:
            self.subgraphs = tuple((int(a), int(b)) for a, b in self.subgraphs)
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.m < 1:
            raise ValueError(f"m must be at least 1, got {self.m}")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.memory not in MEMORY_STRATEGIES:
            raise ValueError(f"memory must be one of {MEMORY_STRATEGIES}")
        if self.mem_per_class < 0:
            raise ValueError("mem_per_class must be non-negative")
        if self.weight_mode not in ("raw", "abs"):
            raise ValueError("weight_mode must be 'raw' or 'abs'")

    def layer_sizes(self, input_dim: int, num_classes: int) -> list[int]:
        return [input_dim, *self.hidden, num_classes]

    def subgraph_spec(self, layer_sizes) -> SubgraphSpec:
        if self.subgraphs is None:
            return SubgraphSpec.default_for(layer_sizes)
        return SubgraphSpec(self.subgraphs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["subgraphs"] = None if self.subgraphs is None else [list(p) for p in self.subgraphs]
        return d


def parse_method(name: str) -> tuple[str, str | None]:
    """Split a method name into (base, memory strategy).

    ``'top-ring'`` gives ``('top', 'ring')`` and ``'er-res'`` gives
    ``('er', 'reservoir')``. ``'top-none'`` is TOP without replay. A bare
    ``'er'`` or ``'top'`` gives ``None`` for the strategy, meaning "use the
    config's memory setting". Finetune and multitask never use memory.
    """
    base, _, mem = name.lower().partition("-")
    aliases = {"res": "reservoir", "reservoir": "reservoir", "ring": "ring", "none": "none"}
    if base not in METHODS or (mem and mem not in aliases):
        raise ValueError(f"unknown method {name!r}")
    if base in ("finetune", "multitask"):
        if mem:
            raise ValueError(f"{base} takes no memory suffix")
        return base, "none"
    return base, aliases[mem] if mem else None


@dataclass
class TrainerState:
    net: Mlp
    spec: SubgraphSpec
    memory: EpisodicMemory | None
    num_classes: int
    barycenters: list[CycleBarycenter] = field(default_factory=list)
    death_masks: list[np.ndarray] = field(default_factory=list)
    iteration: int = 0
    decompositions: int = 0
    refresh_log: list[int] = field(default_factory=list)
    curves: list[list[float]] = field(default_factory=list)
    # per finished task, the death values of each subgraph folded into the barycenters
    death_history: list[list[np.ndarray]] = field(default_factory=list)


def init_state(config: TrainerConfig, input_dim: int, num_classes: int,
               use_memory: bool = True, num_tasks: int = 1) -> TrainerState:
    """Fresh network and memory.

    The memory holds ``mem_per_class`` examples for each (task, label) pair,
    i.e. ``mem_per_class * num_classes * num_tasks`` slots in total.
    """
    init_seed, mem_seed = np.random.SeedSequence(config.seed).spawn(2)
    sizes = config.layer_sizes(input_dim, num_classes)
    net = init_mlp(sizes, np.random.default_rng(init_seed))
    spec = config.subgraph_spec(sizes)
    spec.validate(sizes)
    memory = None
    if use_memory and config.memory != "none":
        memory = EpisodicMemory(config.memory, config.mem_per_class * num_classes * num_tasks,
                                num_classes, np.random.default_rng(mem_seed), num_tasks)
    return TrainerState(net, spec, memory, num_classes)


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _windowed(losses: list[float]) -> list[float]:
    return [float(np.mean(losses[i:i + CURVE_WINDOW])) for i in range(0, len(losses), CURVE_WINDOW)]


def current_descriptors(state: TrainerState, mode: str = "raw") -> list[PersistenceDescriptor]:
    return [birth_death_decompose(g) for g in extract_subgraphs(state.net, state.spec, mode)]


def train_first_task(state: TrainerState, task: Task, config: TrainerConfig,
                     init_barycenters: bool = True) -> TrainerState:
    """Plain SGD with memory updates; then seed the barycenters."""
    losses = []
    x, y = task.train_x, task.train_y
    for sl in _batches(len(y), config.batch_size):
        loss, grads = backward_cross_entropy(state.net, x[sl], y[sl])
        sgd_step(state.net, grads, config.gamma)
        if state.memory is not None:
            state.memory.update(x[sl], y[sl], task.task_id)
        losses.append(loss)
    state.curves.append(_windowed(losses))
    if init_barycenters:
        descs = current_descriptors(state, config.weight_mode)
        state.barycenters = [CycleBarycenter.from_descriptor(d) for d in descs]
        state.death_history.append([d.death_weights for d in descs])
    return state


def _refresh_membership(state: TrainerState, config: TrainerConfig) -> None:
    state.death_masks = [d.death_mask() for d in current_descriptors(state, config.weight_mode)]
    state.decompositions += 1
    state.refresh_log.append(state.iteration)


def topo_edge_gradients(state: TrainerState, config: TrainerConfig) -> list[np.ndarray]:
    """Per-subgraph ``w - matched`` on cached death edges, zero elsewhere.

    This is half the gradient of the squared distance, so that scattering it
    with weight ``lam`` gives the gradient of ``lam / 2 * distance``.
    """
    out = []
    for k, (mask, bary) in enumerate(zip(state.death_masks, state.barycenters)):
        raw = subgraph_weights(state.net, state.spec, k)
        desc = PersistenceDescriptor.from_partition(filtration_weights(raw, config.weight_mode), mask)
        g = 0.5 * wasserstein_cycle_gradient(desc, bary)
        if config.weight_mode != "raw":
            g *= chain_factor(raw, config.weight_mode)
        out.append(g)
    return out


def train_later_task(state: TrainerState, task: Task, config: TrainerConfig,
                     topological: bool = True) -> TrainerState:
    """One pass over ``task`` with replay and, if ``topological``, the cycle penalty."""
    if topological and len(state.barycenters) != len(state.spec.layer_pairs):
        raise RuntimeError("barycenters not initialised; train the first task first")
    losses = []
    x, y = task.train_x, task.train_y
    state.iteration = 0
    for sl in _batches(len(y), config.batch_size):
        xb, yb = x[sl], y[sl]
        if state.memory is not None:
            mx, my, _ = state.memory.sample(config.batch_size)
            if my.size:
                xb = np.concatenate([xb, mx.astype(xb.dtype, copy=False)])
                yb = np.concatenate([yb, my])
        if topological and state.iteration % config.m == 0:
            _refresh_membership(state, config)
        loss, grads = backward_cross_entropy(state.net, xb, yb)
        if topological:
            scatter_topo_gradient(grads, topo_edge_gradients(state, config), config.lam,
                                  state.spec, state.net.layer_sizes)
        sgd_step(state.net, grads, config.gamma)
        state.iteration += 1
        if state.memory is not None:
            state.memory.update(x[sl], y[sl], task.task_id)
        losses.append(loss)
    state.curves.append(_windowed(losses))
    if topological:
        descs = current_descriptors(state, config.weight_mode)
        state.barycenters = [barycenter_online_update(b, d.death_weights, config.p, config.q)
                             for b, d in zip(state.barycenters, descs)]
        state.death_history.append([d.death_weights for d in descs])
    return state


def evaluate(net: Mlp, task: Task) -> float:
    if task.test_y.size == 0:
        return float("nan")
    return float(np.mean(predict(net, task.test_x) == task.test_y))


def run_experiment(stream: TaskStream, config: TrainerConfig, method: str,
                   keep_state: bool = False):
    """Train ``method`` on ``stream`` and return its ``ExperimentReport``.

    ``method`` is one of ``finetune``, ``er``, ``top``, ``multitask``, or a
    combined name such as ``top-ring`` which also sets ``config.memory``.
    With ``keep_state`` the final ``TrainerState`` is returned as well.
    """
    base, strategy = parse_method(method)
    if strategy is not None:
        config = dataclasses.replace(config, memory=strategy)
    t0 = time.perf_counter()
    T = len(stream)
    R = np.full((T, T), np.nan)
    use_memory = base in ("er", "top")
    state = init_state(config, stream.input_dim, stream.num_classes, use_memory=use_memory,
                       num_tasks=T)

    if base == "multitask":
        _train_multitask(state, stream, config)
        for j, task in enumerate(stream):
            R[T - 1, j] = evaluate(state.net, task)
    else:
        topological = base == "top"
        for i, task in enumerate(stream):
            if i == 0:
                train_first_task(state, task, config, init_barycenters=topological)
            else:
                train_later_task(state, task, config, topological=topological)
            for j in range(i + 1):
                R[i, j] = evaluate(state.net, stream[j])
            log.debug("%s task %d: %s", method, i + 1, np.round(R[i, :i + 1], 4))

    acc = compute_acc(R)
    bwt = compute_bwt(R) if base != "multitask" and T > 1 else None
    report = ExperimentReport(
        method=method, R=R, acc=acc, bwt=bwt, curves=state.curves, config=config.to_dict(),
        seed=config.seed, wall_clock=time.perf_counter() - t0, decompositions=state.decompositions,
    )
    return (report, state) if keep_state else report


def _train_multitask(state: TrainerState, stream: TaskStream, config: TrainerConfig) -> None:
    x = np.concatenate([t.train_x for t in stream])
    y = np.concatenate([t.train_y for t in stream])
    order = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2]).permutation(len(y))
    joint = Task(0, x[order], y[order], x[:0], y[:0])
    train_first_task(state, joint, config, init_barycenters=False)
