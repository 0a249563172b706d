"""Oracle and property checks, runnable as one table.

Every check takes an ``Implementations`` bundle so a test can swap in a
deliberately broken function and watch the matching check fail. Checks
return ``(passed, detail)``; ``run_checks`` times them and collects
``CheckResult`` rows.
"""

from __future__ import annotations

import dataclasses
import io
import json
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .data import make_synthetic_tasks
from .memory import EpisodicMemory
from .metrics import compute_acc, compute_bwt, report_to_dict
from .nn import (
    SubgraphSpec,
    backward_cross_entropy,
    extract_subgraphs,
    init_mlp,
    scatter_topo_gradient,
)
from .oracles import oracle_matching_distance, oracle_persistence, random_connected_graph
from .errors import UndefinedForSingleTask
from .topology import (
    CycleBarycenter,
    barycenter_objective,
    barycenter_online_update,
    betti_curve,
    birth_death_decompose,
    cycle_barycenter,
    induced_task_weights,
    wasserstein_cycle_distance,
    wasserstein_cycle_gradient,
)
from .trainer import TrainerConfig, init_state, run_experiment, train_first_task, train_later_task


@dataclass
class Implementations:
    decompose: Callable = birth_death_decompose
    distance: Callable = wasserstein_cycle_distance
    gradient: Callable = wasserstein_cycle_gradient
    barycenter: Callable = cycle_barycenter
    online_update: Callable = barycenter_online_update
    betti: Callable = betti_curve
    backward: Callable = backward_cross_entropy


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


# -- topology ------------------------------------------------------------------

def check_decomposition(impl: Implementations, n_graphs: int = 100, budget: float = 10.0):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    for i in range(n_graphs):
        n = int(rng.integers(2, 51))
        max_e = n * (n - 1) // 2
        g = random_connected_graph(rng, n, int(rng.integers(n - 1, min(max_e, 4 * n) + 1)))
        got, ref = impl.decompose(g), oracle_persistence(g)
        if got.birth_weights.size != n - 1 or got.death_weights.size != g.edge_count - n + 1:
            return False, f"graph {i}: cardinalities |B|={got.birth_weights.size}, |D|={got.death_weights.size}"
        if not (np.array_equal(np.sort(got.birth_weights), np.sort(ref.birth_weights))
                and np.array_equal(np.sort(got.death_weights), np.sort(ref.death_weights))):
            return False, f"graph {i}: weight multisets differ from the threshold sweep"
    elapsed = time.perf_counter() - t0
    return elapsed < budget, f"{n_graphs} graphs in {elapsed:.2f}s (budget {budget:.0f}s)"


def check_distance(impl: Implementations, n_pairs: int = 200, tol: float = 1e-9, budget: float = 30.0):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_pairs):
        k = int(rng.integers(1, 8))
        a, b = rng.normal(size=k), rng.normal(size=k)
        err = abs(impl.distance(a, b) - oracle_matching_distance(a, b))
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    return worst <= tol and elapsed < budget, f"max |err| {worst:.2e} over {n_pairs} pairs, {elapsed:.2f}s"


def check_gradient(impl: Implementations, n_graphs: int = 50, h: float = 1e-4, rtol: float = 1e-4):
    rng = np.random.default_rng(3)
    checked = skipped = 0
    for i in range(n_graphs):
        n = int(rng.integers(4, 12))
        g = random_connected_graph(rng, n, int(rng.integers(n, 3 * n)))
        desc = impl.decompose(g)
        target = np.sort(rng.uniform(-1, 1, desc.death_ids.size))
        grad = impl.gradient(desc, target)
        if np.any(grad[desc.birth_ids] != 0):
            return False, f"graph {i}: nonzero gradient on a birth edge"
        members = np.sort(desc.death_ids)
        for k in range(g.edge_count):
            up, dn = g.weights.copy(), g.weights.copy()
            up[k] += h
            dn[k] -= h
            d_up, d_dn = impl.decompose(g.with_weights(up)), impl.decompose(g.with_weights(dn))
            if not (np.array_equal(np.sort(d_up.death_ids), members)
                    and np.array_equal(np.sort(d_dn.death_ids), members)):
                skipped += 1
                continue
            fd = (impl.distance(d_up, target) - impl.distance(d_dn, target)) / (2 * h)
            if abs(fd - grad[k]) > rtol * abs(grad[k]) + 1e-9:
                return False, f"graph {i} edge {k}: analytic {grad[k]:.6g} vs numeric {fd:.6g}"
            checked += 1
    return checked > 0, f"{checked} edges agree, {skipped} skipped for spanning-tree flips"


def check_barycenter(impl: Implementations, n_perturb: int = 1000, tol: float = 1e-6):
    rng = np.random.default_rng(4)
    sets = [np.sort(rng.normal(size=15)) for _ in range(6)]
    nu = rng.uniform(0.1, 2.0, size=6)
    bary = impl.barycenter(sets, nu)
    best = barycenter_objective(bary, sets, nu)
    for j in range(n_perturb):
        scale = 10.0 ** rng.uniform(-4, 0)
        cand = np.sort(bary.death_values + rng.normal(scale=scale, size=15))
        if barycenter_objective(cand, sets, nu) < best:
            return False, f"perturbation {j} beats the closed-form barycenter"
    worst = 0.0
    for trial in range(20):
        p, q = rng.uniform(0.1, 10, size=2)
        tasks = [np.sort(rng.normal(size=9)) for _ in range(10)]
        online = CycleBarycenter(tasks[0])
        for t in range(1, 10):
            online = impl.online_update(online, tasks[t], p, q)
            batch = impl.barycenter(tasks[:t + 1], induced_task_weights(t + 1, p, q))
            worst = max(worst, float(np.max(np.abs(online.death_values - batch.death_values))))
    return worst <= tol, f"optimal vs {n_perturb} perturbations; online vs batch max err {worst:.1e}"


def check_betti(impl: Implementations, n_graphs: int = 100):
    rng = np.random.default_rng(5)
    for i in range(n_graphs):
        n = int(rng.integers(2, 40))
        g = random_connected_graph(rng, n, int(rng.integers(n - 1, 3 * n)))
        c = impl.betti(g)
        if np.any(np.diff(c.beta0) < 0) or np.any(np.diff(c.beta1) > 0):
            return False, f"graph {i}: curve not monotone"
        if (c.beta0[-1], c.beta1[-1]) != (n, 0):
            return False, f"graph {i}: terminal values {(c.beta0[-1], c.beta1[-1])}, expected {(n, 0)}"
    return True, f"{n_graphs} filtrations monotone with terminal (|V|, 0)"


# -- network -------------------------------------------------------------------

def _numeric_grad(f, net, h):
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            dn = f()
            p[idx] = old
            g[idx] = (up - dn) / (2 * h)
        out.append(g)
    return out


def check_backprop(impl: Implementations, rtol: float = 1e-4):
    rng = np.random.default_rng(6)
    net = init_mlp([4, 2, 3], rng, dtype=np.float64)
    for b in net.biases:
        b[...] = rng.normal(scale=0.5, size=b.shape)
    x, y = rng.normal(size=(7, 4)), rng.integers(0, 3, size=7)
    _, grads = impl.backward(net, x, y)
    fd = _numeric_grad(lambda: impl.backward(net, x, y)[0], net, 1e-6)
    for a, n in zip(grads.weights + grads.biases, fd):
        if not np.allclose(a, n, rtol=rtol, atol=1e-8):
            return False, "4-2-3 net: backprop disagrees with finite differences"

    # composite loss on a tiny net; only coordinates with stable membership count
    sizes = [3, 4, 4, 3]
    net = init_mlp(sizes, rng, dtype=np.float64)
    spec = SubgraphSpec.default_for(sizes)
    x, y = rng.normal(size=(6, 3)), rng.integers(0, 3, size=6)
    targets = [CycleBarycenter(np.sort(rng.uniform(-0.8, 0.8, g.edge_count - g.node_count + 1)))
               for g in extract_subgraphs(net, spec)]
    lam = 0.7

    def objective():
        erm = impl.backward(net, x, y)[0]
        return erm + lam / 2 * sum(impl.distance(impl.decompose(g), t)
                                   for g, t in zip(extract_subgraphs(net, spec), targets))

    def membership():
        return [frozenset(impl.decompose(g).death_ids.tolist()) for g in extract_subgraphs(net, spec)]

    _, grads = impl.backward(net, x, y)
    descs = [impl.decompose(g) for g in extract_subgraphs(net, spec)]
    scatter_topo_gradient(grads, [0.5 * impl.gradient(d, t) for d, t in zip(descs, targets)],
                          lam, spec, net.layer_sizes)
    base, h, checked = membership(), 1e-5, 0
    for l, w in enumerate(net.weights):
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + h
            up, ok_up = objective(), membership() == base
            w[idx] = old - h
            dn, ok_dn = objective(), membership() == base
            w[idx] = old
            if not (ok_up and ok_dn):
                continue
            fd = (up - dn) / (2 * h)
            if abs(fd - grads.weights[l][idx]) > rtol * abs(fd) + 1e-8:
                return False, f"composite loss: layer {l} {idx} analytic {grads.weights[l][idx]:.6g} vs {fd:.6g}"
            checked += 1
    return checked > 0, f"4-2-3 net all parameters; composite loss {checked} stable weights"


def _trajectory(stream, cfg, topological, use_memory):
    state = init_state(cfg, stream.input_dim, stream.num_classes, use_memory, len(stream))
    snaps = []
    for i, task in enumerate(stream):
        if i == 0:
            train_first_task(state, task, cfg, init_barycenters=topological)
        else:
            train_later_task(state, task, cfg, topological=topological)
        snaps.append(b"".join(p.tobytes() for p in state.net.parameters()))
    return snaps


def check_reductions(impl: Implementations):
    # one batch per task, so the per-task snapshots cover every SGD step
    stream = make_synthetic_tasks(15, 4, 16, 10, seed=7, test_per_task=10)
    cfg = TrainerConfig(hidden=(10, 8), seed=7, lam=0.0)
    if _trajectory(stream, cfg, True, True) != _trajectory(stream, cfg, False, True):
        return False, "TOP with lam=0 diverges from ER"
    cfg = dataclasses.replace(cfg, lam=1.0, mem_per_class=0)
    if _trajectory(stream, cfg, False, True) != _trajectory(stream, cfg, False, False):
        return False, "ER with an empty memory diverges from finetune"
    return True, "TOP(lam=0) == ER and ER(no memory) == finetune, bit for bit"


# -- memory --------------------------------------------------------------------

def check_memory(impl: Implementations, ops: int = 10_000, trials: int = 10_000, alpha: float = 0.01):
    rng = np.random.default_rng(8)
    n_classes, quota = 7, 4
    mem = EpisodicMemory("ring", n_classes * quota, n_classes, rng=0)
    history: list[list[float]] = [[] for _ in range(n_classes)]
    counter = 0
    for op in range(ops):
        k = int(rng.integers(0, 4))
        y = rng.integers(0, n_classes, size=k)
        x = (counter + np.arange(k, dtype=np.float32))[:, None]
        counter += k
        mem.update(x, y, 1)
        for v, c in zip(x[:, 0].tolist(), y.tolist()):
            history[c].append(v)
        if len(mem) > mem.capacity:
            return False, f"ring over capacity after op {op}"
        if op % 97 == 0 or op == ops - 1:
            for c in range(n_classes):
                got = [float(s[0][0]) for s in mem.slots if s[1] == c]
                if got != history[c][-quota:]:
                    return False, f"ring contents for class {c} are not the newest {quota} in order"

    capacity, stream_len = 10, 1000
    counts = np.zeros(stream_len)
    x = np.arange(stream_len, dtype=np.float32)[:, None]
    y = np.zeros(stream_len, dtype=np.int64)
    for s in np.random.SeedSequence(2024).spawn(trials):
        res = EpisodicMemory("reservoir", capacity, 1, rng=np.random.default_rng(s))
        # feed in uneven batches to exercise the batched draw
        for a, b in zip([0, 1, 7, 100, 511], [1, 7, 100, 511, stream_len]):
            res.update(x[a:b], y[a:b], 0)
        for xi, _, _ in res.slots:
            counts[int(xi[0])] += 1
    _, p = stats.chisquare(counts, np.full(stream_len, trials * capacity / stream_len))
    return p > alpha, f"ring fuzz {ops} ops exact; reservoir chi-square p={p:.3f} over {trials} trials"


# -- reports -------------------------------------------------------------------

def check_determinism(impl: Implementations):
    stream = make_synthetic_tasks(3, 4, 16, 60, seed=9, test_per_task=30)
    cfg = TrainerConfig(hidden=(10, 8), seed=9)
    for method in ("top-ring", "er-res", "finetune", "multitask"):
        a, b = (json.dumps(report_to_dict(run_experiment(stream, cfg, method)), sort_keys=True)
                for _ in range(2))
        if a != b:
            return False, f"{method}: reports differ between identical runs"
    return True, "identical reports for top-ring, er-res, finetune, multitask"


def check_metrics(impl: Implementations, tol: float = 1e-12):
    nan = np.nan
    R = [[0.95, nan, nan], [0.90, 0.93, nan], [0.85, 0.88, 0.91]]
    acc, bwt = compute_acc(R), compute_bwt(R)
    if abs(acc - 0.88) > tol or abs(bwt + 0.075) > tol:
        return False, f"ACC {acc!r} / BWT {bwt!r} disagree with 0.88 / -0.075"
    try:
        compute_bwt([[0.9]])
    except UndefinedForSingleTask:
        return True, f"ACC {acc:.4f}, BWT {bwt:.4f}; T=1 BWT raises"
    return False, "BWT on a single task did not raise"


# -- desk-scale trend ------------------------------------------------------------

def trend_reports(seeds=range(5), num_tasks: int = 5, per_task: int = 1000,
                  methods=("finetune", "er-ring", "top-ring")):
    """Run each method on the synthetic permuted stream for every seed."""
    out = {m: [] for m in methods}
    for seed in seeds:
        stream = make_synthetic_tasks(num_tasks, 10, 196, per_task, seed=seed, test_per_task=500)
        cfg = TrainerConfig(seed=seed)
        for m in methods:
            out[m].append(run_experiment(stream, cfg, m))
    return out


def check_trend(impl: Implementations, seeds=range(5), budget: float = 900.0):
    t0 = time.perf_counter()
    reps = trend_reports(seeds)
    elapsed = time.perf_counter() - t0
    acc = {m: float(np.mean([r.acc for r in v])) for m, v in reps.items()}
    bwt = {m: float(np.mean([r.bwt for r in v])) for m, v in reps.items()}
    a = bwt["finetune"] <= -0.10
    b = acc["er-ring"] - acc["finetune"] >= 0.10
    c = acc["top-ring"] >= acc["er-ring"] - 0.005 and bwt["top-ring"] >= bwt["er-ring"]
    detail = ", ".join(f"{m} ACC {acc[m]:.4f} BWT {bwt[m]:.4f}" for m in reps)
    detail += f"; (a) {'ok' if a else 'FAIL'} (b) {'ok' if b else 'FAIL'} (c) {'ok' if c else 'FAIL'}"
    detail += f"; {elapsed:.1f}s"
    return a and b and c and elapsed < budget, detail


CHECKS: dict[str, Callable] = {
    "decomposition": check_decomposition,
    "distance": check_distance,
    "gradient": check_gradient,
    "barycenter": check_barycenter,
    "betti": check_betti,
    "backprop": check_backprop,
    "reductions": check_reductions,
    "memory": check_memory,
    "determinism": check_determinism,
    "metrics": check_metrics,
}
EXTRA_CHECKS: dict[str, Callable] = {"trend": check_trend}


def run_checks(names=None, impl: Implementations | None = None, echo: Callable | None = None):
    impl = impl or Implementations()
    table = {**CHECKS, **EXTRA_CHECKS}
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in table]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    results = []
    for name in names:
        t0 = time.perf_counter()
        try:
            ok, detail = table[name](impl)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        results.append(res)
        if echo is not None:
            echo(format_result(res))
    return results


def format_result(r: CheckResult) -> str:
    return f"{'PASS' if r.passed else 'FAIL'}  {r.name:<14} {r.seconds:7.2f}s  {r.detail}"


def format_results(results) -> str:
    buf = io.StringIO()
    for r in results:
        buf.write(format_result(r) + "\n")
    passed = sum(r.passed for r in results)
    buf.write(f"{passed}/{len(results)} checks passed\n")
    return buf.getvalue()
