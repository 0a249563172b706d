import dataclasses

import numpy as np
import pytest

from topocl.data import Task, TaskStream, make_synthetic_tasks
from topocl.metrics import write_report
from topocl.nn import Mlp, backward_cross_entropy, extract_subgraphs
from topocl.topology import (
    CycleBarycenter,
    birth_death_decompose,
    cycle_barycenter,
    induced_task_weights,
    wasserstein_cycle_distance,
)
from topocl.trainer import (
    TrainerConfig,
    init_state,
    parse_method,
    run_experiment,
    train_first_task,
    train_later_task,
)


def small_stream(num_tasks=3, per_task=60, seed=0, dim=12, classes=3):
    return make_synthetic_tasks(num_tasks, classes, dim, per_task, seed=seed, test_per_task=30)


def small_config(**kw):
    base = dict(hidden=(8, 6), batch_size=10, seed=3)
    base.update(kw)
    return TrainerConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainerConfig(m=0)
    with pytest.raises(ValueError):
        TrainerConfig(p=0)
    with pytest.raises(ValueError):
        TrainerConfig(memory="lifo")


def test_parse_method():
    assert parse_method("top-ring") == ("top", "ring")
    assert parse_method("ER-Res") == ("er", "reservoir")
    assert parse_method("er") == ("er", None)
    assert parse_method("finetune") == ("finetune", "none")
    with pytest.raises(ValueError):
        parse_method("ewc")
    with pytest.raises(ValueError):
        parse_method("finetune-ring")


def test_first_task_barycenter_cardinality():
    # a 2 x 3 bipartite subgraph has 6 edges, 5 nodes, hence 6 - 4 = 2 deaths
    stream = small_stream(1, dim=4, classes=2)
    cfg = small_config(hidden=(2, 3), subgraphs=((1, 2),))
    state = init_state(cfg, stream.input_dim, stream.num_classes, num_tasks=1)
    train_first_task(state, stream[0], cfg)
    assert [len(b) for b in state.barycenters] == [2]
    assert len(state.memory) <= state.memory.capacity


def test_first_task_ignores_lambda():
    stream = small_stream(1)
    nets = []
    for lam in (0.0, 5.0):
        cfg = small_config(lam=lam)
        state = init_state(cfg, stream.input_dim, stream.num_classes, num_tasks=1)
        train_first_task(state, stream[0], cfg)
        nets.append(state.net)
    for a, b in zip(nets[0].parameters(), nets[1].parameters()):
        assert a.tobytes() == b.tobytes()


def _trajectory(stream, cfg, topological, use_memory=True):
    """Parameters after every task of a stream of one-batch tasks."""
    state = init_state(cfg, stream.input_dim, stream.num_classes, use_memory=use_memory,
                       num_tasks=len(stream))
    out = []
    for i, task in enumerate(stream):
        if i == 0:
            train_first_task(state, task, cfg, init_barycenters=topological)
        else:
            train_later_task(state, task, cfg, topological=topological)
        out.append(b"".join(p.tobytes() for p in state.net.parameters()))
    return out


def test_top_lambda_zero_is_er():
    # one batch per task, so the per-task snapshots are the full step trajectory
    stream = small_stream(num_tasks=12, per_task=10)
    cfg = small_config(lam=0.0)
    assert _trajectory(stream, cfg, True) == _trajectory(stream, cfg, False)
    # and over a multi-batch stream, the full report matches
    stream = small_stream(num_tasks=3, per_task=80)
    a = run_experiment(stream, cfg, "top-ring")
    b = run_experiment(stream, cfg, "er-ring")
    np.testing.assert_array_equal(a.R, b.R)


def test_er_without_memory_is_finetune():
    stream = small_stream(num_tasks=10, per_task=10)
    cfg = small_config(mem_per_class=0)
    assert _trajectory(stream, cfg, False) == _trajectory(stream, cfg, False, use_memory=False)
    a = run_experiment(small_stream(), cfg, "er-ring")
    b = run_experiment(small_stream(), cfg, "finetune")
    np.testing.assert_array_equal(a.R, b.R)


def test_lambda_changes_trajectory():
    stream = small_stream(num_tasks=3, per_task=40)
    a = _trajectory(stream, small_config(lam=0.0), True)
    b = _trajectory(stream, small_config(lam=1.0), True)
    assert a[0] == b[0] and a[-1] != b[-1]


@pytest.mark.parametrize("m", [1, 3, 5])
def test_membership_refresh_schedule(m):
    stream = small_stream(num_tasks=3, per_task=100)
    _, state = run_experiment(stream, small_config(m=m), "top-ring", keep_state=True)
    iters = 10
    expected = [i for i in range(iters) if i % m == 0] * 2
    assert state.refresh_log == expected
    assert state.decompositions == len(expected)


def test_barycenter_matches_induced_batch_barycenter():
    stream = small_stream(num_tasks=5, per_task=40)
    cfg = small_config(p=3.0, q=2.0)
    _, state = run_experiment(stream, cfg, "top-ring", keep_state=True)
    assert len(state.death_history) == 5
    nu = induced_task_weights(5, cfg.p, cfg.q)
    for k, bary in enumerate(state.barycenters):
        batch = cycle_barycenter([h[k] for h in state.death_history], nu)
        np.testing.assert_allclose(bary.death_values, batch.death_values, atol=1e-6, rtol=0)
        # barycenter lengths match subgraph death counts
        g = extract_subgraphs(state.net, state.spec)[k]
        assert len(bary) == g.edge_count - g.node_count + 1


def test_finetune_forgets():
    # tasks differ only by a coordinate shuffle, so learning task 2 degrades task 1
    stream = make_synthetic_tasks(2, 10, 196, 1000, seed=0, test_per_task=300)
    rep = run_experiment(stream, TrainerConfig(seed=0), "finetune")
    assert rep.R[1, 0] < rep.R[0, 0]


def test_multitask_report_shape():
    rep = run_experiment(small_stream(), small_config(), "multitask")
    assert np.all(np.isnan(rep.R[:-1]))
    assert not np.any(np.isnan(rep.R[-1]))
    assert rep.bwt is None and rep.acc == pytest.approx(rep.R[-1].mean())


def test_report_lower_triangular():
    rep = run_experiment(small_stream(), small_config(), "er-res")
    T = rep.num_tasks
    for i in range(T):
        for j in range(T):
            assert np.isnan(rep.R[i, j]) == (j > i)
    assert rep.config["memory"] == "reservoir"


@pytest.mark.parametrize("method", ["top-ring", "er-res", "finetune", "multitask"])
def test_deterministic_reports(tmp_path, method):
    paths = []
    for run in range(2):
        rep = run_experiment(small_stream(), small_config(), method)
        p = tmp_path / f"{run}.json"
        write_report(rep, p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]


def test_single_step_update_matches_composite_finite_difference():
    stream = small_stream(num_tasks=2, per_task=10, dim=5, classes=3)
    lam, gamma = 0.8, 0.05
    cfg = small_config(hidden=(4, 4), lam=lam, gamma=gamma, subgraphs=((1, 2),), memory="none")
    state = init_state(cfg, stream.input_dim, stream.num_classes, use_memory=False, num_tasks=2)
    train_first_task(state, stream[0], cfg)
    # float64 copy for a clean finite-difference reference; move the target away
    state.net = Mlp(state.net.layer_sizes, [w.astype(np.float64) for w in state.net.weights],
                    [b.astype(np.float64) for b in state.net.biases])
    rng = np.random.default_rng(0)
    state.barycenters = [CycleBarycenter(np.sort(b.death_values + 0.2 * rng.standard_normal(len(b))))
                         for b in state.barycenters]
    target = state.barycenters
    net = state.net.copy()
    task = stream[1]

    def objective():
        erm, _ = backward_cross_entropy(net, task.train_x, task.train_y)
        topo = sum(wasserstein_cycle_distance(birth_death_decompose(g), t)
                   for g, t in zip(extract_subgraphs(net, state.spec), target))
        return erm + lam / 2 * topo

    def membership():
        return [frozenset(birth_death_decompose(g).death_ids.tolist())
                for g in extract_subgraphs(net, state.spec)]

    before = [p.copy() for p in state.net.parameters()]
    train_later_task(state, task, cfg)
    after = state.net.parameters()
    base = membership()
    h, checked = 1e-6, 0
    for p_net, b0, a1 in zip(net.parameters(), before, after):
        for idx in np.ndindex(p_net.shape):
            old = p_net[idx]
            p_net[idx] = old + h
            up, ok_up = objective(), membership() == base
            p_net[idx] = old - h
            dn, ok_dn = objective(), membership() == base
            p_net[idx] = old
            if not (ok_up and ok_dn):
                continue
            fd = (up - dn) / (2 * h)
            assert a1[idx] - b0[idx] == pytest.approx(-gamma * fd, rel=1e-4, abs=1e-9)
            checked += 1
    assert checked > 40


def test_later_task_requires_barycenters():
    stream = small_stream(2)
    cfg = small_config()
    state = init_state(cfg, stream.input_dim, stream.num_classes, num_tasks=2)
    with pytest.raises(RuntimeError):
        train_later_task(state, stream[1], cfg)


def test_abs_mode_runs():
    rep = run_experiment(small_stream(), small_config(weight_mode="abs"), "top-ring")
    assert 0 <= rep.acc <= 1


def test_every_training_example_used_once():
    stream = small_stream(num_tasks=2, per_task=35)
    cfg = small_config(batch_size=10)
    seen = []
    state = init_state(cfg, stream.input_dim, stream.num_classes, num_tasks=2)
    orig = state.memory.update

    def spy(x, y, t):
        seen.append(np.asarray(x).copy())
        return orig(x, y, t)

    state.memory.update = spy
    train_first_task(state, stream[0], cfg)
    train_later_task(state, stream[1], cfg)
    allx = np.concatenate(seen)
    expected = np.concatenate([stream[0].train_x, stream[1].train_x])
    assert allx.tobytes() == expected.tobytes()
