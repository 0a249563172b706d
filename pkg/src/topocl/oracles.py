"""Brute-force reference implementations used to check the closed forms.

These are deliberately naive: each filtration threshold rebuilds its
union-find from scratch, and the matching distance enumerates every
bijection. Keep inputs small.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import CardinalityMismatch, DisconnectedGraph, TooLarge
from .topology import PersistenceDescriptor, UnionFind, WeightedGraph

MAX_MATCHING_SIZE = 7


def _components_above(g: WeightedGraph, eps: float) -> int:
    uf = UnionFind(g.node_count)
    for a, b, w in zip(g.src.tolist(), g.dst.tolist(), g.weights.tolist()):
        if w > eps:
            uf.union(a, b)
    return uf.components


def oracle_persistence(g: WeightedGraph) -> PersistenceDescriptor:
    """Births and deaths read off a full threshold sweep.

    At each distinct weight the component count ``beta0`` and the cycle count
    ``beta1 = E - |V| + beta0`` are recomputed from nothing. Increments of
    ``beta0`` are births and decrements of ``beta1`` are deaths at that weight.
    Edge ids are assigned to those events in ascending id order among the
    edges that carry the weight.
    """
    n = g.node_count
    w = g.weights
    if _components_above(g, -np.inf) != 1:
        raise DisconnectedGraph("graph is not connected")
    levels = np.unique(w)
    prev_b0 = 1
    prev_b1 = w.size - n + 1
    death_mask = np.zeros(w.size, dtype=bool)
    for eps in levels:
        b0 = _components_above(g, eps)
        edges_left = int(np.count_nonzero(w > eps))
        b1 = edges_left - n + b0
        born, died = b0 - prev_b0, prev_b1 - b1
        removed = np.flatnonzero(w == eps)
        assert born + died == removed.size
        # which of the tied edges gets labelled a death is a convention
        death_mask[removed[born:]] = True
        prev_b0, prev_b1 = b0, b1
    return PersistenceDescriptor.from_partition(w, death_mask)


def oracle_matching_distance(d_g, d_h) -> float:
    """Minimum squared matching cost over all bijections (at most 7! of them)."""
    a = [float(x) for x in d_g]
    b = [float(x) for x in d_h]
    if len(a) != len(b):
        raise CardinalityMismatch(f"death sets differ in size: {len(a)} vs {len(b)}")
    if len(a) > MAX_MATCHING_SIZE:
        raise TooLarge(f"exhaustive matching limited to {MAX_MATCHING_SIZE} points, got {len(a)}")
    best = np.inf
    for perm in itertools.permutations(range(len(b))):
        cost = sum((x - b[j]) ** 2 for x, j in zip(a, perm))
        best = min(best, cost)
    return 0.0 if not a else float(best)


def random_connected_graph(rng: np.random.Generator, n_nodes: int, n_edges: int,
                           low: float = -1.0, high: float = 1.0) -> WeightedGraph:
    """Random spanning tree plus extra distinct edges, continuous weights."""
    max_edges = n_nodes * (n_nodes - 1) // 2
    n_edges = min(max(n_edges, n_nodes - 1), max_edges)
    perm = rng.permutation(n_nodes)
    pairs = set()
    for k in range(1, n_nodes):
        a, b = perm[k], perm[rng.integers(0, k)]
        pairs.add((min(a, b), max(a, b)))
    while len(pairs) < n_edges:
        a, b = rng.choice(n_nodes, size=2, replace=False)
        pairs.add((min(a, b), max(a, b)))
    pairs = sorted(pairs)
    rng.shuffle(pairs)
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    w = rng.uniform(low, high, size=len(pairs))
    return WeightedGraph(n_nodes, src, dst, w)
