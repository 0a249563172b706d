"""Graph filtration, birth/death decomposition and closed-form optimal transport
over the cycle structure of a weighted graph.

A network layer is viewed as an undirected weighted graph. Thresholding the
graph at increasing values ``eps`` (keeping edges with ``w > eps``) removes
edges one at a time. Every removal either splits a connected component (a
*birth*) or kills an independent cycle (a *death*). The births are exactly the
edges of the maximum spanning tree; the deaths are everything else. Because the
death set of a fixed architecture always has ``|W| - |V| + 1`` elements, the
2-Wasserstein distance between two death sets reduces to matching sorted
values, and the barycenter of several death sets is an element-wise weighted
mean.

Everything here runs in float64, independent of the dtype of the source
weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    CardinalityMismatch,
    DisconnectedGraph,
    InvalidGraph,
    NonPositiveWeight,
)

__all__ = [
    "WeightedGraph",
    "PersistenceDescriptor",
    "BettiCurve",
    "CycleBarycenter",
    "UnionFind",
    "birth_death_decompose",
    "betti_curve",
    "wasserstein_cycle_distance",
    "wasserstein_cycle_gradient",
    "cycle_barycenter",
    "barycenter_online_update",
    "barycenter_objective",
    "induced_task_weights",
    "filtration_weights",
    "chain_factor",
    "write_descriptor_dump",
    "read_descriptor_dump",
    "write_betti_dump",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class UnionFind:
    """Disjoint-set forest with union by size and path halving."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.size = [1] * size
        self.components = size

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        """Merge the sets holding ``a`` and ``b``; False if already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.components -= 1
        return True


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected weighted graph with stable edge indexing.

    Edge ``k`` joins ``src[k]`` and ``dst[k]`` with weight ``weights[k]``; the
    edge id is its position ``k``. Construction validates that there are no
    self-loops or duplicate pairs and that the graph is connected.
    """

    node_count: int
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.node_count < 1:
            raise InvalidGraph(f"node_count must be positive, got {self.node_count}")
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        w = np.array(self.weights, dtype=np.float64).ravel()
        if not (src.shape == dst.shape == w.shape):
            raise InvalidGraph("src, dst and weights must have equal length")
        if src.size:
            if min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.node_count:
                raise InvalidGraph("edge endpoint out of range")
            if np.any(src == dst):
                raise InvalidGraph("self-loops are not allowed")
            lo, hi = np.minimum(src, dst), np.maximum(src, dst)
            if np.unique(lo * self.node_count + hi).size != src.size:
                raise InvalidGraph("duplicate undirected edge")
            if not np.all(np.isfinite(w)):
                raise InvalidGraph("edge weights must be finite")
        object.__setattr__(self, "src", _frozen(src))
        object.__setattr__(self, "dst", _frozen(dst))
        object.__setattr__(self, "weights", _frozen(w))
        if self.node_count > 1:
            adj = coo_matrix(
                (np.ones(src.size), (src, dst)), shape=(self.node_count, self.node_count)
            )
            n_comp, _ = connected_components(adj, directed=False)
            if n_comp != 1:
                raise DisconnectedGraph(f"graph has {n_comp} connected components")

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int, float]]) -> WeightedGraph:
        edges = list(edges)
        if not edges:
            return cls(node_count, np.empty(0), np.empty(0), np.empty(0))
        i, j, w = zip(*edges)
        return cls(node_count, np.array(i), np.array(j), np.array(w, dtype=np.float64))

    @property
    def edge_count(self) -> int:
        return int(self.weights.size)

    @property
    def edge_ids(self) -> np.ndarray:
        return np.arange(self.edge_count)

    def with_weights(self, weights) -> WeightedGraph:
        """Same topology, new weights (validated again)."""
        return WeightedGraph(self.node_count, self.src, self.dst, np.asarray(weights))

    def edges(self) -> list[tuple[int, int, float, int]]:
        return [
            (int(a), int(b), float(w), k)
            for k, (a, b, w) in enumerate(zip(self.src, self.dst, self.weights))
        ]


def _sort_by_weight(weights: np.ndarray, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # ascending weight, ties broken by ascending edge id
    order = np.lexsort((ids, weights))
    return weights[order], ids[order]


@dataclass(frozen=True)
class PersistenceDescriptor:
    """Birth set (spanning-tree edges) and death set (cycle edges) of a graph.

    Both halves are stored as parallel ``(weights, edge_ids)`` arrays sorted by
    ascending weight, ties by edge id.
    """

    birth_weights: np.ndarray
    birth_ids: np.ndarray
    death_weights: np.ndarray
    death_ids: np.ndarray

    def __post_init__(self):
        bw, bi = _sort_by_weight(
            np.asarray(self.birth_weights, dtype=np.float64).ravel(),
            np.asarray(self.birth_ids, dtype=np.int64).ravel(),
        )
        dw, di = _sort_by_weight(
            np.asarray(self.death_weights, dtype=np.float64).ravel(),
            np.asarray(self.death_ids, dtype=np.int64).ravel(),
        )
        all_ids = np.sort(np.concatenate([bi, di]))
        if not np.array_equal(all_ids, np.arange(all_ids.size)):
            raise InvalidGraph("births and deaths must partition edge ids 0..|W|-1")
        for name, value in (("birth_weights", bw), ("birth_ids", bi),
                            ("death_weights", dw), ("death_ids", di)):
            object.__setattr__(self, name, _frozen(value))

    @classmethod
    def from_partition(cls, weights, death_mask) -> PersistenceDescriptor:
        """Build a descriptor from a per-edge weight array and death membership."""
        weights = np.asarray(weights, dtype=np.float64)
        death_mask = np.asarray(death_mask, dtype=bool)
        ids = np.arange(weights.size)
        return cls(weights[~death_mask], ids[~death_mask], weights[death_mask], ids[death_mask])

    @property
    def edge_count(self) -> int:
        return self.birth_ids.size + self.death_ids.size

    @property
    def births(self) -> list[tuple[float, int]]:
        return list(zip(self.birth_weights.tolist(), self.birth_ids.tolist()))

    @property
    def deaths(self) -> list[tuple[float, int]]:
        return list(zip(self.death_weights.tolist(), self.death_ids.tolist()))

    def death_mask(self) -> np.ndarray:
        mask = np.zeros(self.edge_count, dtype=bool)
        mask[self.death_ids] = True
        return mask


def birth_death_decompose(g: WeightedGraph) -> PersistenceDescriptor:
    """Split the edges of ``g`` into births (maximum spanning tree) and deaths.

    Kruskal's algorithm on descending weights; equal weights are visited in
    ascending edge-id order so the split is deterministic under ties.
    """
    n = g.node_count
    w = g.weights
    ids = g.edge_ids
    order = np.lexsort((ids, -w))
    src, dst = g.src.tolist(), g.dst.tolist()
    uf = UnionFind(n)
    in_tree = np.zeros(w.size, dtype=bool)
    needed = n - 1
    taken = 0
    for k in order.tolist():
        if taken == needed:
            break
        if uf.union(src[k], dst[k]):
            in_tree[k] = True
            taken += 1
    if taken != needed:
        raise DisconnectedGraph(f"spanning forest has {n - taken} components")
    return PersistenceDescriptor.from_partition(w, ~in_tree)


@dataclass(frozen=True)
class BettiCurve:
    """Component and cycle counts along the filtration.

    ``thresholds[0]`` is ``-inf`` (the full graph); the remaining entries are
    the distinct edge weights in ascending order. At threshold ``eps`` only
    edges with weight strictly greater than ``eps`` are present.
    """

    thresholds: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray

    def at(self, eps: float) -> tuple[int, int]:
        """(beta0, beta1) of the thresholded graph at an arbitrary ``eps``."""
        k = int(np.searchsorted(self.thresholds, eps, side="right")) - 1
        k = max(k, 0)
        return int(self.beta0[k]), int(self.beta1[k])


def betti_curve(g: WeightedGraph) -> BettiCurve:
    """Betti numbers at every distinct filtration value of ``g``.

    Edges are added back from the heaviest down so that a single union-find
    pass gives the component count at each threshold.
    """
    n = g.node_count
    levels = np.unique(g.weights)
    order = np.argsort(-g.weights, kind="stable")
    w_sorted = g.weights[order]
    src, dst = g.src[order].tolist(), g.dst[order].tolist()

    uf = UnionFind(n)
    beta0 = np.empty(levels.size + 1, dtype=np.int64)
    present = np.empty(levels.size + 1, dtype=np.int64)
    k = 0
    # walk thresholds from the top: at levels[i] the edges with w > levels[i] are in
    for i in range(levels.size - 1, -1, -1):
        while k < w_sorted.size and w_sorted[k] > levels[i]:
            uf.union(src[k], dst[k])
            k += 1
        beta0[i + 1] = uf.components
        present[i + 1] = k
    while k < w_sorted.size:
        uf.union(src[k], dst[k])
        k += 1
    beta0[0] = uf.components
    present[0] = k
    beta1 = present - n + beta0
    thresholds = np.concatenate([[-np.inf], levels])
    return BettiCurve(_frozen(thresholds), _frozen(beta0), _frozen(beta1))


@dataclass(frozen=True)
class CycleBarycenter:
    """Sorted death values of the topological centroid of several graphs.

    ``mass`` is the total (unnormalised) weight of the graphs folded in so far;
    the online update uses it to keep a consistent weighted mean.
    """

    death_values: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        v = np.array(self.death_values, dtype=np.float64).ravel()
        if v.size > 1 and np.any(np.diff(v) < 0):
            raise ValueError("barycenter death values must be sorted ascending")
        if not self.mass > 0:
            raise NonPositiveWeight(f"barycenter mass must be positive, got {self.mass}")
        object.__setattr__(self, "death_values", _frozen(v))

    def __len__(self) -> int:
        return self.death_values.size

    @classmethod
    def from_descriptor(cls, desc: PersistenceDescriptor) -> CycleBarycenter:
        return cls(desc.death_weights.copy(), 1.0)


def _as_deaths(d) -> np.ndarray:
    if isinstance(d, CycleBarycenter):
        return d.death_values
    if isinstance(d, PersistenceDescriptor):
        return d.death_weights
    return np.sort(np.asarray(d, dtype=np.float64).ravel())


def wasserstein_cycle_distance(d_g, d_h) -> float:
    """Squared 2-Wasserstein distance between two equal-size death sets.

    The optimal matching pairs the l-th smallest values, so the cost is the sum
    of squared differences of the sorted sets.
    """
    a, b = _as_deaths(d_g), _as_deaths(d_h)
    if a.size != b.size:
        raise CardinalityMismatch(f"death sets differ in size: {a.size} vs {b.size}")
    diff = a - b
    return float(diff @ diff)


def wasserstein_cycle_gradient(desc: PersistenceDescriptor, target) -> np.ndarray:
    """Gradient of the squared distance with respect to every edge weight.

    Returned as a dense array indexed by edge id: zero on birth edges and
    ``2 * (d_l - target_l)`` on the l-th smallest death edge.
    """
    t = _as_deaths(target)
    if t.size != desc.death_ids.size:
        raise CardinalityMismatch(
            f"descriptor has {desc.death_ids.size} deaths, target has {t.size}"
        )
    grad = np.zeros(desc.edge_count, dtype=np.float64)
    grad[desc.death_ids] = 2.0 * (desc.death_weights - t)
    return grad


def cycle_barycenter(death_sets: Sequence, weights: Sequence[float] | None = None) -> CycleBarycenter:
    """Weighted Wasserstein barycenter of death sets (element-wise weighted mean)."""
    if len(death_sets) == 0:
        raise CardinalityMismatch("need at least one death set")
    sets = [_as_deaths(d) for d in death_sets]
    sizes = {s.size for s in sets}
    if len(sizes) != 1:
        raise CardinalityMismatch(f"death sets have differing sizes {sorted(sizes)}")
    nu = np.ones(len(sets)) if weights is None else np.asarray(weights, dtype=np.float64)
    if nu.shape != (len(sets),):
        raise CardinalityMismatch(f"{nu.size} weights for {len(sets)} death sets")
    if np.any(~(nu > 0)):
        raise NonPositiveWeight("barycenter weights must be strictly positive")
    stacked = np.stack(sets)
    mass = float(nu.sum())
    return CycleBarycenter((nu @ stacked) / mass, mass)


def barycenter_online_update(prev: CycleBarycenter, new_deaths, p: float, q: float) -> CycleBarycenter:
    """Fold one more death set into a barycenter with relative weights p:q."""
    if not (p > 0 and q > 0):
        raise NonPositiveWeight(f"p and q must be positive, got p={p}, q={q}")
    new = _as_deaths(new_deaths)
    if new.size != len(prev):
        raise CardinalityMismatch(f"barycenter has {len(prev)} values, new set has {new.size}")
    values = (p * prev.death_values + q * new) / (p + q)
    return CycleBarycenter(values, prev.mass * (p + q) / p)


def induced_task_weights(num_tasks: int, p: float, q: float) -> np.ndarray:
    """Per-task weights implied by repeated online updates with (p, q).

    With ``rho = q / (p + q)`` the first task gets ``(1 - rho)**(T - 1)`` and
    task ``i >= 2`` gets ``rho * (1 - rho)**(T - i)``. They sum to one.
    """
    rho = q / (p + q)
    i = np.arange(1, num_tasks + 1)
    nu = rho * (1.0 - rho) ** (num_tasks - i)
    nu[0] = (1.0 - rho) ** (num_tasks - 1)
    return nu


def barycenter_objective(candidate, death_sets: Sequence, weights: Sequence[float]) -> float:
    """Weighted sum of squared distances from ``candidate`` to each death set."""
    return float(sum(w * wasserstein_cycle_distance(candidate, d) for w, d in zip(weights, death_sets)))


def filtration_weights(raw, mode: str = "raw") -> np.ndarray:
    """Map network weights to filtration values (``raw`` or ``abs``)."""
    raw = np.asarray(raw, dtype=np.float64)
    if mode == "raw":
        return raw
    if mode == "abs":
        return np.abs(raw)
    raise ValueError(f"unknown weight mode {mode!r}")


def chain_factor(raw, mode: str = "raw") -> np.ndarray:
    """d(filtration value)/d(raw weight) for the given mode."""
    raw = np.asarray(raw, dtype=np.float64)
    if mode == "raw":
        return np.ones_like(raw)
    if mode == "abs":
        return np.sign(raw)
    raise ValueError(f"unknown weight mode {mode!r}")


def write_descriptor_dump(desc: PersistenceDescriptor, fh: IO[str]) -> None:
    """One ``edge_id weight birth|death`` line per edge, ordered by edge id."""
    kind = np.empty(desc.edge_count, dtype=object)
    weight = np.empty(desc.edge_count, dtype=np.float64)
    kind[desc.birth_ids] = "birth"
    kind[desc.death_ids] = "death"
    weight[desc.birth_ids] = desc.birth_weights
    weight[desc.death_ids] = desc.death_weights
    for k in range(desc.edge_count):
        fh.write(f"{k} {float(weight[k])!r} {kind[k]}\n")


def read_descriptor_dump(fh: IO[str]) -> PersistenceDescriptor:
    weights, deaths = [], []
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, w, kind = line.split()
        if int(k) != len(weights):
            raise ValueError(f"edge ids must be consecutive, got {k}")
        if kind not in ("birth", "death"):
            raise ValueError(f"bad edge kind {kind!r}")
        weights.append(float(w))
        deaths.append(kind == "death")
    return PersistenceDescriptor.from_partition(weights, deaths)


def write_betti_dump(curve: BettiCurve, fh: IO[str]) -> None:
    """One ``eps beta0 beta1`` line per filtration value."""
    for eps, b0, b1 in zip(curve.thresholds, curve.beta0, curve.beta1):
        fh.write(f"{float(eps)!r} {int(b0)} {int(b1)}\n")
