"""Fully-connected ReLU network with hand-written backprop and plain SGD.

Weight matrix ``l`` maps neuron layer ``l`` to layer ``l + 1`` and has shape
``(layer_sizes[l + 1], layer_sizes[l])``. Parameters default to float32; the
forward/backward pass runs in the parameter dtype.

The module also cuts the network into weighted graphs for the topology code:
a ``SubgraphSpec`` lists neuron-layer ranges ``(start, stop)``, and each range
becomes one graph whose edges are the weights between consecutive layers in
the range. ``(l, l + 1)`` is a complete bipartite graph. Biases never enter a
graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import BinaryIO, Mapping, Sequence

import numpy as np

from .errors import CheckpointError, InvalidEdgeId, InvalidLabel, InvalidSpec, ShapeMismatch
from .topology import WeightedGraph, filtration_weights

CHECKPOINT_MAGIC = b"TCLM"
CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(n < 1 for n in self.layer_sizes):
            raise ShapeMismatch(f"bad layer sizes {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatch("need one weight matrix and bias vector per layer pair")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeMismatch(f"layer {l}: expected {shape}, got {w.shape} / {b.shape}")

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> Mlp:
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    def parameters(self) -> list[np.ndarray]:
        """Weights then biases; the arrays themselves, not copies."""
        return [*self.weights, *self.biases]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Mlp) -> Gradients:
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator | int,
             dtype=np.float32) -> Mlp:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(rng)
    sizes = [int(n) for n in layer_sizes]
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype))
        biases.append(np.zeros(n_out, dtype=dtype))
    return Mlp(sizes, weights, biases)


def _check_input(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ShapeMismatch(f"expected input of shape (batch, {net.layer_sizes[0]}), got {x.shape}")
    return x


def _forward_trace(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    a = x
    last = net.num_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if l == last else np.maximum(z, 0)
        acts.append(a)
    return acts


def forward(net: Mlp, batch) -> np.ndarray:
    """Logits for a batch of row vectors."""
    return _forward_trace(net, _check_input(net, batch))[-1]


def predict(net: Mlp, batch) -> np.ndarray:
    return np.argmax(forward(net, batch), axis=1)


def backward_cross_entropy(net: Mlp, batch, labels) -> tuple[float, Gradients]:
    """Mean softmax cross-entropy over the batch and its exact gradient."""
    x = _check_input(net, batch)
    y = np.asarray(labels)
    n_classes = net.layer_sizes[-1]
    if y.shape != (x.shape[0],):
        raise ShapeMismatch(f"{y.shape[0] if y.ndim else 1} labels for {x.shape[0]} inputs")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= n_classes):
        raise InvalidLabel(f"labels must be integers in [0, {n_classes})")
    acts = _forward_trace(net, x)
    logits = acts[-1]
    m = x.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(m)
    loss = float(-log_p[rows, y].mean()) if m else 0.0

    delta = np.exp(log_p)
    delta[rows, y] -= 1
    delta /= max(m, 1)
    gw = [None] * net.num_layers
    gb = [None] * net.num_layers
    for l in range(net.num_layers - 1, -1, -1):
        a_in = acts[l]
        gw[l] = delta.T @ a_in
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ net.weights[l]) * (a_in > 0)
    return loss, Gradients(gw, gb)


def sgd_step(net: Mlp, grads: Gradients, learning_rate: float) -> Mlp:
    """In-place ``w -= lr * g`` on every parameter; returns ``net``."""
    lr = net.dtype.type(learning_rate)
    for w, g in zip(net.weights, grads.weights):
        w -= lr * g
    for b, g in zip(net.biases, grads.biases):
        b -= lr * g
    return net


# -- subgraphs ---------------------------------------------------------------

@dataclass(frozen=True)
class SubgraphSpec:
    """Neuron-layer ranges, each turned into one weighted graph.

    ``(l, l + 1)`` is the bipartite graph of weight matrix ``l``; a wider range
    such as ``(0, 3)`` chains several matrices into one layered graph.
    """

    layer_pairs: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.layer_pairs)
        object.__setattr__(self, "layer_pairs", pairs)

    @classmethod
    def default_for(cls, layer_sizes: Sequence[int]) -> SubgraphSpec:
        """One bipartite graph per weight matrix after the first hidden layer."""
        n_layers = len(layer_sizes)
        if n_layers <= 2:
            return cls(((0, 1),))
        return cls(tuple((l, l + 1) for l in range(1, n_layers - 1)))

    @classmethod
    def whole(cls, layer_sizes: Sequence[int]) -> SubgraphSpec:
        return cls(((0, len(layer_sizes) - 1),))

    def validate(self, layer_sizes: Sequence[int]) -> None:
        top = len(layer_sizes) - 1
        covered: set[int] = set()
        for start, stop in self.layer_pairs:
            if not 0 <= start < stop <= top:
                raise InvalidSpec(f"layer range ({start}, {stop}) invalid for {top + 1} layers")
            mats = set(range(start, stop))
            if covered & mats:
                raise InvalidSpec(f"layer range ({start}, {stop}) overlaps another range")
            covered |= mats

    def matrices(self, k: int) -> range:
        start, stop = self.layer_pairs[k]
        return range(start, stop)


@lru_cache(maxsize=64)
def _layered_structure(sizes: tuple[int, ...], start: int, stop: int):
    offsets = np.concatenate([[0], np.cumsum(sizes[start:stop + 1])])
    src, dst = [], []
    for l in range(start, stop):
        n_in, n_out = sizes[l], sizes[l + 1]
        rows, cols = np.divmod(np.arange(n_out * n_in), n_in)
        src.append(offsets[l - start] + cols)
        dst.append(offsets[l + 1 - start] + rows)
    src, dst = np.concatenate(src), np.concatenate(dst)
    src.setflags(write=False)
    dst.setflags(write=False)
    return int(offsets[-1]), src, dst


def subgraph_weights(net: Mlp, spec: SubgraphSpec, k: int) -> np.ndarray:
    """Raw weights of subgraph ``k`` in edge-id order (row-major per matrix)."""
    return np.concatenate([net.weights[l].ravel() for l in spec.matrices(k)]).astype(np.float64)


def extract_subgraphs(net: Mlp, spec: SubgraphSpec, mode: str = "raw") -> list[WeightedGraph]:
    """One ``WeightedGraph`` per range in ``spec``.

    Nodes are numbered layer by layer from ``start``; edge ids run row-major
    through each weight matrix in turn, so ``edge_coordinate`` inverts them.
    """
    spec.validate(net.layer_sizes)
    graphs = []
    sizes = tuple(net.layer_sizes)
    for k, (start, stop) in enumerate(spec.layer_pairs):
        n_nodes, src, dst = _layered_structure(sizes, start, stop)
        w = filtration_weights(subgraph_weights(net, spec, k), mode)
        graphs.append(WeightedGraph(n_nodes, src, dst, w))
    return graphs


def edge_coordinate(layer_sizes: Sequence[int], spec: SubgraphSpec, k: int,
                    edge_id: int) -> tuple[int, int, int]:
    """(weight matrix, row, col) of an edge in subgraph ``k``."""
    e = int(edge_id)
    if e < 0:
        raise InvalidEdgeId(f"edge id {edge_id} out of range")
    for l in spec.matrices(k):
        n_in, n_out = layer_sizes[l], layer_sizes[l + 1]
        if e < n_in * n_out:
            row, col = divmod(e, n_in)
            return l, row, col
        e -= n_in * n_out
    raise InvalidEdgeId(f"edge id {edge_id} out of range for subgraph {k}")


def subgraph_edge_count(layer_sizes: Sequence[int], spec: SubgraphSpec, k: int) -> int:
    return sum(layer_sizes[l] * layer_sizes[l + 1] for l in spec.matrices(k))


def scatter_topo_gradient(grads: Gradients, edge_gradients: Sequence, lam: float,
                          spec: SubgraphSpec, layer_sizes: Sequence[int]) -> Gradients:
    """Add ``lam * edge_gradient`` onto the weight gradients, in place.

    ``edge_gradients[k]`` is either a dense array indexed by edge id of
    subgraph ``k`` or a mapping ``edge_id -> value``. Biases are untouched.
    """
    if len(edge_gradients) != len(spec.layer_pairs):
        raise InvalidSpec(f"{len(edge_gradients)} edge gradients for {len(spec.layer_pairs)} subgraphs")
    if lam == 0:
        return grads
    for k, eg in enumerate(edge_gradients):
        n_edges = subgraph_edge_count(layer_sizes, spec, k)
        if isinstance(eg, Mapping):
            dense = np.zeros(n_edges)
            for e, v in eg.items():
                if not 0 <= int(e) < n_edges:
                    raise InvalidEdgeId(f"edge id {e} out of range for subgraph {k}")
                dense[int(e)] = v
        else:
            dense = np.asarray(eg, dtype=np.float64).ravel()
            if dense.size != n_edges:
                raise InvalidEdgeId(f"subgraph {k} has {n_edges} edges, got {dense.size} gradients")
        pos = 0
        for l in spec.matrices(k):
            g = grads.weights[l]
            g += (lam * dense[pos:pos + g.size]).reshape(g.shape).astype(g.dtype)
            pos += g.size
    return grads


# -- checkpoints -------------------------------------------------------------

def write_mlp(net: Mlp, fh: BinaryIO) -> None:
    """Little-endian layout: magic, version, layer count, sizes, then per
    layer the row-major float32 weight matrix followed by its bias vector."""
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(net.layer_sizes)))
    fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
    for w, b in zip(net.weights, net.biases):
        fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"checkpoint truncated: wanted {n} bytes, got {len(data)}")
    return data


def read_mlp(fh: BinaryIO) -> Mlp:
    if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a network checkpoint")
    version, n = struct.unpack("<II", _read_exact(fh, 8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    sizes = list(struct.unpack(f"<{n}I", _read_exact(fh, 4 * n)))
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(_read_exact(fh, 4 * n_in * n_out), dtype="<f4")
        b = np.frombuffer(_read_exact(fh, 4 * n_out), dtype="<f4")
        weights.append(w.reshape(n_out, n_in).astype(np.float32))
        biases.append(b.astype(np.float32))
    return Mlp(sizes, weights, biases)


def save_mlp(net: Mlp, path) -> None:
    with open(path, "wb") as fh:
        write_mlp(net, fh)


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        return read_mlp(fh)
