"""Tiny episodic memories for experience replay.

Two maintenance strategies:

* ``ring``: per-class FIFO. Each class owns ``capacity // num_classes``
  slots; when a class is full its oldest item is evicted. With
  ``num_tasks > 1`` a "class" is a (task, label) pair, so every task keeps
  its own slots for each label.
* ``reservoir``: Vitter's algorithm R. After ``n >= capacity`` insertions
  every item seen so far is in the buffer with probability ``capacity / n``.
"""

from __future__ import annotations

import struct
from collections import deque
from typing import BinaryIO

import numpy as np

from .errors import CheckpointError, InvalidLabel

STRATEGIES = ("ring", "reservoir")
MEMORY_MAGIC = b"TCLB"
_HEADER = "<IIIIIQII"


class EpisodicMemory:
    def __init__(self, strategy: str, capacity: int, num_classes: int,
                 rng: np.random.Generator | int | None = None, num_tasks: int = 1):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown memory strategy {strategy!r}")
        if capacity < 0 or num_classes < 1 or num_tasks < 1:
            raise ValueError("capacity must be >= 0, num_classes and num_tasks >= 1")
        self.strategy = strategy
        self.capacity = int(capacity)
        self.num_classes = int(num_classes)
        self.rng = np.random.default_rng(rng)
        self.num_tasks = int(num_tasks)
        self.seen_count = 0
        n_keys = self.num_classes * self.num_tasks
        self.quota = self.capacity // n_keys
        self._ring: list[deque] = [deque(maxlen=self.quota) for _ in range(n_keys)]
        self._items: list[tuple[np.ndarray, int, int]] = []

    def __len__(self) -> int:
        if self.strategy == "ring":
            return sum(len(q) for q in self._ring)
        return len(self._items)

    @property
    def slots(self) -> list[tuple[np.ndarray, int, int]]:
        """Stored ``(example, label, task_id)`` triples (ring: grouped by class)."""
        if self.strategy == "ring":
            return [item for q in self._ring for item in q]
        return list(self._items)

    def update(self, examples, labels, task_id) -> EpisodicMemory:
        """Insert a batch of examples, all from one task or with per-item task ids."""
        x = np.asarray(examples)
        y = np.asarray(labels, dtype=np.int64).ravel()
        if x.shape[0] != y.size:
            raise ValueError(f"{x.shape[0]} examples but {y.size} labels")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise InvalidLabel(f"labels must lie in [0, {self.num_classes})")
        tasks = np.broadcast_to(np.asarray(task_id, dtype=np.int64), y.shape)
        if self.num_tasks > 1 and tasks.size and (tasks.min() < 1 or tasks.max() > self.num_tasks):
            raise ValueError(f"task ids must lie in [1, {self.num_tasks}]")
        if self.strategy == "ring":
            self._ring_update(x, y, tasks)
        else:
            self._reservoir_update(x, y, tasks)
        return self

    def _ring_update(self, x, y, tasks):
        self.seen_count += y.size
        if self.quota == 0:
            return
        for xi, yi, ti in zip(x, y.tolist(), tasks.tolist()):
            self._ring[self._key(yi, ti)].append((xi.copy(), yi, ti))

    def _key(self, label: int, task_id: int) -> int:
        if self.num_tasks == 1:
            return label
        return (task_id - 1) * self.num_classes + label

    def _reservoir_update(self, x, y, tasks):
        k = y.size
        if k == 0:
            return
        counts = self.seen_count + 1 + np.arange(k)
        draws = self.rng.integers(0, counts)
        self.seen_count += k
        fill = min(k, self.capacity - len(self._items))
        for i in range(fill):
            self._items.append((x[i].copy(), int(y[i]), int(tasks[i])))
        # once full, item i replaces slot draws[i] when that slot exists
        for i in (fill + np.flatnonzero(draws[fill:] < self.capacity)).tolist():
            self._items[int(draws[i])] = (x[i].copy(), int(y[i]), int(tasks[i]))

    def sample(self, batch_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Uniform sample without replacement of ``min(batch_size, len)`` items."""
        items = self.slots
        k = min(int(batch_size), len(items))
        if k <= 0:
            return np.empty((0, 0)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        idx = self.rng.choice(len(items), size=k, replace=False)
        chosen = [items[i] for i in idx]
        return (np.stack([c[0] for c in chosen]),
                np.array([c[1] for c in chosen], dtype=np.int64),
                np.array([c[2] for c in chosen], dtype=np.int64))

    # -- persistence ---------------------------------------------------------

    def write(self, fh: BinaryIO) -> None:
        """Buffer contents in the checkpoint conventions (little-endian).

        Layout: magic, version, strategy (0 ring / 1 reservoir), capacity,
        num_classes, num_tasks, seen_count (u64), item count, feature width, then the
        float32 examples row-major, int32 labels and int32 task ids. The RNG
        state is not stored.
        """
        items = self.slots
        dim = int(items[0][0].size) if items else 0
        fh.write(MEMORY_MAGIC)
        fh.write(struct.pack(_HEADER, 1, STRATEGIES.index(self.strategy), self.capacity,
                             self.num_classes, self.num_tasks, self.seen_count, len(items), dim))
        if items:
            fh.write(np.stack([it[0].ravel() for it in items]).astype("<f4").tobytes())
            fh.write(np.array([it[1] for it in items], dtype="<i4").tobytes())
            fh.write(np.array([it[2] for it in items], dtype="<i4").tobytes())

    @classmethod
    def read(cls, fh: BinaryIO, rng=None) -> EpisodicMemory:
        if fh.read(4) != MEMORY_MAGIC:
            raise CheckpointError("not a memory dump")
        head = fh.read(struct.calcsize(_HEADER))
        if len(head) != struct.calcsize(_HEADER):
            raise CheckpointError("memory dump truncated")
        version, strat, capacity, n_classes, n_tasks, seen, n, dim = struct.unpack(_HEADER, head)
        if version != 1:
            raise CheckpointError(f"unsupported memory dump version {version}")
        mem = cls(STRATEGIES[strat], capacity, n_classes, rng, n_tasks)
        if n:
            body = fh.read(4 * n * dim + 8 * n)
            if len(body) != 4 * n * dim + 8 * n:
                raise CheckpointError("memory dump truncated")
            x = np.frombuffer(body[:4 * n * dim], "<f4").reshape(n, dim).astype(np.float32)
            y = np.frombuffer(body[4 * n * dim:4 * n * dim + 4 * n], "<i4").astype(np.int64)
            t = np.frombuffer(body[4 * n * dim + 4 * n:], "<i4").astype(np.int64)
            if mem.strategy == "ring":
                for xi, yi, ti in zip(x, y.tolist(), t.tolist()):
                    mem._ring[mem._key(yi, ti)].append((xi.copy(), yi, ti))
            else:
                mem._items = [(xi.copy(), yi, ti) for xi, yi, ti in zip(x, y.tolist(), t.tolist())]
        mem.seen_count = seen
        return mem


def mem_update(mem: EpisodicMemory, examples, labels, task_id) -> EpisodicMemory:
    return mem.update(examples, labels, task_id)
