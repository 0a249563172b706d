import io

import numpy as np
import pytest
from scipy import stats

from topocl.errors import InvalidLabel
from topocl.memory import EpisodicMemory, mem_update


def items(n, start=0, dim=2):
    x = np.arange(start, start + n, dtype=np.float32)[:, None] * np.ones((1, dim), dtype=np.float32)
    return x


def test_insert_into_empty():
    mem = EpisodicMemory("reservoir", 10, 3, rng=0)
    mem_update(mem, items(3), [0, 1, 2], 1)
    assert len(mem) == 3
    mem = EpisodicMemory("ring", 10, 2, rng=0)
    mem_update(mem, items(3), [0, 1, 0], 1)
    assert len(mem) == 3


def test_ring_keeps_newest_per_class():
    mem = EpisodicMemory("ring", 2, 2, rng=0)
    mem.update(items(1, start=0), [0], 1)
    mem.update(items(1, start=1), [0], 1)
    assert len(mem) == 1
    x, y, t = mem.slots[0]
    assert x[0] == 1.0 and y == 0 and t == 1


def test_ring_zero_capacity():
    mem = EpisodicMemory("ring", 0, 10, rng=0)
    mem.update(items(5), [0, 1, 2, 3, 4], 1)
    assert len(mem) == 0
    x, y, _ = mem.sample(10)
    assert x.shape[0] == 0 and y.size == 0


def test_ring_fuzz_matches_per_class_suffix():
    rng = np.random.default_rng(11)
    n_classes, quota = 5, 3
    mem = EpisodicMemory("ring", n_classes * quota, n_classes, rng=1)
    stream = []
    for step in range(2000):
        k = int(rng.integers(0, 8))
        y = rng.integers(0, n_classes, size=k)
        x = items(k, start=len(stream))
        mem.update(x, y, step)
        stream.extend(zip(x[:, 0].tolist(), y.tolist()))
        assert len(mem) <= mem.capacity
    for c in range(n_classes):
        expected = [v for v, lab in stream if lab == c][-quota:]
        got = [float(s[0][0]) for s in mem.slots if s[1] == c]
        assert got == expected


def test_capacity_never_exceeded_reservoir():
    rng = np.random.default_rng(12)
    mem = EpisodicMemory("reservoir", 17, 4, rng=2)
    total = 0
    for _ in range(10_000):
        k = int(rng.integers(0, 3))
        mem.update(items(k, start=total), rng.integers(0, 4, size=k), 0)
        total += k
        assert len(mem) <= 17
    assert mem.seen_count == total


def test_reservoir_retention_uniform():
    capacity, stream_len, trials = 10, 1000, 10_000
    counts = np.zeros(stream_len)
    x = items(stream_len, dim=1)
    y = np.zeros(stream_len, dtype=np.int64)
    seeds = np.random.SeedSequence(2024).spawn(trials)
    for s in seeds:
        mem = EpisodicMemory("reservoir", capacity, 1, rng=np.random.default_rng(s))
        mem.update(x, y, 0)
        for xi, _, _ in mem.slots:
            counts[int(xi[0])] += 1
    expected = trials * capacity / stream_len
    assert counts.sum() == trials * capacity
    _, p = stats.chisquare(counts, np.full(stream_len, expected))
    assert p > 0.01


def test_reservoir_order_of_batches_irrelevant_to_capacity():
    mem = EpisodicMemory("reservoir", 5, 2, rng=3)
    for i in range(20):
        mem.update(items(1, start=i), [i % 2], 0)
    assert len(mem) == 5 and mem.seen_count == 20


def test_sample_clamps():
    mem = EpisodicMemory("reservoir", 10, 1, rng=0)
    mem.update(items(5), np.zeros(5, dtype=int), 0)
    x, y, t = mem.sample(10)
    assert sorted(x[:, 0].tolist()) == [0, 1, 2, 3, 4]


def test_sample_empty():
    x, y, t = EpisodicMemory("ring", 10, 2, rng=0).sample(10)
    assert x.shape[0] == y.size == t.size == 0


def test_sample_uniform():
    mem = EpisodicMemory("reservoir", 100, 1, rng=7)
    mem.update(items(100, dim=1), np.zeros(100, dtype=int), 0)
    counts = np.zeros(100)
    for _ in range(10_000):
        x, _, _ = mem.sample(1)
        counts[int(x[0, 0])] += 1
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_sample_is_without_replacement():
    mem = EpisodicMemory("ring", 20, 2, rng=5)
    mem.update(items(20), np.arange(20) % 2, 0)
    for _ in range(50):
        x, _, _ = mem.sample(7)
        assert len(set(x[:, 0].tolist())) == 7


def test_invalid_label():
    with pytest.raises(InvalidLabel):
        EpisodicMemory("ring", 4, 2).update(items(1), [2], 0)


@pytest.mark.parametrize("strategy", ["ring", "reservoir"])
def test_dump_restore(strategy):
    mem = EpisodicMemory(strategy, 6, 3, rng=0)
    mem.update(items(10, dim=4), np.arange(10) % 3, 2)
    buf = io.BytesIO()
    mem.write(buf)
    back = EpisodicMemory.read(io.BytesIO(buf.getvalue()))
    assert back.strategy == strategy and back.seen_count == 10 and len(back) == len(mem)
    for (xa, ya, ta), (xb, yb, tb) in zip(mem.slots, back.slots):
        assert xa.tobytes() == xb.tobytes() and ya == yb and ta == tb
