"""Task streams for single-head continual learning.

Permuted and rotated streams are built from MNIST-style IDX files; a
synthetic stream of Gaussian class blobs with per-task coordinate
permutations stands in when the files are not available. Every stream is a
pure function of its inputs and seed.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BadMagic, CheckpointError, CountMismatch, IdxReadError, InsufficientData

DATA_DIR_ENV = "TOPCL_DATA_DIR"
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
STREAM_MAGIC = b"TCLD"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class Task:
    task_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[Task, ...]
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> Task:
        return self.tasks[i]

    @property
    def input_dim(self) -> int:
        return int(self.tasks[0].train_x.shape[1])


@dataclass(frozen=True)
class ImageData:
    """Train/test images scaled to [0, 1], flattened row-major."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    image_shape: tuple[int, int]


# -- IDX ---------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except OSError as exc:
        raise IdxReadError(f"cannot read {path}: {exc}") from exc


def _idx_header(raw: bytes, path, magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(raw) >= 4:
        got = struct.unpack(">I", raw[:4])[0]
        if got != magic:
            raise BadMagic(f"{path}: magic {got:#010x}, expected {magic:#010x}")
    if len(raw) < need:
        raise IdxReadError(f"{path}: file ends at byte {len(raw)} inside the header", offset=len(raw))
    return struct.unpack(f">{ndim}I", raw[4:need])


def read_idx_images(path) -> np.ndarray:
    """uint8 array of shape (N, rows, cols)."""
    raw = _read_bytes(path)
    n, rows, cols = _idx_header(raw, path, IMAGES_MAGIC, 3)
    end = 16 + n * rows * cols
    if len(raw) < end:
        raise IdxReadError(f"{path}: truncated at byte {len(raw)}, expected {end}", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    (n,) = _idx_header(raw, path, LABELS_MAGIC, 1)
    if len(raw) < 8 + n:
        raise IdxReadError(f"{path}: truncated at byte {len(raw)}, expected {8 + n}", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def load_idx(images_path, labels_path, downsample: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Images as float32 rows in [0, 1] and integer labels.

    ``downsample`` > 1 average-pools each image by that factor first.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.astype(np.float32) / 255.0
    if downsample > 1:
        x = pool_images(x, downsample)
    return x.reshape(x.shape[0], -1), labels


def pool_images(images: np.ndarray, factor: int) -> np.ndarray:
    n, rows, cols = images.shape
    r, c = rows // factor, cols // factor
    trimmed = images[:, :r * factor, :c * factor]
    return trimmed.reshape(n, r, factor, c, factor).mean(axis=(2, 4)).astype(np.float32)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (N, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    )


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def load_mnist(directory=None, downsample: int = 2) -> ImageData:
    """Standard MNIST file names inside ``directory`` (optionally gzipped)."""
    d = Path(directory) if directory is not None else data_dir()
    train_x, train_y = load_idx(d / MNIST_FILES["train_images"], d / MNIST_FILES["train_labels"], downsample)
    test_x, test_y = load_idx(d / MNIST_FILES["test_images"], d / MNIST_FILES["test_labels"], downsample)
    side = int(round(np.sqrt(train_x.shape[1])))
    return ImageData(train_x, train_y, test_x, test_y, (side, train_x.shape[1] // side))


# -- streams -----------------------------------------------------------------

def _split(base: ImageData, num_tasks: int, per_task: int, test_per_task: int | None,
           rng: np.random.Generator):
    if num_tasks < 1 or per_task < 1:
        raise ValueError("num_tasks and per_task must be positive")
    need = num_tasks * per_task
    if need > base.train_x.shape[0]:
        raise InsufficientData(f"{need} training examples requested, {base.train_x.shape[0]} available")
    n_test = base.test_x.shape[0] if test_per_task is None else test_per_task
    if n_test > base.test_x.shape[0]:
        raise InsufficientData(f"{n_test} test examples requested, {base.test_x.shape[0]} available")
    order = rng.permutation(base.train_x.shape[0])[:need].reshape(num_tasks, per_task)
    test_idx = np.sort(rng.permutation(base.test_x.shape[0])[:n_test])
    return order, test_idx


def make_permuted_tasks(base: ImageData, num_tasks: int, per_task: int, seed: int,
                        test_per_task: int | None = None) -> TaskStream:
    """Task 1 is untouched; each later task applies its own fixed pixel shuffle.

    Training examples are disjoint across tasks; the same test images are
    reused under each task's permutation.
    """
    rng = np.random.default_rng(seed)
    order, test_idx = _split(base, num_tasks, per_task, test_per_task, rng)
    dim = base.train_x.shape[1]
    tasks = []
    for t in range(num_tasks):
        perm = np.arange(dim) if t == 0 else rng.permutation(dim)
        tr = order[t]
        tasks.append(Task(
            t + 1,
            np.ascontiguousarray(base.train_x[tr][:, perm]),
            base.train_y[tr].copy(),
            np.ascontiguousarray(base.test_x[test_idx][:, perm]),
            base.test_y[test_idx].copy(),
        ))
    meta = {"kind": "permuted", "num_tasks": num_tasks, "per_task": per_task,
            "test_per_task": len(test_idx), "seed": seed}
    return TaskStream(tuple(tasks), int(max(base.train_y.max(), base.test_y.max())) + 1, meta)


def rotate_images(flat: np.ndarray, shape: tuple[int, int], angle: float) -> np.ndarray:
    """Rotate flattened images about their centre, bilinear, zero fill."""
    if angle == 0:
        return np.array(flat, dtype=np.float32)
    imgs = np.asarray(flat, dtype=np.float32).reshape(-1, *shape)
    out = ndimage.rotate(imgs, angle, axes=(2, 1), reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0).reshape(flat.shape[0], -1).astype(np.float32)


def rotation_angles(num_tasks: int, rng: np.random.Generator, schedule: str = "uniform") -> np.ndarray:
    if schedule == "uniform":
        angles = rng.uniform(0.0, 180.0, size=num_tasks)
    elif schedule == "even":
        angles = np.linspace(0.0, 180.0, num_tasks, endpoint=False)
    else:
        raise ValueError(f"unknown rotation schedule {schedule!r}")
    angles[0] = 0.0
    return angles


def make_rotated_tasks(base: ImageData, num_tasks: int, per_task: int, seed: int,
                       test_per_task: int | None = None, schedule: str = "uniform") -> TaskStream:
    """Each task rotates its digits by one fixed angle in [0, 180); task 1 by 0."""
    rng = np.random.default_rng(seed)
    order, test_idx = _split(base, num_tasks, per_task, test_per_task, rng)
    angles = rotation_angles(num_tasks, rng, schedule)
    tasks = []
    for t in range(num_tasks):
        tr = order[t]
        tasks.append(Task(
            t + 1,
            rotate_images(base.train_x[tr], base.image_shape, angles[t]),
            base.train_y[tr].copy(),
            rotate_images(base.test_x[test_idx], base.image_shape, angles[t]),
            base.test_y[test_idx].copy(),
        ))
    meta = {"kind": "rotated", "num_tasks": num_tasks, "per_task": per_task,
            "test_per_task": len(test_idx), "seed": seed, "schedule": schedule,
            "angles": [float(a) for a in angles]}
    return TaskStream(tuple(tasks), int(max(base.train_y.max(), base.test_y.max())) + 1, meta)


def make_synthetic_tasks(num_tasks: int = 5, classes: int = 10, dim: int = 196, per_task: int = 1000,
                         seed: int = 0, test_per_task: int = 500, spread: float = 0.35) -> TaskStream:
    """Gaussian class blobs in [0, 1]^dim, one coordinate shuffle per task.

    Class centres are drawn once, uniformly in the unit cube; examples are
    centre + ``spread`` * N(0, I), clipped to [0, 1]. Task 1 uses the identity
    shuffle, mirroring the permuted-image protocol. A smaller ``spread``
    gives wider margins.
    """
    if min(num_tasks, classes, dim, per_task) < 1 or test_per_task < 0:
        raise ValueError("synthetic stream parameters must be positive")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.0, 1.0, size=(classes, dim))

    def draw(n):
        y = rng.integers(0, classes, size=n)
        x = centres[y] + spread * rng.standard_normal((n, dim))
        return np.clip(x, 0.0, 1.0).astype(np.float32), y.astype(np.int64)

    tasks = []
    for t in range(num_tasks):
        perm = np.arange(dim) if t == 0 else rng.permutation(dim)
        tr_x, tr_y = draw(per_task)
        te_x, te_y = draw(test_per_task)
        tasks.append(Task(t + 1, np.ascontiguousarray(tr_x[:, perm]), tr_y,
                          np.ascontiguousarray(te_x[:, perm]), te_y))
    meta = {"kind": "synthetic", "num_tasks": num_tasks, "classes": classes, "dim": dim,
            "per_task": per_task, "test_per_task": test_per_task, "seed": seed, "spread": spread}
    return TaskStream(tuple(tasks), classes, meta)


# -- on-disk cache -----------------------------------------------------------

def _write_arrays(path: Path, x: np.ndarray, y: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<III", 1, x.shape[0], x.shape[1]))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(y, dtype="<i4").tobytes())


def _read_arrays(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != STREAM_MAGIC:
        raise CheckpointError(f"{path}: not a task array file")
    version, n, dim = struct.unpack("<III", raw[4:16])
    if version != 1 or len(raw) != 16 + 4 * n * dim + 4 * n:
        raise CheckpointError(f"{path}: bad version or size")
    x = np.frombuffer(raw, "<f4", count=n * dim, offset=16).reshape(n, dim).astype(np.float32)
    y = np.frombuffer(raw, "<i4", count=n, offset=16 + 4 * n * dim).astype(np.int64)
    return x, y


def save_stream(stream: TaskStream, directory) -> None:
    """One binary file per task split plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for task in stream:
        _write_arrays(d / f"task{task.task_id:03d}_train.bin", task.train_x, task.train_y)
        _write_arrays(d / f"task{task.task_id:03d}_test.bin", task.test_x, task.test_y)
    manifest = {"num_tasks": len(stream), "num_classes": stream.num_classes,
                "input_dim": stream.input_dim, "metadata": stream.metadata}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_stream(directory) -> TaskStream:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    tasks = []
    for t in range(1, manifest["num_tasks"] + 1):
        tr_x, tr_y = _read_arrays(d / f"task{t:03d}_train.bin")
        te_x, te_y = _read_arrays(d / f"task{t:03d}_test.bin")
        tasks.append(Task(t, tr_x, tr_y, te_x, te_y))
    return TaskStream(tuple(tasks), manifest["num_classes"], manifest["metadata"])
