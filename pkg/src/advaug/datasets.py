"""Dataset ingestion, subset selection, normalization and batch sampling.

Two on-disk layouts are supported bit-exactly:

* IDX (MNIST, Fashion-MNIST, and SVHN pre-converted to IDX): a big-endian
  header ``0x00 0x00 0x08 ndim`` followed by ``ndim`` uint32 dimensions and
  the unsigned-byte payload.
* CIFAR-10 binary: a concatenation of 3073-byte records, one label byte
  followed by 3072 channel-planar (R, G, B) row-major pixel bytes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .errors import ConfigError, DegenerateDataError, FormatError, LengthError, SamplingError

IDX_IMAGES_MAGIC = 2051  # 0x00000803: ubyte, 3 dims (N, H, W)
IDX_IMAGES4_MAGIC = 2052  # 0x00000804: ubyte, 4 dims (N, C, H, W)
IDX_LABELS_MAGIC = 2049  # 0x00000801: ubyte, 1 dim

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)

NUM_CLASSES = 10
IMAGE_SIZE = 32

DATASET_NAMES = ("mnist", "fmnist", "cifar10", "svhn-converted")


# ---------------------------------------------------------------------------
# Raw loaders
# ---------------------------------------------------------------------------


def _read_idx(path, expected_magics):
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise LengthError(f"{path}: file shorter than the IDX magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in expected_magics:
        raise FormatError(f"{path}: bad IDX magic {magic:#010x}, expected one of "
                          + ", ".join(f"{m:#010x}" for m in expected_magics))
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise LengthError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, data[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    payload = len(data) - header
    if payload < count:
        raise LengthError(f"{path}: payload has {payload} bytes, header promises {count}")
    if payload > count:
        raise FormatError(f"{path}: {payload - count} trailing bytes after IDX payload")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims).copy()


def read_idx_images(path) -> np.ndarray:
    """Return uint8 images shaped (N, C, H, W); 3-dim files get C = 1."""
    arr = _read_idx(path, (IDX_IMAGES_MAGIC, IDX_IMAGES4_MAGIC))
    if arr.ndim == 3:
        arr = arr[:, None]
    return arr


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, (IDX_LABELS_MAGIC,))


def load_idx(images_path, labels_path):
    """Load an IDX image/label file pair.

    Returns ``(images, labels)`` where ``images`` is uint8 ``(N, C, H, W)``
    and ``labels`` is uint8 ``(N,)``.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise LengthError(f"image count {len(images)} does not match label count {len(labels)}")
    return images, labels


def encode_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim == 4 and images.shape[1] == 1:
        images = images[:, 0]
    magic = IDX_IMAGES_MAGIC if images.ndim == 3 else IDX_IMAGES4_MAGIC
    return struct.pack(">I" + "I" * images.ndim, magic, *images.shape) + images.tobytes()


def encode_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


def write_idx(images_path, labels_path, images, labels):
    Path(images_path).write_bytes(encode_idx_images(images))
    Path(labels_path).write_bytes(encode_idx_labels(labels))


def load_cifar10(paths: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Load and concatenate CIFAR-10 binary batch files."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        data = Path(path).read_bytes()
        if len(data) % CIFAR_RECORD:
            raise FormatError(f"{path}: size {len(data)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = records[:, 0]
        if lab.size and lab.max() >= NUM_CLASSES:
            bad = int(np.argmax(lab >= NUM_CLASSES))
            raise ValueError(f"{path}: record {bad} has label byte {lab[bad]} > 9")
        labels.append(lab.copy())
        images.append(records[:, 1:].reshape((-1,) + CIFAR_SHAPE).copy())
    if not images:
        return np.zeros((0,) + CIFAR_SHAPE, np.uint8), np.zeros(0, np.uint8)
    return np.concatenate(images), np.concatenate(labels)


def encode_cifar10(images, labels) -> bytes:
    images = np.asarray(images, dtype=np.uint8).reshape(len(images), -1)
    labels = np.asarray(labels, dtype=np.uint8)[:, None]
    return np.concatenate([labels, images], axis=1).tobytes()


# ---------------------------------------------------------------------------
# Labeled sets and specs
# ---------------------------------------------------------------------------


@dataclass
class LabeledSet:
    """Images with labels; ``indices`` are positions in the source file."""

    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.indices is None:
            self.indices = np.arange(len(self.labels))
        if len(self.images) != len(self.labels):
            raise LengthError("images and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def take(self, positions) -> "LabeledSet":
        positions = np.asarray(positions, dtype=np.int64)
        return LabeledSet(self.images[positions], self.labels[positions], self.indices[positions])


@dataclass
class DatasetSpec:
    name: str
    train_path: tuple = ()
    test_path: tuple = ()
    subset_size: int | str = "full"
    val_fraction: float = 0.0
    seed: int = 0
    per_channel: bool = False

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise ConfigError(f"unknown dataset {self.name!r}; choose from {DATASET_NAMES}")
        if isinstance(self.subset_size, str) and self.subset_size != "full":
            self.subset_size = int(self.subset_size)
        if self.subset_size != "full" and self.subset_size <= 0:
            raise ConfigError("subset_size must be positive or 'full'")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    @property
    def channels(self) -> int:
        return 3 if self.name in ("cifar10", "svhn-converted") else 1


def default_paths(name: str, root) -> tuple[tuple, tuple]:
    """Conventional file names below a data root directory."""
    root = Path(root)
    if name in ("mnist", "fmnist"):
        return ((root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte"),
                (root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte"))
    if name == "svhn-converted":
        return ((root / "train-images-idx4-ubyte", root / "train-labels-idx1-ubyte"),
                (root / "test-images-idx4-ubyte", root / "test-labels-idx1-ubyte"))
    if name == "cifar10":
        base = root / "cifar-10-batches-bin" if (root / "cifar-10-batches-bin").is_dir() else root
        return (tuple(base / f"data_batch_{i}.bin" for i in range(1, 6)),
                (base / "test_batch.bin",))
    raise ConfigError(f"unknown dataset {name!r}")


def load_split(name: str, paths) -> LabeledSet:
    if name == "cifar10":
        images, labels = load_cifar10(paths)
    else:
        images, labels = load_idx(*paths)
    if labels.size and labels.max() >= NUM_CLASSES:
        raise ValueError(f"label {labels.max()} out of range [0, {NUM_CLASSES - 1}]")
    return LabeledSet(images, labels)


def make_subset(spec: DatasetSpec, full: LabeledSet) -> tuple[LabeledSet, LabeledSet]:
    """Draw a class-balanced training subset and carve a validation split from it.

    Per-class counts differ by at most one. When ``val_fraction`` is nonzero
    every class contributes at least one validation sample.
    """
    n = len(full) if spec.subset_size == "full" else int(spec.subset_size)
    if n > len(full):
        raise ConfigError(f"subset of {n} requested from {len(full)} samples")
    classes = np.unique(full.labels)
    k = len(classes)
    if n < k:
        raise ConfigError(f"subset of {n} samples cannot cover {k} classes")
    rng = np.random.default_rng(spec.seed)

    if n == len(full):
        chosen = np.arange(len(full))
    else:
        quota = np.full(k, n // k)
        quota[rng.permutation(k)[: n % k]] += 1
        chosen = []
        for c, q in zip(classes, quota):
            members = np.flatnonzero(full.labels == c)
            if len(members) < q:
                raise ConfigError(f"class {c} has {len(members)} samples, {q} needed for balance")
            chosen.append(rng.choice(members, size=q, replace=False))
        chosen = np.sort(np.concatenate(chosen))

    if spec.val_fraction == 0.0:
        return full.take(chosen), full.take(chosen[:0])

    labels = full.labels[chosen]
    val_mask = np.zeros(len(chosen), dtype=bool)
    for c in classes:
        members = np.flatnonzero(labels == c)
        n_val = max(1, int(round(spec.val_fraction * len(members))))
        if n_val >= len(members):
            raise ConfigError(f"class {c} has too few samples for val_fraction {spec.val_fraction}")
        val_mask[rng.choice(members, size=n_val, replace=False)] = True
    return full.take(chosen[~val_mask]), full.take(chosen[val_mask])


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)

    def as_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"])


def compute_stats(images: np.ndarray, per_channel: bool = False) -> NormStats:
    """Mean and (population) standard deviation of raw pixel values."""
    x = np.asarray(images, dtype=np.float64)
    if per_channel:
        axes = (0, 2, 3)
        return NormStats(x.mean(axis=axes), x.std(axis=axes))
    return NormStats(x.mean(), x.std())


def pad_to(images: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    h, w = images.shape[-2:]
    if h > size or w > size:
        raise FormatError(f"images of {h}x{w} exceed target size {size}")
    top, left = (size - h) // 2, (size - w) // 2
    pad = [(0, 0)] * (images.ndim - 2) + [(top, size - h - top), (left, size - w - left)]
    return np.pad(images, pad, mode="constant", constant_values=0)


def _broadcast_stats(stats: NormStats, ndim: int):
    mean, std = stats.mean, stats.std
    if mean.ndim:
        shape = (1, -1) + (1,) * (ndim - 2)
        mean, std = mean.reshape(shape), std.reshape(shape)
    return mean, std


def preprocess(images: np.ndarray, stats: NormStats) -> np.ndarray:
    """Zero-pad raw images to 32x32, then map every pixel p to (p - mean) / std."""
    if np.any(stats.std <= 0):
        raise DegenerateDataError("pixel standard deviation is zero")
    x = pad_to(np.asarray(images)).astype(np.float64)
    mean, std = _broadcast_stats(stats, x.ndim)
    return ((x - mean) / std).astype(np.float32)


def denormalize(images, stats: NormStats) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    mean, std = _broadcast_stats(stats, x.ndim)
    return x * std + mean


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class LabeledBatch:
    images: torch.Tensor
    labels: torch.Tensor
    indices: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.labels)


@dataclass
class BatchTriple:
    batch_i: LabeledBatch
    batch_j: LabeledBatch
    batch_k: LabeledBatch


@dataclass
class PreparedData:
    """Normalized train/val/test sets plus the statistics used to produce them."""

    train: LabeledSet
    val: LabeledSet
    test: LabeledSet
    stats: NormStats
    channels: int


def prepare(spec: DatasetSpec) -> PreparedData:
    full = load_split(spec.name, spec.train_path)
    train, val = make_subset(spec, full)
    test = load_split(spec.name, spec.test_path)
    return prepare_sets(train, val, test, per_channel=spec.per_channel)


def prepare_sets(train: LabeledSet, val: LabeledSet, test: LabeledSet,
                 per_channel: bool = False) -> PreparedData:
    stats = compute_stats(train.images, per_channel=per_channel)

    def norm(s):
        return LabeledSet(preprocess(s.images, stats), s.labels, s.indices)

    return PreparedData(norm(train), norm(val), norm(test), stats, train.images.shape[1])


def to_batch(data: LabeledSet, positions) -> LabeledBatch:
    positions = np.asarray(positions, dtype=np.int64)
    return LabeledBatch(torch.from_numpy(np.ascontiguousarray(data.images[positions])),
                        torch.from_numpy(data.labels[positions]),
                        positions)


class TripleSampler:
    """Draws the three batches consumed by one training iteration.

    ``batch_i`` walks a fresh permutation of the training set each epoch;
    ``batch_j`` is drawn with replacement; ``batch_k`` holds, position by
    position, a different sample of the same class as ``batch_i``.

    Owns its RNG stream; not safe for concurrent use.
    """

    def __init__(self, train: LabeledSet, m: int, rng: np.random.Generator):
        if m < 1:
            raise ConfigError("batch size must be positive")
        self.train = train
        self.m = m
        self.rng = rng
        self._members = {int(c): np.flatnonzero(train.labels == c) for c in np.unique(train.labels)}

    def steps_per_epoch(self) -> int:
        return -(-len(self.train) // self.m)

    def partner_positions(self, positions_i) -> np.ndarray:
        out = np.empty(len(positions_i), dtype=np.int64)
        for n, p in enumerate(positions_i):
            c = int(self.train.labels[p])
            members = self._members[c]
            if len(members) < 2:
                raise SamplingError(f"class {c} has a single sample; no distinct partner exists", label=c)
            rank = int(np.searchsorted(members, p))
            r = int(self.rng.integers(len(members) - 1))
            out[n] = members[r + (r >= rank)]
        return out

    def triple(self, positions_i) -> BatchTriple:
        positions_i = np.asarray(positions_i, dtype=np.int64)
        positions_j = self.rng.integers(len(self.train), size=len(positions_i))
        positions_k = self.partner_positions(positions_i)
        return BatchTriple(to_batch(self.train, positions_i),
                           to_batch(self.train, positions_j),
                           to_batch(self.train, positions_k))

    def sample(self) -> BatchTriple:
        return self.triple(self.rng.integers(len(self.train), size=self.m))

    def epoch(self) -> Iterator[BatchTriple]:
        order = self.rng.permutation(len(self.train))
        for start in range(0, len(order), self.m):
            yield self.triple(order[start:start + self.m])


def sample_triple(train: LabeledSet, m: int, rng: np.random.Generator) -> BatchTriple:
    return TripleSampler(train, m, rng).sample()


def iterate_batches(data: LabeledSet, m: int, rng: np.random.Generator | None = None):
    """Yield ``LabeledBatch`` chunks; shuffled when an RNG is given."""
    order = rng.permutation(len(data)) if rng is not None else np.arange(len(data))
    for start in range(0, len(order), m):
        yield to_batch(data, order[start:start + m])
