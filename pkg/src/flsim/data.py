"""Datasets, IDX parsing and federated partitioning."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] != labels.shape[0] or labels.ndim != 1:
            raise ConfigError("feature rows and label count differ")
        if self.num_classes <= 0:
            raise ConfigError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConfigError("labels outside [0, num_classes)")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def split(self, test_fraction: float, seed) -> tuple[Dataset, Dataset]:
        """Random (train, test) split; the test part is never partitioned."""
        if not 0 < test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(self))
        n_test = max(1, int(round(test_fraction * len(self))))
        return self.subset(np.sort(order[n_test:])), self.subset(np.sort(order[:n_test]))


@dataclass(frozen=True)
class Partition:
    worker_id: int
    sample_indices: np.ndarray

    def __len__(self):
        return len(self.sample_indices)


def generate_synthetic(
    num_classes: int,
    dims: int,
    samples_per_class: int,
    separation: float,
    seed,
    max_tries: int = 1000,
) -> Dataset:
    """Isotropic unit-variance Gaussian blobs, one per class.

    Centers are drawn uniformly from a cube by rejection until every pair is at
    least ``separation`` apart. Features are mapped to [0, 1] by one global
    affine transform, so relative geometry is preserved.
    """
    if min(num_classes, dims, samples_per_class) <= 0:
        raise ConfigError("class count, dims and samples_per_class must be positive")
    if not separation > 0:
        raise ConfigError("separation must be positive")
    rng = np.random.default_rng(seed)
    side = 2.0 * separation * max(1.0, num_classes ** (1.0 / dims))
    centers = []
    for c in range(num_classes):
        for _ in range(max_tries):
            cand = rng.uniform(0.0, side, size=dims)
            if all(np.linalg.norm(cand - other) >= separation for other in centers):
                centers.append(cand)
                break
        else:
            raise ConfigError(
                f"could not place center {c} at separation {separation} "
                f"after {max_tries} tries"
            )
    centers = np.array(centers)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    features = centers[labels] + rng.standard_normal((labels.size, dims))
    order = rng.permutation(labels.size)
    features, labels = features[order], labels[order]
    lo, hi = features.min(), features.max()
    features = (features - lo) / (hi - lo) if hi > lo else np.zeros_like(features)
    return Dataset(features, labels, num_classes)


def nearest_centroid_accuracy(train: Dataset, test: Dataset) -> float:
    centroids = np.stack(
        [train.features[train.labels == c].mean(axis=0) for c in range(train.num_classes)]
    )
    dist = ((test.features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(dist, axis=1) == test.labels))


# ------------------------------------------------------------------------------ IDX


def _read_header(buf: bytes, count: int, what: str) -> tuple[int, ...]:
    need = 4 * count
    if len(buf) < need:
        raise FormatError(f"{what}: truncated header, need {need} bytes", len(buf))
    return struct.unpack(f">{count}I", buf[:need])


def parse_idx(image_bytes: bytes, label_bytes: bytes, num_classes: int = 10) -> Dataset:
    magic, count, rows, cols = _read_header(image_bytes, 4, "images")
    if magic != IMAGES_MAGIC:
        raise FormatError(f"images: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}", 0)
    size = count * rows * cols
    if len(image_bytes) < 16 + size:
        raise FormatError(
            f"images: truncated pixel data, need {16 + size} bytes", len(image_bytes)
        )
    lmagic, lcount = _read_header(label_bytes, 2, "labels")
    if lmagic != LABELS_MAGIC:
        raise FormatError(f"labels: bad magic 0x{lmagic:08x}, expected 0x{LABELS_MAGIC:08x}", 0)
    if lcount != count:
        raise FormatError(f"labels: count {lcount} does not match {count} images", 4)
    if len(label_bytes) < 8 + lcount:
        raise FormatError(f"labels: truncated, need {8 + lcount} bytes", len(label_bytes))
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=size, offset=16)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=lcount, offset=8)
    if lcount and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise FormatError(f"labels: value {labels[bad]} >= {num_classes}", 8 + bad)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    images_path, labels_path = Path(images_path), Path(labels_path)
    for p in (images_path, labels_path):
        if not p.is_file():
            raise ConfigError(f"IDX file not found: {p}")
    return parse_idx(images_path.read_bytes(), labels_path.read_bytes(), num_classes)


def to_idx_bytes(dataset: Dataset, rows: int, cols: int) -> tuple[bytes, bytes]:
    """Encode as (images, labels) IDX bytes; features are rounded to k/255."""
    if rows * cols != dataset.dims:
        raise ConfigError(f"{rows}x{cols} does not match {dataset.dims} features")
    if dataset.num_classes > 256:
        raise ConfigError("IDX labels are single bytes")
    n = len(dataset)
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    images = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    labels = struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    return images, labels


# ---------------------------------------------------------------------- partitioning


def partition_iid(dataset: Dataset, num_workers: int, per_worker: int, seed) -> list[Partition]:
    """Disjoint uniform samples without replacement."""
    if num_workers <= 0 or per_worker <= 0:
        raise ConfigError("num_workers and per_worker must be positive")
    need = num_workers * per_worker
    if need > len(dataset):
        raise ConfigError(
            f"IID partition needs {need} samples, dataset has {len(dataset)}"
        )
    order = np.random.default_rng(seed).permutation(len(dataset))[:need]
    return [
        Partition(w, order[w * per_worker:(w + 1) * per_worker].copy())
        for w in range(num_workers)
    ]


def partition_label_skew(
    dataset: Dataset, num_workers: int, per_worker: int, seed
) -> list[Partition]:
    """Worker ``w`` gets ``per_worker`` samples of class ``w % num_classes`` only.

    Workers sharing a class draw disjoint slices of that class's shuffled pool.
    """
    if num_workers <= 0 or per_worker <= 0:
        raise ConfigError("num_workers and per_worker must be positive")
    rng = np.random.default_rng(seed)
    pools = [
        rng.permutation(np.flatnonzero(dataset.labels == c))
        for c in range(dataset.num_classes)
    ]
    used = [0] * dataset.num_classes
    parts = []
    for w in range(num_workers):
        c = w % dataset.num_classes
        start = used[c]
        if start + per_worker > pools[c].size:
            raise ConfigError(
                f"class {c} exhausted: worker {w} needs {per_worker} samples, "
                f"{pools[c].size - start} left"
            )
        parts.append(Partition(w, pools[c][start:start + per_worker].copy()))
        used[c] = start + per_worker
    return parts


def next_batch(
    dataset: Dataset, partition: Partition, batch_size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``batch_size`` of the partition's rows without replacement.

    ``rng`` is advanced in place; its state fully determines the batch.
    """
    if not 0 < batch_size <= len(partition):
        raise ConfigError(
            f"batch size {batch_size} invalid for partition of {len(partition)}"
        )
    pick = partition.sample_indices[rng.choice(len(partition), batch_size, replace=False)]
    return dataset.features[pick], dataset.labels[pick]
