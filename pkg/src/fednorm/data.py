"""Datasets and client partitioning.

Covers three sources of client shards: synthetic Gaussian blobs, IDX image
files (the ubiquitous big-endian handwritten-digit layout) and two partition
schemes, a Dirichlet draw over class proportions and an explicit label split.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 2051  # 0x00000803
IDX_LABEL_MAGIC = 2049  # 0x00000801


@dataclass
class Dataset:
    """Feature matrix (N, d) float64 with integer labels in [0, class_count)."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if len(self.features) == 0:
            raise ValueError("dataset must contain at least one sample")
        if self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(
                f"labels must lie in [0, {self.class_count}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.class_count)


@dataclass
class PartitionPlan:
    """Per-client index arrays; pairwise disjoint, each non-empty."""

    assignments: list[np.ndarray]

    def __post_init__(self):
        self.assignments = [
            np.asarray(a, dtype=np.int64) for a in self.assignments
        ]
        for r, a in enumerate(self.assignments):
            if a.size == 0:
                raise ValueError(f"client {r} received an empty shard")
        merged = np.concatenate(self.assignments)
        if len(np.unique(merged)) != len(merged):
            raise ValueError("client shards overlap")

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


@dataclass(frozen=True)
class DirichletConfig:
    """Knobs of the Dirichlet label-skew partitioner."""

    alpha: float
    clients: int
    min_samples_per_client: int = 64
    max_redraws: int = 100

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.clients < 2:
            raise ValueError(f"dirichlet partitioning needs >= 2 clients, got {self.clients}")
        if self.min_samples_per_client < 1:
            raise ValueError(
                f"min_samples_per_client must be >= 1, got {self.min_samples_per_client}"
            )
        if self.max_redraws < 0:
            raise ValueError(f"max_redraws must be >= 0, got {self.max_redraws}")


def generate_synthetic(
    classes: int, dims: int, per_class: int, spread: float, seed: int
) -> Dataset:
    """Isotropic Gaussian blobs around unit-direction class centers.

    Class centers are random unit vectors scaled by ``spread``; samples add
    standard normal noise.  Larger spread means more separable classes.
    """
    if classes < 2:
        raise ValueError(f"need >= 2 classes, got {classes}")
    if dims < 2 or per_class < 1:
        raise ValueError(f"need dims >= 2 and per_class >= 1, got {dims}, {per_class}")
    if not spread > 0:
        raise ValueError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(classes, dims))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spread
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(size=(classes * per_class, dims))
    return Dataset(centers[labels] + noise, labels, classes)


def _read_idx_header(raw: bytes, path: Path, expected_magic: int, ndim: int):
    header = 4 * (1 + ndim)
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    fields = struct.unpack(f">{1 + ndim}I", raw[:header])
    if fields[0] != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic {fields[0]}, expected {expected_magic}"
        )
    return fields[1:], header


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label file pair into flat [0, 1] feature rows.

    Images are flattened row-major and scaled by 1/255.  Errors out on wrong
    magic numbers, truncated payloads, a count mismatch between the two files
    and on empty files.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw = images_path.read_bytes()
    (count, rows, cols), header = _read_idx_header(raw, images_path, IDX_IMAGE_MAGIC, 3)
    expected = header + count * rows * cols
    if len(raw) < expected:
        raise ValueError(
            f"{images_path}: truncated pixel data, {len(raw)} bytes < {expected}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=header)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    raw = labels_path.read_bytes()
    (label_count,), header = _read_idx_header(raw, labels_path, IDX_LABEL_MAGIC, 1)
    if len(raw) < header + label_count:
        raise ValueError(f"{labels_path}: truncated label data")
    labels = np.frombuffer(raw, dtype=np.uint8, count=label_count, offset=header)

    if count != label_count:
        raise ValueError(
            f"image/label count mismatch: {count} images vs {label_count} labels"
        )
    if count == 0:
        raise ValueError(f"{images_path}: file contains no images")
    return Dataset(features, labels.astype(np.int64), int(labels.max()) + 1)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, proportional with largest remainders."""
    exact = proportions * total
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def partition_dirichlet(dataset: Dataset, cfg: DirichletConfig, seed: int) -> PartitionPlan:
    """Label-skewed shards: per class, client shares are drawn Dir(alpha).

    The whole plan is redrawn (up to ``max_redraws`` extra attempts) until
    every client holds at least ``min_samples_per_client`` samples.
    """
    rng = np.random.default_rng(seed)
    if cfg.clients * cfg.min_samples_per_client > len(dataset):
        raise ValueError(
            f"cannot give {cfg.clients} clients {cfg.min_samples_per_client} samples "
            f"each from {len(dataset)} total"
        )
    for _ in range(cfg.max_redraws + 1):
        buckets: list[list[np.ndarray]] = [[] for _ in range(cfg.clients)]
        for c in range(dataset.class_count):
            idx = np.flatnonzero(dataset.labels == c)
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            shares = rng.dirichlet(np.full(cfg.clients, cfg.alpha))
            counts = _largest_remainder(shares, idx.size)
            for r, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
                buckets[r].append(chunk)
        sizes = [sum(len(c) for c in b) for b in buckets]
        if min(sizes) >= cfg.min_samples_per_client:
            return PartitionPlan([np.sort(np.concatenate(b)) for b in buckets])
    raise ValueError(
        f"no draw satisfied min_samples_per_client={cfg.min_samples_per_client} "
        f"after {cfg.max_redraws + 1} attempts (alpha={cfg.alpha}, clients={cfg.clients})"
    )


def partition_label_split(dataset: Dataset, groups) -> PartitionPlan:
    """Deterministic split by explicit class groups, one group per client.

    Groups must be pairwise identical or disjoint.  A class group shared by
    several clients is dealt out round-robin over the sorted sample indices,
    so sharers receive near-equal, non-overlapping halves/thirds/... of it.
    """
    sets = [frozenset(int(c) for c in g) for g in groups]
    if not sets:
        raise ValueError("need at least one class group")
    for r, s in enumerate(sets):
        if not s:
            raise ValueError(f"class group of client {r} is empty")
        bad = [c for c in s if c < 0 or c >= dataset.class_count]
        if bad:
            raise ValueError(
                f"class group of client {r} references unknown classes {sorted(bad)}"
            )
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            if sets[i] != sets[j] and sets[i] & sets[j]:
                raise ValueError(
                    f"class groups of clients {i} and {j} overlap partially; "
                    "groups must be identical or disjoint"
                )
    assignments: list[list[int]] = [[] for _ in sets]
    for group in dict.fromkeys(sets):  # unique groups, first-seen order
        sharers = [r for r, s in enumerate(sets) if s == group]
        pool = np.flatnonzero(np.isin(dataset.labels, sorted(group)))
        for pos, sample in enumerate(pool):
            assignments[sharers[pos % len(sharers)]].append(int(sample))
    return PartitionPlan([np.asarray(a, dtype=np.int64) for a in assignments])


def train_test_split(dataset: Dataset, test_fraction: float, seed: int):
    """Shuffled split into (train, test); the test part is held out for eval."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))
