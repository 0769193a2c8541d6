"""Datasets: IDX ingestion, two moons, normalisation and training batches."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Features with integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_index: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(labels) != len(self.features):
            raise ValueError(f"{len(self.features)} examples but {len(labels)} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", labels)
        index = tuple(np.flatnonzero(labels == c) for c in range(self.num_classes))
        object.__setattr__(self, "class_index", index)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    def check_all_classes(self) -> None:
        empty = [c for c, idx in enumerate(self.class_index) if len(idx) == 0]
        if empty:
            raise ValueError(f"classes with no examples: {empty}")

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


# -- IDX ------------------------------------------------------------------
def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated header at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IDXFormatError(
            f"{path}: magic mismatch, expected 0x{expected_magic:08x} got 0x{magic:08x}"
        )
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IDXFormatError(f"{path}: truncated header at offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    size = int(np.prod(dims))
    if len(raw) < header_end + size:
        raise IDXFormatError(
            f"{path}: truncated payload at offset {len(raw)}, expected {header_end + size} bytes"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped) into a dataset.

    Images come back as float32 [n, 1, rows, cols] scaled to [0, 1].
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    features = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(features, labels.astype(np.int64), num_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images [n, rows, cols] and labels [n] in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    for path in (images_path, labels_path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    header = struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *images.shape)
    Path(images_path).write_bytes(header + images.tobytes())
    header = struct.pack(">I", IDX_LABELS_MAGIC) + struct.pack(">I", labels.shape[0])
    Path(labels_path).write_bytes(header + labels.tobytes())


IDX_SPLITS = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(directory, split: str) -> tuple[Path, Path]:
    """Locate the canonical MNIST-style file pair for ``split`` in ``directory``."""
    directory = Path(directory)
    found = []
    for stem in IDX_SPLITS[split]:
        for candidate in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
            if (directory / candidate).exists():
                found.append(directory / candidate)
                break
        else:
            raise FileNotFoundError(f"no {stem}[.gz] under {directory}")
    return found[0], found[1]


def load_idx_dir(directory, split: str) -> Dataset:
    return load_idx(*find_idx_pair(directory, split))


# -- normalisation ---------------------------------------------------------
def channel_stats(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over all pixels of an image dataset."""
    x = dataset.features
    axes = (0,) + tuple(range(2, x.ndim))
    return x.mean(axis=axes, dtype=np.float64), x.std(axis=axes, dtype=np.float64)


def normalize(dataset: Dataset, mean, std) -> Dataset:
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    std = np.atleast_1d(np.asarray(std, dtype=np.float64))
    if np.any(std <= 0):
        raise ValueError("normalisation std must be positive")
    x = dataset.features
    shape = (1, -1) + (1,) * (x.ndim - 2)
    out = ((x - mean.reshape(shape)) / std.reshape(shape)).astype(x.dtype)
    return Dataset(out, dataset.labels, dataset.num_classes)


# -- two moons -------------------------------------------------------------
def generate_two_moons(n: int, noise: float = 0.0, seed=None) -> Dataset:
    """Two interleaving half circles, ``n // 2`` points in class 0 and the rest in class 1."""
    if n < 2:
        raise ValueError("two moons needs n >= 2")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    n_out, n_in = n // 2, n - n // 2
    t_out = np.linspace(0, np.pi, n_out)
    t_in = np.linspace(0, np.pi, n_in)
    x = np.concatenate([np.cos(t_out), 1 - np.cos(t_in)])
    y = np.concatenate([np.sin(t_out), 0.5 - np.sin(t_in)])
    points = np.stack([x, y], axis=1)
    if noise > 0:
        points = points + np.random.default_rng(seed).normal(scale=noise, size=points.shape)
    labels = np.concatenate([np.zeros(n_out, np.int64), np.ones(n_in, np.int64)])
    return Dataset(points, labels, 2)


# -- training batches --------------------------------------------------------
@dataclass(frozen=True)
class TrainingBatch:
    """Anchors plus one class example per class for every anchor.

    ``encode_ids`` lists the dataset indices that go through the backbone
    once: the anchors first, then any examples drawn from outside the batch.
    ``slots[b, c]`` is the row of ``encode_ids`` holding anchor ``b``'s class
    example for class ``c``.
    """

    anchor_ids: np.ndarray
    labels: np.ndarray
    encode_ids: np.ndarray
    slots: np.ndarray

    @property
    def extra_ids(self) -> np.ndarray:
        return self.encode_ids[len(self.anchor_ids):]

    @property
    def class_example_ids(self) -> np.ndarray:
        return self.encode_ids[self.slots]


def make_training_batch(dataset: Dataset, anchor_indices, seed=None) -> TrainingBatch:
    """Pick class examples for each anchor, preferring members of the batch."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    anchors = np.asarray(anchor_indices, dtype=np.int64)
    if anchors.size == 0:
        raise ValueError("a training batch needs at least one anchor")
    dataset.check_all_classes()
    labels = dataset.labels[anchors]
    n_anchor, n_class = len(anchors), dataset.num_classes

    encode_ids = list(anchors)
    extra_pos: dict[int, int] = {}

    def extra(idx: int) -> int:
        if idx not in extra_pos:
            extra_pos[idx] = len(encode_ids)
            encode_ids.append(idx)
        return extra_pos[idx]

    slots = np.empty((n_anchor, n_class), dtype=np.int64)
    for c in range(n_class):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            # missing class: one dataset example shared across the batch
            slots[:, c] = extra(int(rng.choice(dataset.class_index[c])))
            continue
        others = np.flatnonzero(labels != c)
        if others.size:
            slots[others, c] = rng.choice(members, size=others.size)
        if members.size >= 2:
            # own-class slot: any batch member of the class except the anchor itself
            draw = rng.integers(0, members.size - 1, size=members.size)
            draw += draw >= np.arange(members.size)
            slots[members, c] = members[draw]
            continue
        anchor_pos = int(members[0])
        pool = dataset.class_index[c]
        pool = pool[pool != anchors[anchor_pos]]
        # a class with a single training example forces the anchor to be its own example
        slots[anchor_pos, c] = extra(int(rng.choice(pool))) if pool.size else anchor_pos

    return TrainingBatch(anchors, labels, np.asarray(encode_ids, dtype=np.int64), slots)
