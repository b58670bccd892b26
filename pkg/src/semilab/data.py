"""Datasets, splits, cycling batch cursors, and the raw on-disk formats.

Two sources: the classic 3073-byte-record binary image batches, and a
seeded synthetic generator whose class patterns are easy enough for the
desk CNN to exceed 90% accuracy fully supervised.  Split construction is
class-balanced; cursors reshuffle with a derived seed each time a pass
over their pool completes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .rng import make_rng

__all__ = [
    "Dataset",
    "SslSplit",
    "BatchCursor",
    "next_batch",
    "load_cifar10_binary",
    "synth_generate",
    "make_ssl_split",
    "save_dataset",
    "load_dataset",
]

DATASET_MAGIC = b"FFDS"

_CIFAR_RECORD = 3073
_CIFAR_PER_FILE = 10000


@dataclass
class Dataset:
    """Images (n, C_in, H, W) in [0, 1]; labels with -1 marking unlabeled."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, C, H, W), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("labels length does not match image count")
        if len(self.images) < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"image values must lie in [0, 1], found [{lo}, {hi}]")
        valid = (self.labels == -1) | (
            (self.labels >= 0) & (self.labels < self.class_count)
        )
        if not valid.all():
            raise ValueError(f"labels must lie in {{-1}} or [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.images)

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel mean and standard deviation over the whole set."""
        mean = self.images.mean(axis=(0, 2, 3))
        std = self.images.std(axis=(0, 2, 3))
        return mean, np.maximum(std, 1e-6)


@dataclass(frozen=True)
class SslSplit:
    """Index sets for one labeled/unlabeled division of a dataset."""

    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray
    seed: int


def load_cifar10_binary(directory, split: str = "train") -> Dataset:
    """Read the binary batch files (1 label byte + 3072 channel-planar pixel
    bytes per record) into a float dataset scaled to [0, 1]."""
    if split == "train":
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")

    images, labels = [], []
    for name in names:
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing batch file {path}")
        size = os.path.getsize(path)
        expected = _CIFAR_RECORD * _CIFAR_PER_FILE
        if size != expected:
            raise ValueError(
                f"batch file {path} has {size} bytes, expected {expected}"
            )
        raw = np.fromfile(path, dtype=np.uint8).reshape(_CIFAR_PER_FILE, _CIFAR_RECORD)
        labels.append(raw[:, 0].astype(np.int64))
        images.append(raw[:, 1:].reshape(-1, 3, 32, 32))
    stacked = np.concatenate(images).astype(np.float32) / 255.0
    return Dataset(
        images=stacked,
        labels=np.concatenate(labels),
        class_count=10,
        name=f"cifar10-{split}",
    )


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """(C, gh, gw) -> (C, height, width) by separable linear interpolation."""
    gh, gw = grid.shape[1:]
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.minimum(ys.astype(np.int64), gh - 2) if gh > 1 else np.zeros(height, np.int64)
    x0 = np.minimum(xs.astype(np.int64), gw - 2) if gw > 1 else np.zeros(width, np.int64)
    fy = (ys - y0).reshape(1, -1, 1)
    fx = (xs - x0).reshape(1, 1, -1)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    top = grid[:, y0][:, :, x0] * (1 - fx) + grid[:, y0][:, :, x1] * fx
    bottom = grid[:, y1][:, :, x0] * (1 - fx) + grid[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bottom * fy


def synth_generate(
    seed: int,
    n: int,
    C: int,
    H: int,
    W: int,
    channels: int = 3,
    noise: float = 0.28,
    pattern_cells: int = 3,
    jitter: int = 1,
) -> Dataset:
    """Class-conditional synthetic images: one smooth base pattern per class,
    randomly flipped, shifted by up to ``jitter`` pixels, plus pixel noise.

    Balanced by construction (sample i belongs to class i mod C) and fully
    determined by the seed.
    """
    if n < C:
        raise ValueError(f"need at least one sample per class (n={n}, C={C})")
    rng = make_rng(seed, "synth")
    bases = np.empty((C, channels, H, W), dtype=np.float64)
    for c in range(C):
        grid = rng.random((channels, pattern_cells, pattern_cells))
        base = _bilinear_upsample(grid, H, W)
        lo, hi = base.min(), base.max()
        span = hi - lo if hi > lo else 1.0
        bases[c] = (base - lo) / span * 0.7 + 0.15

    labels = np.arange(n, dtype=np.int64) % C
    flips = rng.random(n) < 0.5
    shifts = rng.integers(-jitter, jitter + 1, size=(n, 2))
    noise_field = rng.standard_normal((n, channels, H, W)) * noise

    images = bases[labels]
    flipped = images[flips]
    images[flips] = flipped[:, :, :, ::-1]
    for i in range(n):
        dy, dx = shifts[i]
        if dy or dx:
            images[i] = np.roll(images[i], (dy, dx), axis=(1, 2))
    images = np.clip(images + noise_field, 0.0, 1.0)
    return Dataset(
        images=images.astype(np.float32),
        labels=labels,
        class_count=C,
        name=f"synth-s{seed}-n{n}",
    )


def make_ssl_split(
    dataset: Dataset,
    n_labeled: int,
    seed: int,
    labeled_also_unlabeled: bool = True,
) -> SslSplit:
    """Class-balanced labeled subset plus the unlabeled pool.

    By default labeled samples also appear in the unlabeled pool; with the
    flag off the pools are disjoint.
    """
    C = dataset.class_count
    if n_labeled % C:
        raise ValueError(f"n_labeled={n_labeled} is not divisible by {C} classes")
    if n_labeled > len(dataset):
        raise ValueError("n_labeled exceeds dataset size")
    per_class = n_labeled // C
    rng = make_rng(seed, "split")
    chosen = []
    for c in range(C):
        pool = np.flatnonzero(dataset.labels == c)
        if len(pool) < per_class:
            raise ValueError(
                f"class {c} has only {len(pool)} samples, need {per_class}"
            )
        chosen.append(rng.permutation(pool)[:per_class])
    labeled = np.sort(np.concatenate(chosen))
    if labeled_also_unlabeled:
        unlabeled = np.arange(len(dataset), dtype=np.int64)
    else:
        mask = np.ones(len(dataset), dtype=bool)
        mask[labeled] = False
        unlabeled = np.flatnonzero(mask)
    return SslSplit(
        labeled_indices=labeled.astype(np.int64),
        unlabeled_indices=unlabeled.astype(np.int64),
        seed=seed,
    )


class BatchCursor:
    """Endless batch index stream over a fixed pool.

    Draws follow a seeded permutation; when the permutation is exhausted the
    cursor reshuffles with a seed derived from (rng_seed, epoch_counter), so
    every pool member is drawn exactly once per pass.
    """

    def __init__(self, indices, seed: int):
        self.pool = np.asarray(indices, dtype=np.int64)
        if len(self.pool) < 1:
            raise ValueError("cursor pool must be non-empty")
        self.rng_seed = int(seed)
        self.epoch_counter = 0
        self.position = 0
        self.permutation = self._shuffle()

    def _shuffle(self) -> np.ndarray:
        return make_rng(self.rng_seed, "shuffle", self.epoch_counter).permutation(
            self.pool
        )

    def next_batch(self, k: int) -> np.ndarray:
        """The next k indices in permutation order (k=0 gives an empty array)."""
        if k < 0:
            raise ValueError("batch size must be non-negative")
        out = np.empty(k, dtype=np.int64)
        filled = 0
        while filled < k:
            take = min(k - filled, len(self.permutation) - self.position)
            out[filled : filled + take] = self.permutation[
                self.position : self.position + take
            ]
            filled += take
            self.position += take
            if self.position == len(self.permutation):
                self.epoch_counter += 1
                self.permutation = self._shuffle()
                self.position = 0
        return out


def next_batch(cursor: BatchCursor, k: int) -> np.ndarray:
    return cursor.next_batch(k)


def save_dataset(dataset: Dataset, path) -> None:
    """Raw export: magic, (n, C, H, W) u32 header, int32 labels, f32 pixels."""
    n, c, h, w = dataset.images.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IIII", n, c, h, w))
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(dataset.images, dtype="<f4").tobytes())


def load_dataset(path, class_count: int | None = None) -> Dataset:
    """Inverse of :func:`save_dataset`.

    The format does not store the class count; it is inferred from the labels
    unless given explicitly.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DATASET_MAGIC:
        raise ValueError(f"not a dataset file: {path} (bad magic {blob[:4]!r})")
    if len(blob) < 20:
        raise ValueError(f"truncated dataset file: {path}")
    n, c, h, w = struct.unpack_from("<IIII", blob, 4)
    labels_end = 20 + 4 * n
    pixels_end = labels_end + 4 * n * c * h * w
    if len(blob) != pixels_end:
        raise ValueError(
            f"dataset file {path} has {len(blob)} bytes, expected {pixels_end}"
        )
    labels = np.frombuffer(blob, dtype="<i4", count=n, offset=20).astype(np.int64)
    images = (
        np.frombuffer(blob, dtype="<f4", count=n * c * h * w, offset=labels_end)
        .reshape(n, c, h, w)
        .astype(np.float32)
    )
    if class_count is None:
        class_count = max(int(labels.max()) + 1, 1)
    stem = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Dataset(images=images, labels=labels, class_count=class_count, name=stem)
