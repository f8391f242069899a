"""Toy 2-D datasets and an IDX (MNIST-format) reader."""

from __future__ import annotations

import csv
import gzip
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadMagicError, CountMismatchError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # one of SPLITS per sample
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (N, d) with N labels")
        if self.split.shape != self.labels.shape:
            raise ValueError("one split tag per sample required")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, tag: str) -> "Dataset":
        mask = self.split == tag
        return Dataset(self.features[mask], self.labels[mask], self.split[mask], self.lo, self.hi)

    def xy(self, tag: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        ds = self if tag is None else self.subset(tag)
        return ds.features, ds.labels

    def to_csv(self) -> str:
        return dataset_to_csv(self)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((x - lo) / span, 0.0, 1.0)


def stratified_split(labels: np.ndarray, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> np.ndarray:
    """Per-class shuffle then cut into train/val/test; every class gets a train sample."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be 3 nonnegative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    tags = np.empty(len(labels), dtype=object)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_train = max(1, int(round(fractions[0] * len(idx))))
        n_val = min(len(idx) - n_train, int(round(fractions[1] * len(idx))))
        tags[idx[:n_train]] = "train"
        tags[idx[n_train:n_train + n_val]] = "val"
        tags[idx[n_train + n_val:]] = "test"
    return tags.astype(str)


def make_spirals(
    n_per_class: int,
    classes: int = 2,
    noise: float = 0.0,
    seed: int = 0,
    turns: float = 1.0,
    fractions=DEFAULT_FRACTIONS,
) -> Dataset:
    """Interleaved Archimedean spirals r = t, angle = 2 pi (turns t + k / classes)."""
    if n_per_class < 1 or classes < 1:
        raise ValueError("need n_per_class >= 1 and classes >= 1")
    rng = np.random.default_rng(seed)
    t = 0.1 + 0.9 * (np.arange(n_per_class) + 0.5) / n_per_class
    feats, labels = [], []
    for k in range(classes):
        angle = 2.0 * np.pi * (turns * t + k / classes)
        pts = np.stack([t * np.cos(angle), t * np.sin(angle)], axis=1)
        feats.append(pts)
        labels.append(np.full(n_per_class, k))
    x = np.concatenate(feats)
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    y = np.concatenate(labels).astype(np.int64)
    return Dataset(_minmax(x), y, stratified_split(y, fractions, seed))


def make_circles(
    n: int,
    gap: float = 0.5,
    noise: float = 0.0,
    seed: int = 0,
    fractions=DEFAULT_FRACTIONS,
) -> Dataset:
    """Two concentric rings of radius 1 (class 0) and 1 + gap (class 1)."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    y = np.concatenate([np.zeros(n0), np.ones(n - n0)]).astype(np.int64)
    radius = 1.0 + gap * y
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    x = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    return Dataset(_minmax(x), y, stratified_split(y, fractions, seed))


# --- IDX --------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: payload has {len(raw) - header} bytes, header declares {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, limit: int | None = None, fractions=None, seed: int = 0) -> Dataset:
    """MNIST-style images/labels as flattened features scaled to [0, 1].

    The first ``limit`` samples in file order are kept. Without ``fractions``
    every sample is tagged ``train``.
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    split = np.full(len(y), "train") if fractions is None else stratified_split(y, fractions, seed)
    return Dataset(x, y, split)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array in IDX format (used to build fixtures)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    Path(path).write_bytes(struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes())


# --- CSV --------------------------------------------------------------------


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label"] + [f"f{i}" for i in range(ds.dim)])
    for label, row in zip(ds.labels, ds.features):
        writer.writerow([int(label)] + [repr(float(v)) for v in row])
    return buf.getvalue()


def dataset_from_csv(text: str, split: Sequence[str] | None = None) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))[1:]
    y = np.array([int(r[0]) for r in rows], dtype=np.int64)
    x = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    tags = np.full(len(y), "train") if split is None else np.asarray(split)
    return Dataset(x.reshape(len(y), -1), y, tags)
