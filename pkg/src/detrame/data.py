"""Datasets: IDX ingestion, two-moons generation, feature standardization."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
MAX_IDX_ELEMENTS = 2**31


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxDimensionError(IdxError):
    pass


class LabelRangeError(IdxError):
    pass


@dataclass
class Dataset:
    """Samples first: ``X`` is ``(N, features)`` or ``(N, C, H, W)``."""

    X: np.ndarray
    y: np.ndarray
    split: str = "train"
    provenance: str = ""
    class_count: Optional[int] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y).astype(np.int64)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} samples but {self.y.shape[0]} labels")
        if self.class_count is None:
            self.class_count = int(self.y.max()) + 1 if len(self.y) else 0
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise LabelRangeError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.y)


def _read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: missing magic number")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"{path}: header needs {head} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}i", raw[4:head])
    count = 1
    for d in dims:
        if d < 0:
            raise IdxDimensionError(f"{path}: negative dimension {d}")
        count *= d
        if count > MAX_IDX_ELEMENTS:
            raise IdxDimensionError(f"{path}: dimensions {dims} overflow")
    if len(raw) - head < count:
        raise IdxTruncatedError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path, labels_path, class_count: int = 10, split: str = "train",
             flatten: bool = True) -> Dataset:
    """Unsigned-byte IDX pair -> Dataset with pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxDimensionError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= class_count:
        raise LabelRangeError(f"label {int(labels.max())} outside [0, {class_count})")
    X = images.astype(np.float64) / 255.0
    X = X.reshape(len(X), -1) if flatten else X[:, None]
    return Dataset(X, labels, split, f"idx:{images_path}", class_count)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array in IDX format (magic 0x08 type code + ndim)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">i", magic))
        f.write(struct.pack(f">{array.ndim}i", *array.shape))
        f.write(array.tobytes())


def gen_two_moons(n: int, noise: float = 0.1, seed: int = 0, split: str = "train") -> Dataset:
    """Two interleaved half circles, ``n`` points per class."""
    if n < 1 or noise < 0:
        raise ValueError("need n >= 1 and noise >= 0")
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.0, np.pi, n)
    t1 = rng.uniform(0.0, np.pi, n)
    X = np.concatenate([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    X = X + noise * rng.standard_normal(X.shape)
    y = np.repeat([0, 1], n)
    return Dataset(X, y, split, f"two_moons(n={n}, noise={noise}, seed={seed})", 2)


def standardize(train: np.ndarray, *others: np.ndarray):
    """Per-feature standardization fitted on ``train``; returns (mean, std, train', others')."""
    axes = 0
    mean = train.mean(axis=axes)
    std = train.std(axis=axes)
    std = np.where(std > 0, std, 1.0)
    return mean, std, (train - mean) / std, [(o - mean) / std for o in others]
