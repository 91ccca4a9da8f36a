"""Labeled datasets: synthetic corrupted blobs and IDX (MNIST-format) files."""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
_UBYTE = 0x08
MAX_IDX_ENTRIES = 1 << 31


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int
    corruption_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be an n x d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("need exactly one label per feature row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx):
        mask = None if self.corruption_mask is None else self.corruption_mask[idx]
        return LabeledDataset(self.features[idx], self.labels[idx], self.classes, mask)


def gaussian_blobs(rng, n, d, classes, separation=2.0, means=None):
    """Gaussian blobs with class counts differing by at most one.

    Returns ``(features, labels, means)``.
    """
    if n < 1 or classes < 1:
        raise ValueError("need n >= 1 and classes >= 1")
    if means is None:
        means = separation * rng.standard_normal((classes, d))
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]
    features = means[labels] + rng.standard_normal((n, d))
    return features, labels.astype(np.int64), means


def corrupt_labels(rng, labels, classes, corruption_rate):
    """Replace each label with probability ``corruption_rate`` by a uniform draw."""
    if not 0.0 <= corruption_rate <= 1.0:
        raise ValueError("corruption_rate must lie in [0, 1]")
    n = labels.shape[0]
    mask = rng.random(n) < corruption_rate
    new = labels.copy()
    new[mask] = rng.integers(0, classes, size=int(mask.sum()))
    return new, mask


def gen_corrupted_dataset(rng, n, d, classes, corruption_rate, separation=2.0, means=None):
    features, labels, _ = gaussian_blobs(rng, n, d, classes, separation, means)
    labels, mask = corrupt_labels(rng, labels, classes, corruption_rate)
    return LabeledDataset(features, labels, classes, mask)


# ------------------------------------------------------------------ IDX files


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxDimensionError(IdxFormatError):
    pass


def read_idx(path, expected_magic=None):
    """Read an unsigned-byte IDX file into an integer array of its stored shape."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the 4-byte magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if (magic >> 16) != 0 or ((magic >> 8) & 0xFF) != _UBYTE:
        raise IdxMagicError(f"{path}: unsupported IDX magic 0x{magic:08x} (only unsigned bytes)")
    ndim = magic & 0xFF
    if ndim == 0:
        raise IdxDimensionError(f"{path}: IDX file declares zero dimensions")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = 1
    for size in dims:
        total *= size
        if total > MAX_IDX_ENTRIES:
            raise IdxDimensionError(f"{path}: dimensions {dims} overflow the {MAX_IDX_ENTRIES} entry limit")
    if len(raw) - header < total:
        raise IdxTruncatedError(f"{path}: expected {total} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=total, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("only uint8 arrays can be written as IDX")
    magic = (_UBYTE << 8) | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array).tobytes())


def load_idx(path):
    """Load an IDX image file (rows flattened, scaled to [0, 1]) or a label file."""
    arr = read_idx(path)
    if arr.ndim == 1:
        return arr.astype(np.int64)
    if arr.ndim != 3:
        raise IdxDimensionError(f"{path}: expected 1 (labels) or 3 (images) dimensions, got {arr.ndim}")
    return arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0


def load_idx_dataset(images_path, labels_path, classes=10):
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.ndim != 3:
        raise IdxDimensionError(f"{images_path}: image files must have 3 dimensions")
    if labels.shape[0] != images.shape[0]:
        raise IdxDimensionError("image and label files disagree on the number of examples")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), classes)
