"""Datasets: IDX (MNIST) ingestion, tiny subsets, synthetic blobs, batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .tensor import make_rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # (n_samples, *sample_shape), values in [0, 1]
    labels: np.ndarray  # (n_samples,) int64
    split: str = "train"
    n_classes: Optional[int] = None

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.inputs.shape[0] != self.labels.size:
            raise ValueError(f"{self.inputs.shape[0]} inputs but {self.labels.size} labels")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self):
        return self.labels.size

    @property
    def sample_shape(self) -> tuple:
        return self.inputs.shape[1:]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.split, self.n_classes)

    def reshaped(self, sample_shape) -> "Dataset":
        return Dataset(self.inputs.reshape((len(self),) + tuple(sample_shape)), self.labels, self.split, self.n_classes)


# -- IDX ----------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    return gzip.decompress(raw) if raw[:2] == GZIP_MAGIC else raw


def parse_idx(raw: bytes, expected_magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX payload into a uint8 array of the declared shape."""
    if len(raw) < 4:
        raise IdxTruncatedError("IDX header truncated")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError("IDX dimension header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxTruncatedError(f"IDX payload has {len(raw) - header} bytes, dimensions {dims} need {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train", n_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair (optionally gzip-compressed).

    Pixels are scaled by 1/255 and gain a leading channel axis, so a file of
    ``n x 28 x 28`` images yields inputs of shape ``(n, 1, 28, 28)``.
    """
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.astype(np.float64)[:, None] / 255.0
    return Dataset(inputs, labels.astype(np.int64), split, n_classes)


def encode_idx(array: np.ndarray) -> bytes:
    """Serialize a uint8 array as IDX (image magic for 3-D, label magic for 1-D)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def write_idx(path, array: np.ndarray) -> None:
    payload = encode_idx(array)
    if str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    with open(path, "wb") as f:
        f.write(payload)


def holdout_split(ds: Dataset, n_holdout: int) -> tuple:
    """Split off the last ``n_holdout`` samples as a validation set."""
    n = len(ds) - n_holdout
    train = ds.subset(np.arange(n))
    val = ds.subset(np.arange(n, len(ds)))
    val.split = "val"
    return train, val


# -- subsets and synthetic data -----------------------------------------------

def tiny_subset(ds: Dataset, per_class: int, seed: int) -> Dataset:
    """Seeded pick of exactly ``per_class`` samples of every class.

    The picked samples keep their relative order from ``ds``.
    """
    order = make_rng(seed).permutation(len(ds))
    chosen = []
    for c in range(ds.n_classes):
        members = order[ds.labels[order] == c]
        if members.size < per_class:
            raise ValueError(f"class {c} has {members.size} samples, need {per_class}")
        chosen.append(members[:per_class])
    return ds.subset(np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64))


def synth_blobs(classes: int, per_class: int, dim: int, separation: float, seed: int, sigma: float = 0.05) -> Dataset:
    """Gaussian clusters with std ``sigma`` whose neighbouring centres sit
    ``separation * sigma`` apart along a random diagonal, clamped to [0, 1]."""
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = make_rng(seed)
    direction = rng.choice([-1.0, 1.0], size=dim) / np.sqrt(dim)
    offsets = (np.arange(classes) - (classes - 1) / 2) * separation * sigma
    centres = 0.5 + offsets[:, None] * direction[None, :]
    labels = np.repeat(np.arange(classes), per_class)
    points = centres[labels] + sigma * rng.standard_normal((labels.size, dim))
    return Dataset(np.clip(points, 0.0, 1.0), labels, "train", classes)


# -- batching -----------------------------------------------------------------

def batch_indices(n: int, batch_size: int, epoch_seed) -> list:
    """Seeded shuffle of ``range(n)`` cut into batches; the short last batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = make_rng(epoch_seed).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(ds: Dataset, batch_size: int, epoch_seed) -> list:
    return [(ds.inputs[idx], ds.labels[idx]) for idx in batch_indices(len(ds), batch_size, epoch_seed)]


def batch_stream(n: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Endless index batches, reshuffled each epoch with epoch seed ``(seed, epoch)``."""
    epoch = 0
    while True:
        yield from batch_indices(n, batch_size, (seed, epoch))
        epoch += 1
