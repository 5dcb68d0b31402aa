"""Dataset ingestion and spike coding.

IDX ingestion (optionally gzipped), Bernoulli rate coding of static
images, a repeated analog-drive mode for real-valued inputs, and a
deterministic Gaussian-blob generator for desk-scale runs.
"""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, InputError, ParameterError
from .rng import STREAM_BLOBS, philox

IDX_MAGIC_IMAGES = 2051
IDX_MAGIC_LABELS = 2049

# normalization constants per dataset (analog-input mode only; the rate
# coder always consumes raw [0,1] pixels)
DATASETS = {
    "mnist": {"mean": 0.1307, "std": 0.3081},
    "fashion": {"mean": 0.2860, "std": 0.3530},
}

_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray  # [N, n] float64
    labels: np.ndarray  # [N] int64
    mean: float = 0.0
    std: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise InputError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.images)

    def subset(self, n: int) -> "Dataset":
        """First-n deterministic subset."""
        return Dataset(self.images[:n], self.labels[:n], self.mean, self.std, self.name)


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(path):
    """Parse one big-endian IDX file.

    Returns images as [N, rows*cols] float64 scaled to [0,1] by /255
    (magic 2051) or labels as [N] int64 (magic 2049).  Gzip is handled
    transparently.  Bad magic raises DataFormatError; short reads raise
    OSError.
    """
    with _open_maybe_gzip(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise OSError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">I", head)
        if magic == IDX_MAGIC_IMAGES:
            dims = fh.read(12)
            if len(dims) < 12:
                raise OSError(f"{path}: truncated IDX dimensions")
            n, rows, cols = struct.unpack(">III", dims)
            raw = fh.read(n * rows * cols)
            if len(raw) < n * rows * cols:
                raise OSError(f"{path}: truncated IDX payload")
            pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
            return pixels.reshape(n, rows * cols)
        if magic == IDX_MAGIC_LABELS:
            dims = fh.read(4)
            if len(dims) < 4:
                raise OSError(f"{path}: truncated IDX dimensions")
            (n,) = struct.unpack(">I", dims)
            raw = fh.read(n)
            if len(raw) < n:
                raise OSError(f"{path}: truncated IDX payload")
            return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
        raise DataFormatError(f"{path}: unexpected IDX magic {magic}")


def _find_idx(data_dir, dataset, base):
    for sub in (os.path.join(data_dir, dataset), data_dir):
        for name in (base, base + ".gz"):
            candidate = os.path.join(sub, name)
            if os.path.isfile(candidate):
                return candidate
    return None


def resolve_data_dir(explicit=None):
    return explicit or os.environ.get("ULTRASNN_DATA_DIR") or "data"


def dataset_available(dataset: str, data_dir=None) -> bool:
    data_dir = resolve_data_dir(data_dir)
    return all(
        _find_idx(data_dir, dataset, base) is not None
        for pair in _SPLIT_FILES.values()
        for base in pair
    )


def load_idx_dataset(dataset: str, split: str, data_dir=None) -> Dataset:
    """Load one split of an IDX-file dataset from the cache directory.

    Files are searched as <dir>/<dataset>/<name>[.gz] then
    <dir>/<name>[.gz] with the conventional train/t10k names.
    """
    if dataset not in DATASETS:
        raise DataFormatError(f"unknown IDX dataset {dataset!r}")
    data_dir = resolve_data_dir(data_dir)
    img_base, lab_base = _SPLIT_FILES[split]
    img_path = _find_idx(data_dir, dataset, img_base)
    lab_path = _find_idx(data_dir, dataset, lab_base)
    if img_path is None or lab_path is None:
        raise OSError(
            f"{dataset} IDX files not found under {data_dir!r} "
            f"(expected {img_base}[.gz] and {lab_base}[.gz])"
        )
    images = load_idx(img_path)
    labels = load_idx(lab_path)
    norm = DATASETS[dataset]
    return Dataset(images, labels, mean=norm["mean"], std=norm["std"], name=dataset)


def rate_encode(images, timesteps: int, gain: float = 0.5, rng=None) -> np.ndarray:
    """Bernoulli rate coding: spike(t, pixel) ~ Bernoulli(gain * x).

    Each (t, pixel) draw is independent and comes from the supplied
    generator (use rng.philox(seed, STREAM_ENCODE, epoch, batch) for the
    documented reproducible stream).  Returns [T, batch, n] in {0,1}.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.size:
        if images.min() < 0.0 or images.max() > 1.0:
            raise ParameterError("rate coding requires pixel values in [0, 1]")
        if gain * images.max() > 1.0:
            raise ParameterError(f"gain {gain} pushes spike probability above 1")
    p = gain * images
    if rng is None:
        rng = np.random.default_rng()
    draws = rng.random(size=(timesteps,) + images.shape)
    return (draws < p).astype(np.float64)


def analog_encode(images, timesteps: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Repeat normalized real-valued drive at every timestep.

    The documented alternative to rate coding: the first layer receives
    (x - mean)/std as input current, T identical frames.
    """
    images = np.asarray(images, dtype=np.float64)
    x = (images - mean) / std
    return np.repeat(x[None, :, :], timesteps, axis=0)


def make_blobs(classes: int, per_class: int, dim: int, seed: int,
               spread: float = 0.25) -> Dataset:
    """Gaussian blobs on the unit circle (first two dims), linearly
    separable for spread well below the ~2*sin(pi/C) center spacing.

    Deterministic in (classes, per_class, dim, seed, spread); class k is
    centred at (cos(2*pi*k/C), sin(2*pi*k/C), 0, ...).
    """
    if dim < 1:
        raise ParameterError("dim must be >= 1")
    centers = np.zeros((classes, dim))
    for k in range(classes):
        angle = 2.0 * math.pi * k / classes
        centers[k, 0] = math.cos(angle)
        if dim > 1:
            centers[k, 1] = math.sin(angle)
    rng = philox(seed, STREAM_BLOBS)
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(0.0, spread, size=(n, dim))
    images = centers[labels] + noise
    return Dataset(images, labels, mean=0.0, std=1.0, name="blobs")
