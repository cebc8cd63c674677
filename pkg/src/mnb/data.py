"""Desk-scale datasets: Gaussian blobs, IDX image files, labelled CSV."""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .rng import stream

TRAIN = "train"
TEST = "test"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def indices_of(self, classes):
        return np.flatnonzero(np.isin(self.labels, list(classes)))


def gen_blobs(num_classes, dim, n_train_per_class, n_test_per_class, separation, seed):
    """Isotropic unit-variance Gaussian classes around means on a sphere of
    radius ``separation``. Both splits are class-balanced and sorted by class."""
    if not separation > 0:
        raise ValueError("separation must be positive")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    rng = stream(seed, "data")
    means = rng.standard_normal((num_classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n_per, split):
        labels = np.repeat(np.arange(num_classes), n_per)
        x = means[labels] + rng.standard_normal((len(labels), dim))
        return Dataset(x, labels, split, num_classes)

    return draw(n_train_per_class, TRAIN), draw(n_test_per_class, TEST)


def class_order(num_classes, seed):
    """Seeded Fisher-Yates shuffle of ``range(num_classes)``."""
    rng = stream(seed, "shuffle", 0xC1A55)
    order = list(range(num_classes))
    for i in range(num_classes - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def _read_idx(path, expected_magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise DataFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    n = int(np.prod(dims, dtype=np.int64))
    if len(raw) - end != n:
        raise DataFormatError(f"{path}: header promises {n} bytes of data, file has {len(raw) - end}")
    return np.frombuffer(raw, dtype=np.uint8, offset=end).reshape(dims)


def load_idx(images_path, labels_path, split=TRAIN, num_classes=None):
    """Images scaled to [0, 1] and flattened row-major; labels as class ids."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(features, labels, split, num_classes)


def write_idx(images, labels, images_path, labels_path):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(f">{images.ndim}I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_csv(path, split=TRAIN, num_classes=None):
    """CSV with header ``label,f0,f1,...``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise DataFormatError(f"{path}: header must start with 'label'")
        rows = [r for r in reader if r]
    width = len(header)
    for i, r in enumerate(rows, start=2):
        if len(r) != width:
            raise DataFormatError(f"{path}:{i}: expected {width} fields, got {len(r)}")
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    features = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), width - 1)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(features, labels, split, num_classes)
