"""Labelled datasets: IDX and CSV files, and synthetic Gaussian blobs."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import DomainError, ParseError

__all__ = [
    "ParseError",
    "LabeledDataset",
    "read_idx",
    "write_idx",
    "load_mnist",
    "read_csv_dataset",
    "write_csv_dataset",
    "synth_blobs",
    "IDX_IMAGES",
    "IDX_LABELS",
]

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class LabeledDataset:
    """``features`` is ``(m, d)``; labels are 0-based classes or +-1."""

    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.features = np.ascontiguousarray(np.atleast_2d(np.asarray(self.features, dtype=np.float64)))
        self.labels = np.asarray(self.labels).astype(np.int64).ravel()
        if self.split not in ("train", "test"):
            raise DomainError(f"split must be 'train' or 'test', got {self.split!r}")
        m = self.features.shape[0]
        if m < 1 or self.labels.shape != (m,):
            raise DomainError("need at least one sample and one label per row")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("features must be finite")
        if self.binary:
            return
        if np.any(self.labels < 0):
            raise DomainError("class labels must be 0-based (or +1/-1 for binary data)")

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def binary(self) -> bool:
        """Labels are +-1 (and at least one is -1)."""
        return bool(np.all(np.isin(self.labels, (-1, 1))) and np.any(self.labels == -1))

    @property
    def classes(self) -> int:
        """Number of score outputs a model needs: 1 for binary data."""
        return 1 if self.binary else int(self.labels.max()) + 1

    def head(self, m: int) -> "LabeledDataset":
        """The first ``m`` samples."""
        if not 1 <= m <= self.m:
            raise DomainError(f"requested {m} samples from a dataset of {self.m}")
        return LabeledDataset(self.features[:m], self.labels[:m], self.split)


# --- IDX -----------------------------------------------------------------------


def _parse_idx(data: bytes):
    if len(data) < 4:
        raise ParseError("truncated IDX header", len(data) if data else 0)
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_IMAGES:
        ndim = 3
    elif magic == IDX_LABELS:
        ndim = 1
    else:
        raise ParseError(f"bad IDX magic 0x{magic:08x}", 0)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ParseError("truncated IDX dimension table", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = header + math.prod(dims)
    if len(data) < expected:
        raise ParseError(f"truncated IDX payload: header promises {math.prod(dims)} bytes", len(data))
    if len(data) > expected:
        raise ParseError("IDX payload longer than its dimensions", expected)
    payload = np.frombuffer(data, dtype=np.uint8, offset=header)
    return magic, dims, payload


def read_idx(path, classes: int | None = None) -> np.ndarray:
    """Read an IDX file of u8 images or labels.

    Images come back as an ``(n, rows * cols)`` float matrix scaled by 1/255;
    labels as an int64 vector, checked against ``classes`` when given.
    """
    data = Path(path).read_bytes()
    magic, dims, payload = _parse_idx(data)
    if magic == IDX_IMAGES:
        return payload.reshape(dims[0], dims[1] * dims[2]).astype(np.float64) / 255.0
    labels = payload.astype(np.int64)
    if classes is not None and labels.size and labels.max() >= classes:
        bad = int(np.argmax(labels >= classes))
        raise ParseError(f"label {labels[bad]} out of range for {classes} classes", 8 + bad)
    return labels


def write_idx(path, array) -> None:
    """Write u8 data as IDX: a 1-D label vector or an ``(n, rows, cols)`` stack."""
    arr = np.asarray(array)
    if arr.ndim == 1:
        magic = IDX_LABELS
    elif arr.ndim == 3:
        magic = IDX_IMAGES
    else:
        raise DomainError("IDX output needs a 1-D or 3-D array")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise DomainError("IDX values must fit in u8")
    head = struct.pack(f">I{arr.ndim}I", magic, *arr.shape)
    Path(path).write_bytes(head + arr.astype(np.uint8).tobytes())


def load_mnist(images_path, labels_path, split: str = "train", classes: int = 10) -> LabeledDataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path, classes=classes)
    if images.ndim != 2 or labels.ndim != 1:
        raise DomainError("expected an image file and a label file")
    if images.shape[0] != labels.shape[0]:
        raise DomainError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return LabeledDataset(images, labels, split)


# --- CSV -----------------------------------------------------------------------


def read_csv_dataset(path, split: str = "train") -> LabeledDataset:
    """CSV with a mandatory header; the column named ``label`` holds labels."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty CSV file, header row is mandatory", 0) from None
        if "label" not in header:
            raise ParseError("CSV header has no 'label' column", 1)
        li = header.index("label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                labels.append(int(row[li]))
                feats.append([float(v) for j, v in enumerate(row) if j != li])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    if not feats:
        raise ParseError("CSV file has no data rows", 2)
    return LabeledDataset(np.array(feats), np.array(labels), split)


def write_csv_dataset(path, dataset: LabeledDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(dataset.dim)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


# --- synthetic -----------------------------------------------------------------


def blob_means(classes: int, d: int, separation: float) -> np.ndarray:
    """Centred class means.

    With ``classes <= d`` the means are scaled basis vectors, pairwise
    ``separation`` apart; otherwise they sit on a circle in the first two
    coordinates with neighbours ``separation`` apart.
    """
    if classes <= d:
        means = np.eye(classes, d) * (separation / math.sqrt(2.0))
    else:
        if d < 2:
            raise DomainError("more classes than dimensions needs d >= 2")
        radius = separation / (2.0 * math.sin(math.pi / classes)) if classes > 1 else 0.0
        angles = 2.0 * math.pi * np.arange(classes) / classes
        means = np.zeros((classes, d))
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means - means.mean(axis=0)


def synth_blobs(classes: int, per_class: int, d: int, separation: float, seed: int,
                split: str = "train", binary: bool = False) -> LabeledDataset:
    """Isotropic unit-variance Gaussian blobs, rows in random order.

    ``binary=True`` (two classes only) relabels class 0 as +1 and class 1 as -1.
    """
    if classes < 1 or per_class < 1 or d < 1:
        raise DomainError("classes, per_class and d must be positive")
    if separation < 0:
        raise DomainError("separation must be nonnegative")
    if binary and classes != 2:
        raise DomainError("binary blobs need exactly two classes")
    rng = np.random.default_rng([int(seed), 0x5EED])
    means = blob_means(classes, d, separation)
    labels = np.repeat(np.arange(classes), per_class)
    X = means[labels] + rng.standard_normal((labels.size, d))
    order = rng.permutation(labels.size)
    X, labels = X[order], labels[order]
    if binary:
        labels = np.where(labels == 0, 1, -1)
    return LabeledDataset(X, labels, split)
