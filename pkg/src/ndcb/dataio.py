"""Dataset ingestion (MNIST IDX), weight persistence, and result exporters.

File formats
------------
IDX (big endian, canonical MNIST layout):
    images:  u32 magic 0x00000803, u32 count, u32 rows, u32 cols, u8 pixels
    labels:  u32 magic 0x00000801, u32 count, u8 labels
    Gzipped files are detected by their 1f 8b prefix and decompressed
    transparently.

Weights ("NDTG", little endian):
    4-byte ASCII magic "NDTG", u32 version = 1, u32 tensor count, then per
    tensor: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
    f32 data[prod(dims)].  Round-trips a float32 ParamSet bitwise.

Metrics are serialized as JSON; floats use Python's shortest round-trip
repr, so re-reading reproduces them exactly.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ndcb.errors import (
    BadMagicError,
    ConfigurationError,
    CountMismatchError,
    DatasetError,
    FileFormatError,
    TruncatedFileError,
)
from ndcb.nn.network import ParamSet

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
WEIGHTS_MAGIC = b"NDTG"
WEIGHTS_VERSION = 1

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class LabeledDataset:
    """Images in [0, 1] with integer class labels and a per-class index."""

    images: np.ndarray  # (n, H, W) float32
    labels: np.ndarray  # (n,) int64
    split: str = ""
    class_index: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if not self.class_index:
            self.class_index = {
                int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)
            }

    def __len__(self) -> int:
        return len(self.images)

    @property
    def classes(self) -> list[int]:
        return sorted(self.class_index)

    def take(self, indices: np.ndarray, split: str | None = None) -> "LabeledDataset":
        return LabeledDataset(
            self.images[indices], self.labels[indices], split or self.split
        )

    def sample(self, n: int, seed: int, split: str | None = None) -> "LabeledDataset":
        """Seed-reproducible subsample without replacement."""
        if n > len(self):
            raise DatasetError(f"cannot sample {n} of {len(self)} images")
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self), size=n, replace=False)
        idx.sort()
        return self.take(idx, split)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, got {len(data)}")
    return data


def _open_maybe_gzip(path):
    with open(path, "rb") as probe:
        head = probe.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path, split: str = "") -> LabeledDataset:
    """Parse an IDX image/label file pair into a LabeledDataset."""
    with _open_maybe_gzip(images_path) as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagicError(
                f"{images_path}: image magic {magic:#010x} != {IDX_IMAGES_MAGIC:#010x}"
            )
        pixels = _read_exact(f, n * rows * cols, "image payload")
    with _open_maybe_gzip(labels_path) as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagicError(
                f"{labels_path}: label magic {magic:#010x} != {IDX_LABELS_MAGIC:#010x}"
            )
        raw_labels = _read_exact(f, n_labels, "label payload")
    if n != n_labels:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, rows, cols)
    images = images.astype(np.float32) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return LabeledDataset(images, labels, split)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write a dataset back out in IDX layout (pixels quantized to u8)."""
    if len(images) != len(labels):
        raise DatasetError("image/label count mismatch")
    n, rows, cols = images.shape
    as_bytes = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(as_bytes.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_mnist(data_dir, split: str) -> LabeledDataset:
    """Load one MNIST split from a directory of canonical IDX files."""
    if split not in MNIST_FILES:
        raise ConfigurationError(f"unknown split '{split}'")
    data_dir = Path(data_dir)
    paths = []
    for name in MNIST_FILES[split]:
        for candidate in (data_dir / name, data_dir / (name + ".gz")):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            raise DatasetError(f"missing {name}[.gz] under {data_dir}")
    return load_idx(paths[0], paths[1], split)


def save_weights(params: ParamSet, path) -> None:
    """Write a float32 ParamSet in the NDTG container."""
    if params.dtype != np.float32:
        raise ConfigurationError("weights files store float32 tensors only")
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<II", WEIGHTS_VERSION, len(params.tensors)))
        for name, tensor in params.tensors.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_weights(path) -> ParamSet:
    """Read an NDTG weights file; any structural defect raises before returning."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "weights magic")
        if magic != WEIGHTS_MAGIC:
            raise BadMagicError(f"{path}: magic {magic!r} != {WEIGHTS_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(f, 8, "weights header"))
        if version != WEIGHTS_VERSION:
            raise FileFormatError(f"{path}: unsupported weights version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "tensor name length"))
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "tensor rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "tensor dims"))
            size = int(np.prod(dims)) if rank else 1
            raw = _read_exact(f, 4 * size, f"tensor '{name}' data")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        trailing = f.read(1)
        if trailing:
            raise FileFormatError(f"{path}: trailing bytes after {count} tensors")
    return ParamSet(tensors)


def export_histogram_csv(histograms: dict, path) -> None:
    """Write per-scenario histogram rows: ``scenario,bin_lo,bin_hi,count``."""
    lines = ["scenario,bin_lo,bin_hi,count"]
    for scenario, (edges, counts) in histograms.items():
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            lines.append(f"{scenario},{lo!r},{hi!r},{int(c)}")
    Path(path).write_text("\n".join(lines) + "\n")


def export_metrics_json(report, path) -> None:
    """Serialize a MetricsReport-shaped object to JSON (exact float repr)."""
    doc = {
        "accuracy": report.accuracy,
        "specificity": report.specificity,
        "npv": report.npv,
        "fpr": report.fpr,
        "fnr": report.fnr,
        "aer": report.aer,
        "theta_star": report.theta_star,
        "tp": report.counts.tp,
        "fn": report.counts.fn,
        "tn": report.counts.tn,
        "fp": report.counts.fp,
        "mode": report.mode,
        "seed": report.seed,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
