"""Dataset loading (MNIST IDX, CIFAR-10 binary), synthetic data and batching."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from copi.errors import ContractError, FormatError
from copi.tensor import make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
N_CLASSES = 10


@dataclass(frozen=True)
class Dataset:
    """Features ``(D, N)`` in [0, 1] (or unbounded for synthetic data) and one-hot labels ``(C, N)``."""

    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ContractError("features and labels must be 2-D")
        if self.labels.shape[0] and self.labels.shape[1] != self.features.shape[1]:
            raise ContractError("feature and label sample counts differ")

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def subset(self, n: int) -> "Dataset":
        """First ``n`` samples (all of them if ``n`` exceeds the size)."""
        n = min(n, self.n)
        return Dataset(self.features[:, :n].copy(), self.labels[:, :n].copy(), self.name)

    def class_labels(self) -> np.ndarray:
        return np.argmax(self.labels, axis=0)


def one_hot(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise FormatError(f"label value outside [0, {n_classes})")
    out = np.zeros((n_classes, labels.size))
    out[labels, np.arange(labels.size)] = 1.0
    return out


def _read_idx(path: Path, magic: int, ndims: int, what: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x} for {what}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndims, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated data, header declares {size} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_mnist(image_path, label_path, name: str = "mnist") -> Dataset:
    images = _read_idx(image_path, IDX_IMAGES_MAGIC, 3, "images")
    labels = _read_idx(label_path, IDX_LABELS_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: {image_path} has {images.shape[0]} images, {label_path} has {labels.shape[0]} labels")
    n = images.shape[0]
    features = images.reshape(n, -1).T.astype(np.float64) / 255.0
    return Dataset(np.ascontiguousarray(features), one_hot(labels), name)


def load_cifar10(batch_paths: Sequence, name: str = "cifar10") -> Dataset:
    feats, labels = [], []
    for path in batch_paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        feats.append(rec[:, 1:])
    if not feats:
        raise ContractError("no CIFAR-10 batch files given")
    pixels = np.concatenate(feats).T.astype(np.float64) / 255.0
    return Dataset(np.ascontiguousarray(pixels), one_hot(np.concatenate(labels)), name)


def mnist_paths(data_dir, split: str) -> tuple[Path, Path]:
    prefix = "train" if split == "train" else "t10k"
    d = Path(data_dir)
    return d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte"


def cifar10_paths(data_dir, split: str) -> list[Path]:
    d = Path(data_dir)
    if (d / "cifar-10-batches-bin").is_dir():
        d = d / "cifar-10-batches-bin"
    if split == "train":
        return [d / f"data_batch_{i}.bin" for i in range(1, 6)]
    return [d / "test_batch.bin"]


def load_named(dataset: str, data_dir, split: str) -> Dataset:
    """Load ``mnist`` or ``cifar10`` from their canonical file names under ``data_dir``."""
    if dataset == "mnist":
        paths = mnist_paths(data_dir, split)
        missing = [p for p in paths if not p.exists()]
        if missing:
            raise FileNotFoundError(f"missing MNIST file: {missing[0]}")
        return load_mnist(*paths, name=f"mnist-{split}")
    if dataset == "cifar10":
        paths = cifar10_paths(data_dir, split)
        missing = [p for p in paths if not p.exists()]
        if missing:
            raise FileNotFoundError(f"missing CIFAR-10 file: {missing[0]}")
        return load_cifar10(paths, name=f"cifar10-{split}")
    raise ContractError(f"unknown dataset {dataset!r}")


def random_covariance(rng: np.random.Generator, dim: int, eps: float = 0.1, scale: float = 1.0) -> np.ndarray:
    """``A A^T + eps I`` with ``A`` uniform on ``[-scale, scale]``."""
    a = rng.uniform(-scale, scale, size=(dim, dim))
    return a @ a.T + eps * np.eye(dim)


def synth_gaussian(rng: np.random.Generator, dim: int, n: int, cov: np.ndarray | None = None,
                   eps: float = 0.1) -> Dataset:
    """``n`` zero-mean Gaussian draws with covariance ``cov`` (random SPD if omitted)."""
    if dim < 1 or n < 1:
        raise ContractError("dim and n must be positive")
    if cov is None:
        cov = random_covariance(rng, dim, eps)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("covariance is not positive definite") from exc
    features = chol @ rng.standard_normal((dim, n))
    return Dataset(features, np.zeros((0, n)), "synthetic-gaussian")


def epoch_seed(seed: int, epoch: int) -> int:
    """Stable 64-bit seed derived from a global seed and an epoch index."""
    digest = hashlib.sha256(f"{seed}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class BatchPlan:
    batch_size: int
    epoch_seed: int
    order: np.ndarray = field(default=None, repr=False)

    @classmethod
    def for_epoch(cls, n: int, batch_size: int, seed: int, epoch: int) -> "BatchPlan":
        if batch_size < 1:
            raise ContractError("batch_size must be positive")
        es = epoch_seed(seed, epoch)
        return cls(batch_size, es, make_rng(es).permutation(n))


def batches(dataset: Dataset, plan: BatchPlan) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(features, labels)`` column blocks in ``plan.order``; last batch may be short."""
    if plan.batch_size < 1:
        raise ContractError("batch_size must be positive")
    order = plan.order if plan.order is not None else make_rng(plan.epoch_seed).permutation(dataset.n)
    if len(order) != dataset.n:
        raise ContractError("batch order does not cover the dataset")
    for start in range(0, dataset.n, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        yield dataset.features[:, idx], dataset.labels[:, idx]
