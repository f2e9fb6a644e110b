import os
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("copi", deadline=None)
settings.load_profile("copi")

MNIST_CANDIDATES = [os.environ.get("COPI_MNIST_DIR", ""), "data/mnist", "/root/data/mnist"]
CIFAR_CANDIDATES = [os.environ.get("COPI_CIFAR_DIR", ""), "data/cifar10", "/root/data/cifar10"]


def _find(candidates, probe):
    for c in candidates:
        if c and (Path(c) / probe).exists():
            return Path(c)
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    d = _find(MNIST_CANDIDATES, "train-images-idx3-ubyte")
    if d is None:
        pytest.skip("MNIST IDX files not found (set COPI_MNIST_DIR)")
    return d


@pytest.fixture(scope="session")
def cifar_dir():
    d = _find(CIFAR_CANDIDATES, "data_batch_1.bin") or _find(CIFAR_CANDIDATES, "cifar-10-batches-bin/data_batch_1.bin")
    if d is None:
        pytest.skip("CIFAR-10 binary batches not found (set COPI_CIFAR_DIR)")
    return d


def write_idx_images(path, images: np.ndarray):
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">IIII", 0x803, n, h, w) + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", 0x801, labels.size) + labels.tobytes())


@pytest.fixture
def fake_mnist(tmp_path):
    """A small learnable IDX dataset: each class lights up its own block of pixels."""
    rng = np.random.default_rng(7)

    def make(n):
        labels = rng.integers(0, 10, n)
        imgs = rng.integers(0, 40, (n, 28, 28))
        for i, lab in enumerate(labels):
            imgs[i, 2 * lab:2 * lab + 4, 4:24] += 200
        return np.clip(imgs, 0, 255), labels

    d = tmp_path / "mnist"
    d.mkdir()
    tr, trl = make(300)
    te, tel = make(100)
    write_idx_images(d / "train-images-idx3-ubyte", tr)
    write_idx_labels(d / "train-labels-idx1-ubyte", trl)
    write_idx_images(d / "t10k-images-idx3-ubyte", te)
    write_idx_labels(d / "t10k-labels-idx1-ubyte", tel)
    return d


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail/skip line for an acceptance criterion."""

    def _report(criterion: int, status: str, detail: str) -> None:
        line = f"criterion {criterion:>2}: {status:<4}  {detail}"
        ACCEPTANCE_LINES[criterion] = line
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
