import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

MNIST_ROOT = Path(__file__).resolve().parent.parent / "data" / "mnist"
CIFAR_ROOT = Path(__file__).resolve().parent.parent / "data" / "cifar10"


def mnist_available() -> bool:
    return (MNIST_ROOT / "train-images-idx3-ubyte.gz").exists() or \
        (MNIST_ROOT / "train-images-idx3-ubyte").exists()


def cifar_available() -> bool:
    return (CIFAR_ROOT / "data_batch_1.bin").exists() or \
        (CIFAR_ROOT / "data_batch_1.bin.gz").exists()


@pytest.fixture(scope="session")
def mnist_root() -> Path:
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not present under {MNIST_ROOT}")
    return MNIST_ROOT


@pytest.fixture(scope="session")
def mnist_sets(mnist_root):
    from gmprop.harness.data import load_mnist

    return load_mnist(mnist_root)


def write_idx_images(path: Path, images: np.ndarray, compress=False):
    """Serialize (N, H, W) uint8 images into the big-endian IDX format."""
    n, h, w = images.shape
    payload = struct.pack(">IIII", 0x00000803, n, h, w) + images.tobytes()
    if compress:
        path = path.with_suffix(path.suffix + ".gz")
        with gzip.open(path, "wb") as f:
            f.write(payload)
    else:
        path.write_bytes(payload)
    return path


def write_idx_labels(path: Path, labels: np.ndarray, compress=False):
    payload = struct.pack(">II", 0x00000801, len(labels)) + labels.astype(np.uint8).tobytes()
    if compress:
        path = path.with_suffix(path.suffix + ".gz")
        with gzip.open(path, "wb") as f:
            f.write(payload)
    else:
        path.write_bytes(payload)
    return path


def make_synthetic_mnist_dir(tmp_path: Path, n_train=64, n_test=32, seed=0) -> Path:
    """A small, valid IDX dataset directory for loader and CLI tests."""
    rng = np.random.default_rng(seed)
    root = tmp_path / "mnist"
    root.mkdir(parents=True, exist_ok=True)
    tr_x = rng.integers(0, 256, size=(n_train, 28, 28), dtype=np.uint8)
    tr_y = rng.integers(0, 10, size=n_train, dtype=np.uint8)
    te_x = rng.integers(0, 256, size=(n_test, 28, 28), dtype=np.uint8)
    te_y = rng.integers(0, 10, size=n_test, dtype=np.uint8)
    write_idx_images(root / "train-images-idx3-ubyte", tr_x)
    write_idx_labels(root / "train-labels-idx1-ubyte", tr_y)
    write_idx_images(root / "t10k-images-idx3-ubyte", te_x)
    write_idx_labels(root / "t10k-labels-idx1-ubyte", te_y)
    return root
