"""Dataset ingestion and preprocessing.

MNIST arrives as big-endian IDX files (optionally gzipped), CIFAR-10 as the
binary batch format (one label byte + 3072 pixel bytes per record), and the
32x32 face set as a directory of pre-resized images. Image datasets are
normalized to [0, 1]; the digit/object sets then subtract the scalar mean of
the normalized training data, the face set standardizes to zero mean and unit
standard deviation.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels


@dataclass
class DatasetSpec:
    """What to load and how to preprocess it."""

    name: str                      # mnist | cifar10 | celeba32 | toy2d
    split: str = "train"
    preprocessing: str = "unit_range_mean_subtract"
    root: str | Path = "data"


@dataclass
class Preprocessing:
    """Invertible pixel transform fitted on the training split."""

    kind: str       # unit_range_mean_subtract | standardize | none
    mean: float = 0.0
    std: float = 1.0

    def apply(self, x01: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return x01
        if self.kind == "unit_range_mean_subtract":
            return x01 - np.float32(self.mean)
        return (x01 - np.float32(self.mean)) / np.float32(self.std)

    def invert(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return z
        if self.kind == "unit_range_mean_subtract":
            return z + self.mean
        return z * self.std + self.mean


@dataclass
class Dataset:
    """Preprocessed images plus integer labels."""

    x: np.ndarray                  # (N, D, H, W) float32
    y: np.ndarray                  # (N,) int64
    num_classes: int
    preprocessing: Preprocessing
    name: str = ""

    def __len__(self) -> int:
        return len(self.y)


def _open_maybe_gzip(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _resolve(root: Path, filename: str) -> Path:
    for candidate in (root / filename, root / (filename + ".gz")):
        if candidate.exists():
            return candidate
    raise DataError(f"missing dataset file {filename}(.gz) under {root}")


def read_idx(path: str | Path) -> np.ndarray:
    """Parse one big-endian IDX file of unsigned bytes."""
    path = Path(path)
    with _open_maybe_gzip(path) as f:
        header = f.read(4)
        if len(header) < 4:
            raise DataError(f"{path.name}: truncated IDX header")
        magic = struct.unpack(">I", header)[0]
        if magic not in (IDX_MAGIC_IMAGES, IDX_MAGIC_LABELS):
            raise DataError(f"{path.name}: bad IDX magic 0x{magic:08x}")
        ndim = magic & 0xFF
        dims_raw = f.read(4 * ndim)
        if len(dims_raw) < 4 * ndim:
            raise DataError(f"{path.name}: truncated IDX dimension header")
        dims = struct.unpack(">" + "I" * ndim, dims_raw)
        expected = int(np.prod(dims))
        payload = f.read()
        if len(payload) != expected:
            raise DataError(
                f"{path.name}: payload length {len(payload)} != "
                f"declared {expected} bytes"
            )
        return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_mnist(root: str | Path, preprocessing: str = "unit_range_mean_subtract",
               expect_canonical: bool = True) -> tuple[Dataset, Dataset]:
    """Load the digit IDX files; preprocessing is fitted on the training split."""
    root = Path(root)
    train_x = read_idx(_resolve(root, "train-images-idx3-ubyte"))
    train_y = read_idx(_resolve(root, "train-labels-idx1-ubyte"))
    test_x = read_idx(_resolve(root, "t10k-images-idx3-ubyte"))
    test_y = read_idx(_resolve(root, "t10k-labels-idx1-ubyte"))
    if len(train_x) != len(train_y) or len(test_x) != len(test_y):
        raise DataError("image/label counts disagree")
    if expect_canonical and (len(train_x), len(test_x)) != (60000, 10000):
        raise DataError(
            f"unexpected split sizes {len(train_x)}/{len(test_x)}, "
            "expected 60000/10000"
        )
    return _finish_image_sets(train_x[:, None, :, :], train_y,
                              test_x[:, None, :, :], test_y,
                              preprocessing, "mnist")


def load_cifar10(root: str | Path,
                 preprocessing: str = "unit_range_mean_subtract") -> tuple[Dataset, Dataset]:
    """Load the binary object-recognition batches (5 train + 1 test)."""
    root = Path(root)
    train_parts = [_read_cifar_file(_resolve(root, f"data_batch_{i}.bin"))
                   for i in range(1, 6)]
    test_x, test_y = _read_cifar_file(_resolve(root, "test_batch.bin"))
    train_x = np.concatenate([p[0] for p in train_parts])
    train_y = np.concatenate([p[1] for p in train_parts])
    return _finish_image_sets(train_x, train_y, test_x, test_y,
                              preprocessing, "cifar10")


def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with _open_maybe_gzip(path) as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise DataError(f"{path.name}: size {len(raw)} is not a multiple of "
                        f"{CIFAR_RECORD}-byte records")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise DataError(f"{path.name}: label byte out of range")
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def serialize_cifar_records(images: np.ndarray, labels: np.ndarray) -> bytes:
    """Inverse of the batch parser (round-trip checks and fixtures)."""
    n = len(labels)
    out = np.empty((n, CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = labels
    out[:, 1:] = images.reshape(n, -1)
    return out.tobytes()


def _finish_image_sets(train_x, train_y, test_x, test_y, preprocessing, name):
    train01 = train_x.astype(np.float32) / np.float32(255.0)
    test01 = test_x.astype(np.float32) / np.float32(255.0)
    if preprocessing == "unit_range_mean_subtract":
        prep = Preprocessing(preprocessing, mean=float(train01.mean()))
    elif preprocessing == "standardize":
        prep = Preprocessing(preprocessing, mean=float(train01.mean()),
                             std=float(train01.std()))
    elif preprocessing == "none":
        prep = Preprocessing("none")
    else:
        raise DataError(f"unknown preprocessing {preprocessing!r}")
    train = Dataset(prep.apply(train01), train_y.astype(np.int64), 10, prep, name)
    test = Dataset(prep.apply(test01), test_y.astype(np.int64), 10, prep, name)
    return train, test


def load_image_dir(root: str | Path, size: int = 32,
                   preprocessing: str = "standardize") -> Dataset:
    """Load a directory of pre-resized RGB images (the face-set path).

    Resizing from the original resolution is an offline step; this loader
    expects images already at ``size`` x ``size``.
    """
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise DataError("reading image directories requires Pillow") from exc
    root = Path(root)
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise DataError(f"no images under {root}")
    imgs = []
    for p in files:
        with Image.open(p) as im:
            im = im.convert("RGB")
            if im.size != (size, size):
                raise DataError(f"{p.name}: expected {size}x{size}, got {im.size}")
            imgs.append(np.asarray(im, dtype=np.uint8).transpose(2, 0, 1))
    x = np.stack(imgs).astype(np.float32) / np.float32(255.0)
    if preprocessing == "standardize":
        prep = Preprocessing("standardize", mean=float(x.mean()), std=float(x.std()))
    else:
        prep = Preprocessing("none")
    y = np.zeros(len(files), dtype=np.int64)
    return Dataset(prep.apply(x), y, 1, prep, "celeba32")


def two_moons(n: int, rng: np.random.Generator, noise: float = 0.06) -> np.ndarray:
    """Classic interleaved half-circles in 2-D; the GAN toy distribution."""
    half = n // 2
    t1 = rng.uniform(0, np.pi, size=half)
    t2 = rng.uniform(0, np.pi, size=n - half)
    upper = np.stack([np.cos(t1), np.sin(t1)], axis=1)
    lower = np.stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)], axis=1)
    pts = np.concatenate([upper, lower]).astype(np.float64)
    return pts + rng.normal(0.0, noise, size=pts.shape)
