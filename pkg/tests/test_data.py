"""Dataset parsers: IDX format, binary batches, preprocessing audits."""

import gzip
import hashlib
import struct

import numpy as np
import pytest

from gmprop import DataError
from gmprop.harness.data import (
    CIFAR_RECORD,
    Preprocessing,
    load_cifar10,
    load_mnist,
    read_idx,
    serialize_cifar_records,
    two_moons,
)

from conftest import (
    cifar_available,
    CIFAR_ROOT,
    make_synthetic_mnist_dir,
    write_idx_images,
    write_idx_labels,
)


class TestIdxParser:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
        path = write_idx_images(tmp_path / "imgs", imgs)
        got = read_idx(path)
        np.testing.assert_array_equal(got, imgs)

    def test_gzip_transparent(self, tmp_path):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 10, size=7, dtype=np.uint8)
        path = write_idx_labels(tmp_path / "labels", labels, compress=True)
        np.testing.assert_array_equal(read_idx(path), labels)

    def test_magic_mismatch(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(struct.pack(">I", 0xDEADBEEF) + b"\x00" * 16)
        with pytest.raises(DataError, match="magic"):
            read_idx(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "short"
        p.write_bytes(b"\x00\x00")
        with pytest.raises(DataError, match="truncated"):
            read_idx(p)

    def test_payload_length_mismatch(self, tmp_path):
        p = tmp_path / "cut"
        payload = struct.pack(">IIII", 0x00000803, 2, 4, 4) + b"\x01" * 31
        p.write_bytes(payload)
        with pytest.raises(DataError, match="length"):
            read_idx(p)


class TestMnistLoader:
    def test_synthetic_dir(self, tmp_path):
        root = make_synthetic_mnist_dir(tmp_path, n_train=64, n_test=32)
        train, test = load_mnist(root, expect_canonical=False)
        assert len(train) == 64 and len(test) == 32
        assert train.x.shape == (64, 1, 28, 28)
        # preprocessing formula: pixel/255 minus the scalar training mean
        m = train.preprocessing.mean
        raw = read_idx(root / "train-images-idx3-ubyte").astype(np.float32)
        np.testing.assert_allclose(train.x[:, 0], raw / 255.0 - np.float32(m),
                                   atol=1e-6)

    def test_noncanonical_sizes_rejected_by_default(self, tmp_path):
        root = make_synthetic_mnist_dir(tmp_path)
        with pytest.raises(DataError, match="split sizes"):
            load_mnist(root)

    def test_mean_subtract_audit(self, tmp_path):
        root = make_synthetic_mnist_dir(tmp_path, n_train=256)
        train, _ = load_mnist(root, expect_canonical=False)
        assert abs(float(train.x.mean())) < 1e-6

    def test_pixel_255_maps_to_one_minus_mean(self, tmp_path):
        root = make_synthetic_mnist_dir(tmp_path)
        train, _ = load_mnist(root, expect_canonical=False)
        m = train.preprocessing.mean
        raw = read_idx(root / "train-images-idx3-ubyte")
        idx = np.unravel_index(np.argmax(raw), raw.shape)
        if raw[idx] == 255:
            assert train.x[idx[0], 0, idx[1], idx[2]] == pytest.approx(
                1.0 - m, abs=1e-6)

    def test_real_dataset_sizes_and_first_label(self, mnist_sets, mnist_root):
        """The canonical files: 60000/10000 and the known leading labels."""
        train, test = mnist_sets
        assert len(train) == 60000 and len(test) == 10000
        np.testing.assert_array_equal(train.y[:10], [5, 0, 4, 1, 9, 2, 1, 3, 1, 4])
        np.testing.assert_array_equal(test.y[:5], [7, 2, 1, 0, 4])
        # digest of the first raw training image, recorded at ingest time
        raw = read_idx(mnist_root / "train-images-idx3-ubyte.gz")
        digest = hashlib.sha256(raw[0].tobytes()).hexdigest()
        assert digest == ("23ceaef5eb61f0e70d64ac18fdf0f60d"
                          "f3d5971cf30bbadac7b6ebf07f782d2c")
        assert abs(float(train.x.mean())) < 1e-6


class TestCifarLoader:
    def _write_batches(self, tmp_path, n_per=20, seed=0):
        rng = np.random.default_rng(seed)
        root = tmp_path / "cifar"
        root.mkdir()
        all_imgs, all_labels = [], []
        for i in range(1, 6):
            imgs = rng.integers(0, 256, size=(n_per, 3, 32, 32), dtype=np.uint8)
            labels = rng.integers(0, 10, size=n_per, dtype=np.uint8)
            (root / f"data_batch_{i}.bin").write_bytes(
                serialize_cifar_records(imgs, labels))
            all_imgs.append(imgs)
            all_labels.append(labels)
        imgs = rng.integers(0, 256, size=(n_per, 3, 32, 32), dtype=np.uint8)
        labels = rng.integers(0, 10, size=n_per, dtype=np.uint8)
        (root / "test_batch.bin").write_bytes(serialize_cifar_records(imgs, labels))
        return root, np.concatenate(all_imgs), np.concatenate(all_labels)

    def test_round_trip(self, tmp_path):
        root, imgs, labels = self._write_batches(tmp_path)
        train, test = load_cifar10(root)
        assert len(train) == 100 and len(test) == 20
        np.testing.assert_array_equal(train.y, labels)
        restored = (train.x + train.preprocessing.mean) * 255.0
        np.testing.assert_allclose(np.round(restored), imgs, atol=0.5)

    def test_record_misalignment(self, tmp_path):
        root = tmp_path / "c2"
        root.mkdir()
        (root / "data_batch_1.bin").write_bytes(b"\x00" * (CIFAR_RECORD + 5))
        with pytest.raises(DataError, match="records"):
            load_cifar10(root)

    def test_label_out_of_range(self, tmp_path):
        root = tmp_path / "c3"
        root.mkdir()
        rec = bytearray(CIFAR_RECORD)
        rec[0] = 77
        (root / "data_batch_1.bin").write_bytes(bytes(rec))
        with pytest.raises(DataError, match="label"):
            load_cifar10(root)

    @pytest.mark.skipif(not cifar_available(), reason="CIFAR-10 binaries not present")
    def test_real_dataset_counts_and_histogram(self):
        train, test = load_cifar10(CIFAR_ROOT)
        assert len(train) == 50000 and len(test) == 10000
        counts = np.bincount(train.y, minlength=10)
        np.testing.assert_array_equal(counts, np.full(10, 5000))


class TestPreprocessing:
    def test_standardize_audit(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0, 1, size=(500, 3, 8, 8)).astype(np.float32)
        prep = Preprocessing("standardize", mean=float(x.mean()), std=float(x.std()))
        z = prep.apply(x)
        assert abs(float(z.mean())) < 1e-4
        assert abs(float(z.std()) - 1.0) < 1e-4

    def test_invert_round_trip(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(0, 1, size=(50, 4)).astype(np.float32)
        for kind in ("unit_range_mean_subtract", "standardize", "none"):
            prep = Preprocessing(kind, mean=float(x.mean()),
                                 std=float(x.std()))
            z = prep.invert(prep.apply(x))
            np.testing.assert_allclose(z, x, atol=1e-6)


class TestToy2d:
    def test_two_moons_shape_and_spread(self):
        pts = two_moons(1000, np.random.default_rng(8))
        assert pts.shape == (1000, 2)
        assert pts[:, 0].min() < -0.5 and pts[:, 0].max() > 1.5
