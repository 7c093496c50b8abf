"""Data ingestion tests: IDX/CIFAR fidelity, synthetic sets, batching."""

import struct

import numpy as np
import pytest

from fatlab.data import (
    BatchIterator,
    Dataset,
    augment,
    load_cifar_binary,
    load_idx,
    synth_blobs,
    synth_shapes,
    write_cifar_binary,
    write_idx,
)
from fatlab.errors import FormatError, LengthError


def toy_idx_dataset(n=7, h=5, w=4, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, 1, h, w)).astype(np.float64) / 255.0
    labels = rng.integers(0, 10, size=n)
    return Dataset(images, labels, 10)


class TestIdx:
    def test_round_trip_identical(self, tmp_path):
        ds = toy_idx_dataset()
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        write_idx(ds, ip, lp)
        back = load_idx(ip, lp)
        assert back.images.tobytes() == ds.images.tobytes()
        assert back.labels.tobytes() == ds.labels.tobytes()

    def test_pixel_255_maps_to_one(self, tmp_path):
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        with open(ip, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x803, 1, 1, 2) + bytes([255, 0]))
        with open(lp, "wb") as fh:
            fh.write(struct.pack(">II", 0x801, 1) + bytes([3]))
        ds = load_idx(ip, lp)
        assert ds.images[0, 0, 0, 0] == 1.0
        assert ds.images[0, 0, 0, 1] == 0.0
        assert ds.labels[0] == 3

    def test_wrong_magic_reports_found_value(self, tmp_path):
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        with open(ip, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x805, 1, 1, 1) + bytes([0]))
        with open(lp, "wb") as fh:
            fh.write(struct.pack(">II", 0x801, 1) + bytes([0]))
        with pytest.raises(FormatError, match="0x00000805"):
            load_idx(ip, lp)

    def test_truncated_payload_is_length_error(self, tmp_path):
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        with open(ip, "wb") as fh:  # header says 10 images, payload holds 9
            fh.write(struct.pack(">IIII", 0x803, 10, 2, 2) + bytes(9 * 4))
        with open(lp, "wb") as fh:
            fh.write(struct.pack(">II", 0x801, 10) + bytes(10))
        with pytest.raises(LengthError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        with open(ip, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x803, 1, 1, 1) + bytes(1))
        with open(lp, "wb") as fh:
            fh.write(struct.pack(">II", 0x801, 2) + bytes(2))
        with pytest.raises(FormatError, match="1 images but 2 labels"):
            load_idx(ip, lp)


class TestCifar:
    def test_hand_built_record(self, tmp_path):
        path = tmp_path / "batch.bin"
        record = bytes([7]) + bytes(range(256)) * 12  # 3072 pixel bytes
        path.write_bytes(record)
        ds = load_cifar_binary([path])
        assert len(ds) == 1 and ds.labels[0] == 7
        assert ds.images.shape == (1, 3, 32, 32)

    def test_channel_layout_byte_1024_is_green_origin(self, tmp_path):
        path = tmp_path / "batch.bin"
        payload = bytearray(3073)
        payload[1 + 1024] = 255  # first byte of the G plane
        path.write_bytes(bytes(payload))
        ds = load_cifar_binary([path])
        assert ds.images[0, 1, 0, 0] == 1.0
        assert ds.images[0, 0, 0, 0] == 0.0 and ds.images[0, 2, 0, 0] == 0.0

    def test_bad_size_is_format_error(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(bytes(3072))
        with pytest.raises(FormatError, match="3073"):
            load_cifar_binary([path])

    def test_subset_flag(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(20, 3, 32, 32)).astype(np.float64) / 255.0
        ds = Dataset(images, rng.integers(0, 10, 20), 10)
        path = tmp_path / "batch.bin"
        write_cifar_binary(ds, path)
        sub = load_cifar_binary([path], n=5)
        assert len(sub) == 5
        assert sub.images.tobytes() == ds.images[:5].tobytes()

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        images = rng.integers(0, 256, size=(4, 3, 32, 32)).astype(np.float64) / 255.0
        ds = Dataset(images, rng.integers(0, 10, 4), 10)
        path = tmp_path / "rt.bin"
        write_cifar_binary(ds, path)
        back = load_cifar_binary([path])
        assert back.images.tobytes() == ds.images.tobytes()
        assert back.labels.tobytes() == ds.labels.tobytes()


class TestSynthetic:
    def test_blobs_separable_in_low_spread_limit(self):
        ds = synth_blobs(300, d=6, k=3, spread=1e-4, seed=0)
        # nearest-centroid on class means classifies everything correctly
        flat = ds.images.reshape(len(ds), -1)
        means = np.stack([flat[ds.labels == c].mean(axis=0) for c in range(3)])
        pred = ((flat[:, None, :] - means[None]) ** 2).sum(axis=2).argmin(axis=1)
        assert (pred == ds.labels).all()

    def test_blobs_deterministic(self):
        a = synth_blobs(50, d=4, k=2, spread=0.1, seed=3)
        b = synth_blobs(50, d=4, k=2, spread=0.1, seed=3)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_blobs_balanced(self):
        ds = synth_blobs(100, d=4, k=3, spread=0.1, seed=1)
        counts = np.bincount(ds.labels, minlength=3)
        assert counts.max() - counts.min() <= 1

    def test_blobs_need_two_classes(self):
        with pytest.raises(FormatError):
            synth_blobs(10, d=4, k=1, spread=0.1, seed=0)

    def test_shapes_valid_and_deterministic(self):
        a = synth_shapes(40, size=16, k=4, seed=5)
        b = synth_shapes(40, size=16, k=4, seed=5)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.images.min() >= 0 and a.images.max() <= 1
        counts = np.bincount(a.labels, minlength=4)
        assert counts.max() - counts.min() <= 1


class TestBatching:
    def test_each_epoch_visits_every_index_once(self):
        it = BatchIterator(23, 5, seed=0)
        for epoch in (0, 1):
            seen = np.concatenate(list(it.batches(epoch)))
            assert sorted(seen.tolist()) == list(range(23))

    def test_order_is_function_of_seed_and_epoch(self):
        a = BatchIterator(50, 8, seed=4).order(2)
        b = BatchIterator(50, 8, seed=4).order(2)
        c = BatchIterator(50, 8, seed=4).order(3)
        d = BatchIterator(50, 8, seed=5).order(2)
        assert a.tolist() == b.tolist()
        assert a.tolist() != c.tolist()
        assert a.tolist() != d.tolist()

    def test_augment_shapes_and_range(self):
        rng = np.random.default_rng(0)
        images = rng.uniform(0, 1, size=(6, 1, 8, 8))
        out = augment(images, rng)
        assert out.shape == images.shape
        assert out.min() >= 0 and out.max() <= 1


class TestDatasetValidation:
    def test_pixels_out_of_range_rejected(self):
        with pytest.raises(FormatError):
            Dataset(np.full((1, 1, 2, 2), 1.5), np.array([0]), 10)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(FormatError):
            Dataset(np.zeros((1, 1, 2, 2)), np.array([10]), 10)

    def test_count_mismatch_rejected(self):
        with pytest.raises(FormatError):
            Dataset(np.zeros((2, 1, 2, 2)), np.array([0]), 10)
