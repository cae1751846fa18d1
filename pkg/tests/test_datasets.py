import numpy as np
import pytest

from energycomp import ingest_dataset, make_synthetic_dataset, write_synthetic_idx
from energycomp.datasets import (read_idx_images, read_idx_labels,
                                 write_idx_images, write_idx_labels)


@pytest.fixture
def idx_dir(tmp_path):
    return write_synthetic_idx(tmp_path / "data", train=120, test=30, side=10, seed=0)


class TestIdxFormat:
    def test_image_round_trip(self, tmp_path):
        images = np.random.default_rng(0).integers(0, 256, size=(10, 28, 28),
                                                   dtype=np.uint8)
        path = tmp_path / "imgs"
        write_idx_images(path, images)
        assert np.array_equal(read_idx_images(path), images)

    def test_header_is_big_endian_with_spec_magic(self, tmp_path):
        path = tmp_path / "imgs"
        write_idx_images(path, np.zeros((2, 3, 4), np.uint8))
        raw = path.read_bytes()
        assert raw[:4] == bytes([0, 0, 8, 3])
        assert int.from_bytes(raw[4:8], "big") == 2
        assert int.from_bytes(raw[8:12], "big") == 3
        assert int.from_bytes(raw[12:16], "big") == 4

    def test_label_round_trip(self, tmp_path):
        labels = np.arange(10) % 7
        path = tmp_path / "labels"
        write_idx_labels(path, labels)
        assert np.array_equal(read_idx_labels(path), labels)

    def test_corrupt_magic_names_expected_and_actual(self, tmp_path):
        path = tmp_path / "imgs"
        write_idx_images(path, np.zeros((1, 2, 2), np.uint8))
        data = bytearray(path.read_bytes())
        data[3] = 9
        path.write_bytes(data)
        with pytest.raises(ValueError, match="0x00000809.*0x00000803"):
            read_idx_images(path)

    def test_payload_length_mismatch(self, tmp_path):
        path = tmp_path / "imgs"
        write_idx_images(path, np.zeros((2, 2, 2), np.uint8))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(ValueError, match="header implies"):
            read_idx_images(path)

    def test_label_magic_differs_from_image_magic(self, tmp_path):
        path = tmp_path / "labels"
        write_idx_labels(path, np.zeros(4, np.int64))
        with pytest.raises(ValueError, match="magic"):
            read_idx_images(path)


class TestIngestIdx:
    def test_counts_and_split(self, idx_dir):
        ds = ingest_dataset(idx_dir, "idx", seed=1)
        assert len(ds.train_x) + len(ds.val_x) == 120
        assert len(ds.val_x) == 12  # seeded 10% validation cut
        assert len(ds.test_x) == 30
        assert ds.image_shape == (10, 10)
        assert ds.class_count == 10

    def test_pixels_scaled_to_unit_interval(self, idx_dir):
        ds = ingest_dataset(idx_dir, "idx", seed=1)
        assert ds.train_x.dtype == np.float32
        assert ds.train_x.min() >= 0.0 and ds.train_x.max() <= 1.0

    def test_split_deterministic_per_seed(self, idx_dir):
        a = ingest_dataset(idx_dir, "idx", seed=5)
        b = ingest_dataset(idx_dir, "idx", seed=5)
        c = ingest_dataset(idx_dir, "idx", seed=6)
        assert np.array_equal(a.train_y, b.train_y)
        assert not np.array_equal(a.train_y, c.train_y)

    def test_missing_files_reported(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="train_images"):
            ingest_dataset(tmp_path, "idx")

    def test_t10k_alias_accepted(self, tmp_path):
        root = write_synthetic_idx(tmp_path / "d", train=50, test=10, side=6, seed=2)
        (root / "test-images-idx3-ubyte").rename(root / "t10k-images-idx3-ubyte")
        (root / "test-labels-idx1-ubyte").rename(root / "t10k-labels-idx1-ubyte")
        ds = ingest_dataset(root, "idx", seed=0)
        assert len(ds.test_x) == 10

    def test_unknown_format_rejected(self, idx_dir):
        with pytest.raises(ValueError, match="format"):
            ingest_dataset(idx_dir, "hdf5")


class TestIngestCsv:
    def write_csv(self, path, images, labels):
        rows = np.concatenate([labels[:, None], images.reshape(len(images), -1)],
                              axis=1)
        np.savetxt(path, rows, fmt="%d", delimiter=",")

    def test_row_count_equals_sample_count(self, tmp_path):
        images = np.random.default_rng(3).integers(0, 256, size=(25, 4, 4))
        labels = np.arange(25) % 5
        self.write_csv(tmp_path / "train.csv", images, labels)
        self.write_csv(tmp_path / "test.csv", images[:8], labels[:8])
        ds = ingest_dataset(tmp_path, "csv", seed=0)
        assert len(ds.train_x) + len(ds.val_x) == 25
        assert len(ds.test_x) == 8
        assert ds.image_shape == (4, 4)

    def test_non_square_pixel_count_rejected(self, tmp_path):
        (tmp_path / "train.csv").write_text("0,1,2,3\n")
        (tmp_path / "test.csv").write_text("0,1,2,3\n")
        with pytest.raises(ValueError, match="square"):
            ingest_dataset(tmp_path, "csv")

    def test_negative_label_rejected(self, tmp_path):
        (tmp_path / "train.csv").write_text("-1,0,0,0,0\n")
        (tmp_path / "test.csv").write_text("0,0,0,0,0\n")
        with pytest.raises(ValueError, match="labels"):
            ingest_dataset(tmp_path, "csv")


class TestSynthetic:
    def test_in_memory_matches_idx_pipeline(self, tmp_path):
        mem = make_synthetic_dataset(train=80, test=20, side=9, seed=4)
        root = write_synthetic_idx(tmp_path / "d", train=80, test=20, side=9, seed=4)
        disk = ingest_dataset(root, "idx", seed=4)
        assert np.array_equal(mem.test_y, disk.test_y)
        assert np.allclose(mem.test_x, disk.test_x)
        assert np.array_equal(mem.train_y, disk.train_y)

    def test_classes_are_learnable_patterns(self):
        ds = make_synthetic_dataset(train=200, test=50, side=8, seed=5)
        # same-class images correlate more than cross-class ones
        same = cross = 0.0
        flat = ds.train_x.reshape(len(ds.train_x), -1)
        for c in range(3):
            members = flat[ds.train_y == c]
            others = flat[ds.train_y != c]
            same += np.corrcoef(members[0], members[1])[0, 1]
            cross += np.corrcoef(members[0], others[0])[0, 1]
        assert same > cross
