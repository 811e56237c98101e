"""Binary archive round-trips and corruption handling."""

import numpy as np
import pytest

from gaia_ood.archive import (
    load_dataset,
    load_weights,
    read_archive,
    write_archive,
    write_dataset,
)
from gaia_ood.errors import DataError


class TestRoundTrip:
    def test_single_tensor_round_trips_bit_exactly(self, tmp_path):
        path = tmp_path / "w.gwta"
        w = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
        write_archive(path, {"w": w})
        back = read_archive(path)
        assert list(back) == ["w"]
        assert back["w"].dtype == np.float32
        assert np.array_equal(back["w"], w)

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a.w": rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
            "a.b": rng.standard_normal(3).astype(np.float32),
            "labels": rng.integers(0, 4, size=7).astype(np.int32),
        }
        p1, p2 = tmp_path / "one.gwta", tmp_path / "two.gwta"
        write_archive(p1, tensors)
        write_archive(p2, read_archive(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_mixed_dtypes_preserved(self, tmp_path):
        path = tmp_path / "m.gwta"
        write_archive(path, {"f": np.ones(3, np.float32), "i": np.arange(3, dtype=np.int32)})
        back = read_archive(path)
        assert back["f"].dtype == np.float32
        assert back["i"].dtype == np.int32

    def test_scalar_rank_zero(self, tmp_path):
        path = tmp_path / "s.gwta"
        write_archive(path, {"s": np.float32(2.5)})
        assert read_archive(path)["s"].reshape(()) == np.float32(2.5)


class TestCorruption:
    def _valid(self, tmp_path):
        path = tmp_path / "v.gwta"
        write_archive(path, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
        return path

    def test_bad_magic(self, tmp_path):
        path = self._valid(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="bad magic at byte 0"):
            read_archive(path)

    def test_truncation_reports_offset_and_leaves_no_partial(self, tmp_path):
        path = self._valid(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 5])
        with pytest.raises(DataError, match="truncated.*at byte"):
            read_archive(path)

    def test_unknown_dtype_code(self, tmp_path):
        path = self._valid(tmp_path)
        blob = bytearray(path.read_bytes())
        # dtype byte sits after magic(4) + version(4) + count(4) + name_len(2) + name(1)
        blob[15] = 7
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="unknown dtype code 7.*at byte 15"):
            read_archive(path)

    def test_trailing_bytes(self, tmp_path):
        path = self._valid(tmp_path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DataError, match="trailing bytes"):
            read_archive(path)

    def test_unsupported_version(self, tmp_path):
        path = self._valid(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="version"):
            read_archive(path)


class TestDataset:
    def test_dataset_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.standard_normal((5, 3, 4, 4)).astype(np.float32)
        labels = rng.integers(0, 4, size=5).astype(np.int32)
        path = tmp_path / "d.gwta"
        write_dataset(path, images, labels)
        batch = load_dataset(path)
        assert np.array_equal(batch.images.data, images)
        assert np.array_equal(batch.labels, labels)
        assert batch.source == "d"
        assert len(batch) == 5

    def test_dataset_without_labels(self, tmp_path):
        path = tmp_path / "n.gwta"
        write_dataset(path, np.zeros((2, 1, 2, 2), np.float32))
        assert load_dataset(path).labels is None

    def test_dataset_missing_images(self, tmp_path):
        path = tmp_path / "bad.gwta"
        write_archive(path, {"notimages": np.zeros(3, np.float32)})
        with pytest.raises(DataError, match="missing 'images'"):
            load_dataset(path)

    def test_weights_reject_nonfinite(self, tmp_path):
        path = tmp_path / "w.gwta"
        bad = np.array([1.0, np.inf], np.float32)
        import struct

        from gaia_ood.archive import MAGIC

        parts = [MAGIC, struct.pack("<II", 1, 1), struct.pack("<H", 1), b"w",
                 struct.pack("<BB", 0, 1), struct.pack("<I", 2), bad.tobytes()]
        path.write_bytes(b"".join(parts))
        with pytest.raises(DataError, match="non-finite"):
            load_weights(path)
