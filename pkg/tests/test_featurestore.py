import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protorect.errors import DataError, DegenerateVectorError, FormatError, TruncationError
from protorect.featurestore import FeatureSet, load, normalize, normalize_rows, save, synth


def _fs(rng, count=12, dim=5, classes=3, names=None):
    labels = np.arange(count) % classes
    return FeatureSet(vectors=rng.standard_normal((count, dim)), labels=labels, class_names=names)


class TestFeatureSet:
    def test_fields(self, rng):
        fs = _fs(rng)
        assert (fs.count, fs.dim, fs.num_classes) == (12, 5, 3)
        assert fs.vectors.dtype == np.float32

    def test_immutable(self, rng):
        fs = _fs(rng)
        with pytest.raises(ValueError):
            fs.vectors[0, 0] = 1.0
        with pytest.raises(AttributeError):
            fs.labels = np.zeros(12)

    def test_rejects_nan(self):
        with pytest.raises(DataError):
            FeatureSet(vectors=[[1.0, np.nan]], labels=[0])

    def test_rejects_unreferenced_class(self):
        with pytest.raises(DataError, match="class 1"):
            FeatureSet(vectors=np.ones((2, 2)), labels=[0, 2])

    def test_class_names_must_cover_labels(self):
        with pytest.raises(DataError):
            FeatureSet(vectors=np.ones((2, 2)), labels=[0, 1], class_names=["a"])

    def test_class_index(self, rng):
        fs = _fs(rng)
        for c, rows in enumerate(fs.class_index):
            assert np.all(fs.labels[rows] == c)
            assert rows.size == 4


class TestBinaryFormat:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        fs = _fs(rng, names=["cat", "dög", ""])
        path = tmp_path / "f.prfs"
        save(fs, path)
        back = load(path, "binary")
        assert back == fs
        assert back.vectors.tobytes() == fs.vectors.tobytes()
        assert back.class_names == ("cat", "dög", "")

    def test_round_trip_without_names(self, rng, tmp_path):
        fs = _fs(rng)
        save(fs, tmp_path / "f.bin")
        assert load(tmp_path / "f.bin") == fs

    def test_header_layout(self, rng, tmp_path):
        fs = _fs(rng, count=4, dim=2, classes=2)
        save(fs, tmp_path / "f.bin")
        raw = (tmp_path / "f.bin").read_bytes()
        magic, version, count, dim, ncls, flags = struct.unpack_from("<4sIQIIB", raw)
        assert (magic, version, count, dim, ncls, flags) == (b"PRFS", 1, 4, 2, 2, 0)
        assert len(raw) == 25 + 4 * 4 + 4 * 4 * 2

    def test_truncated_payload(self, tmp_path):
        fs = FeatureSet(vectors=np.ones((10, 3)), labels=np.arange(10) % 2)
        save(fs, tmp_path / "f.bin")
        raw = (tmp_path / "f.bin").read_bytes()
        (tmp_path / "short.bin").write_bytes(raw[:-12])  # 9 rows of payload
        with pytest.raises(TruncationError):
            load(tmp_path / "short.bin")

    def test_bad_magic(self, rng, tmp_path):
        save(_fs(rng), tmp_path / "f.bin")
        raw = bytearray((tmp_path / "f.bin").read_bytes())
        raw[:4] = b"NOPE"
        (tmp_path / "f.bin").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load(tmp_path / "f.bin")

    def test_bad_version(self, rng, tmp_path):
        save(_fs(rng), tmp_path / "f.bin")
        raw = bytearray((tmp_path / "f.bin").read_bytes())
        raw[4:8] = struct.pack("<I", 7)
        (tmp_path / "f.bin").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load(tmp_path / "f.bin")

    def test_non_finite_payload(self, rng, tmp_path):
        save(_fs(rng, count=3, dim=2, classes=3), tmp_path / "f.bin")
        raw = bytearray((tmp_path / "f.bin").read_bytes())
        off = 25 + 3 * 4
        raw[off : off + 4] = struct.pack("<f", float("inf"))
        (tmp_path / "f.bin").write_bytes(bytes(raw))
        with pytest.raises(DataError):
            load(tmp_path / "f.bin")


class TestCsv:
    def test_parse(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("label,f0,f1\n0,1.0,0.0\n1,0.0,1.0\n")
        fs = load(path)
        assert (fs.count, fs.dim) == (2, 2)
        assert fs.labels.tolist() == [0, 1]

    def test_round_trip(self, rng, tmp_path):
        fs = _fs(rng)
        save(fs, tmp_path / "f.csv", "csv")
        assert load(tmp_path / "f.csv") == fs

    def test_bad_header(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("y,a,b\n0,1,2\n")
        with pytest.raises(FormatError):
            load(path)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("label,f0\n0,nan\n")
        with pytest.raises(DataError):
            load(path)


class TestNormalize:
    def test_pythagorean(self):
        fs = FeatureSet(vectors=[[3.0, 4.0], [1.0, 0.0]], labels=[0, 1])
        np.testing.assert_allclose(normalize(fs).vectors, [[0.6, 0.8], [1.0, 0.0]], atol=1e-7)

    def test_zero_row_named(self):
        fs = FeatureSet(vectors=[[1.0, 0.0], [0.0, 0.0]], labels=[0, 1])
        with pytest.raises(DegenerateVectorError, match="row 1") as err:
            normalize(fs)
        assert err.value.index == 1

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (6, 4), elements=st.floats(-100, 100)).filter(
            lambda a: np.all(np.linalg.norm(a.astype(np.float32), axis=1) > 1e-3)
        ),
        st.floats(1e-3, 1e3),
    )
    def test_idempotent_and_scale_invariant(self, x, c):
        fs = FeatureSet(vectors=x, labels=np.arange(6) % 2)
        v = normalize(fs).vectors
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(normalize_rows(v), v, atol=1e-6)
        scaled = FeatureSet(vectors=x.astype(np.float32).astype(np.float64) * c, labels=fs.labels)
        np.testing.assert_allclose(normalize(scaled).vectors, v, atol=1e-6)


class TestSynth:
    def test_deterministic(self):
        assert synth(4, 5, 8, 0.1, seed=3) == synth(4, 5, 8, 0.1, seed=3)
        assert not synth(4, 5, 8, 0.1, seed=3) == synth(4, 5, 8, 0.1, seed=4)

    def test_zero_spread_rows_equal_mean(self):
        fs = synth(3, 6, 5, 0.0, seed=0)
        for rows in fs.class_index:
            block = fs.vectors[rows]
            assert np.all(block == block[0])
            np.testing.assert_allclose(np.linalg.norm(block[0]), 1.0, atol=1e-6)

    @pytest.mark.parametrize("concentration", [0.0, 3.0])
    def test_within_beats_cross_cosine(self, concentration):
        view = normalize(synth(5, 40, 64, 0.1, seed=9, concentration=concentration))
        gram = view.vectors @ view.vectors.T
        same = view.labels[:, None] == view.labels[None, :]
        np.fill_diagonal(same, False)
        cross = view.labels[:, None] != view.labels[None, :]
        assert gram[same].mean() > gram[cross].mean()

    def test_class_means_distinct(self):
        fs = synth(10, 2, 4, 0.0, seed=2, concentration=5.0)
        means = fs.vectors[[rows[0] for rows in fs.class_index]]
        assert len({m.tobytes() for m in means}) == 10

    def test_preconditions(self):
        with pytest.raises(ValueError):
            synth(1, 5, 5, 0.1, 0)
        with pytest.raises(ValueError):
            synth(3, 5, 5, -0.1, 0)
