import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meltbench.errors import ConfigError, DataError, GridMismatchError, RasterFormatError
from meltbench.manifest import Manifest, MissingDate, RasterSeries, check_aligned
from meltbench.raster import HEADER_SIZE, Grid, Raster, apply_landmask, load_raster, read_header, save_raster, valid_stats


def _bytes_with(path, header, payload):
    path.write_bytes(header + payload)
    return path


class TestRoundTrip:
    def test_small_with_nan(self, tmp_path):
        r = Raster(np.array([[0.1, np.nan, 0.3], [1.0, 0.0, 0.5]], dtype=np.float32), cell_size=100.0)
        back = load_raster(save_raster(r, tmp_path / "a.mwbr"))
        assert back == r
        assert np.array_equal(np.isnan(back.values), np.isnan(r.values))
        assert back.grid == Grid(3, 2, 100.0)

    def test_full_shape_payload(self, tmp_path):
        h, w = 2863, 1633
        r = Raster(np.zeros((h, w), dtype=np.float32))
        path = save_raster(r, tmp_path / "big.mwbr")
        assert read_header(path)[:2] == (w, h)
        assert (path.stat().st_size - HEADER_SIZE) // 4 == 4_675_279
        assert load_raster(path).values.size == 4_675_279

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                  elements=st.floats(0, 1, width=32) | st.just(np.nan)),
           st.sampled_from([10.0, 100.0, 30.0]))
    def test_property_identity(self, tmp_path_factory, values, cell):
        path = tmp_path_factory.mktemp("rt") / "x.mwbr"
        r = Raster(values, cell)
        back = load_raster(save_raster(r, path))
        assert back == r and back.cell_size == r.cell_size


class TestFormatErrors:
    def test_bad_magic(self, tmp_path):
        head = struct.pack("<4sHHIIf", b"XXXX", 1, 0, 2, 2, 100.0)
        with pytest.raises(RasterFormatError, match="magic"):
            load_raster(_bytes_with(tmp_path / "m", head, b"\0" * 16))

    def test_bad_version(self, tmp_path):
        head = struct.pack("<4sHHIIf", b"MWBR", 9, 0, 2, 2, 100.0)
        with pytest.raises(RasterFormatError, match="version"):
            load_raster(_bytes_with(tmp_path / "v", head, b"\0" * 16))

    def test_truncated(self, tmp_path):
        head = struct.pack("<4sHHIIf", b"MWBR", 1, 0, 3, 3, 100.0)
        with pytest.raises(RasterFormatError, match="truncated"):
            load_raster(_bytes_with(tmp_path / "t", head, b"\0" * 20))

    def test_overflow(self, tmp_path):
        head = struct.pack("<4sHHIIf", b"MWBR", 1, 0, 2**20, 2**20, 100.0)
        with pytest.raises(RasterFormatError, match="overflow"):
            load_raster(_bytes_with(tmp_path / "o", head, b""))

    def test_trailing(self, tmp_path):
        head = struct.pack("<4sHHIIf", b"MWBR", 1, 0, 1, 1, 100.0)
        with pytest.raises(RasterFormatError):
            load_raster(_bytes_with(tmp_path / "x", head, b"\0" * 8))

    def test_raster_rejects_bad_input(self):
        with pytest.raises((ConfigError, DataError, ValueError)):
            Raster(np.zeros((0, 3)))
        with pytest.raises((ConfigError, DataError, ValueError)):
            Raster(np.zeros((2, 2)), cell_size=-1)


class TestLandmask:
    def test_cases(self):
        vals = Raster(np.array([[0.7, 0.7, np.nan]], dtype=np.float32))
        lm = Raster(np.array([[1.0, 0.0, 1.0]], dtype=np.float32))
        out = apply_landmask(vals, lm).values
        assert out[0, 0] == np.float32(0.7)
        assert np.isnan(out[0, 1]) and np.isnan(out[0, 2])

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            apply_landmask(Raster(np.zeros((2, 2))), Raster(np.ones((2, 3))))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, (5, 6), elements=st.floats(0, 1, width=32) | st.just(np.nan)),
           arrays(np.float32, (5, 6), elements=st.floats(0, 1, width=32)))
    def test_idempotent(self, values, mask):
        r, lm = Raster(values), Raster(mask)
        once = apply_landmask(r, lm)
        assert apply_landmask(once, lm) == once


class TestValidStats:
    def test_all_nan(self):
        assert valid_stats(Raster(np.full((4, 4), np.nan))) == (0, 0.0)

    def test_count(self):
        v = np.full(100, np.nan)
        v[:37] = 0.5
        assert valid_stats(Raster(v.reshape(10, 10))) == (37, 0.37)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)),
                  elements=st.floats(0, 1, width=32) | st.just(np.nan)))
    def test_partition(self, values):
        n, frac = valid_stats(Raster(values))
        assert n + int(np.isnan(values).sum()) == values.size
        assert frac == n / values.size


class TestSeriesAndManifest:
    def test_duplicate_dates_rejected(self):
        r = Raster(np.zeros((2, 2)))
        with pytest.raises(DataError):
            RasterSeries("sar_target", [("2019-06-01", r), ("2019-06-01", r)])

    def test_sorted_and_missing(self):
        r = Raster(np.zeros((2, 2)))
        s = RasterSeries("sar_target", [("2019-06-03", r), ("2019-06-01", r)])
        assert [d.day for d in s.dates] == [1, 3]
        with pytest.raises(MissingDate):
            s["2019-06-02"]

    def test_alignment(self):
        r = Raster(np.zeros((2, 2)))
        a = RasterSeries("sar_target", [("2019-06-01", r)])
        b = RasterSeries("prediction", [("2019-06-02", r)])
        with pytest.raises(DataError):
            check_aligned(a, b)

    def test_manifest_round_trip(self, tmp_path):
        man = Manifest(tmp_path)
        r = Raster(np.arange(6, dtype=np.float32).reshape(2, 3) / 10)
        man.add("sar_target", r, date="2019-06-01")
        man.add("dem", r)
        man.save()
        again = Manifest.load(tmp_path)
        assert again.series("sar_target")["2019-06-01"] == r
        assert again.static("dem") == r
        assert (tmp_path / "manifest.json").read_text() == man.save().read_text()

    def test_mixed_grids(self, tmp_path):
        man = Manifest(tmp_path)
        man.add("sar_target", Raster(np.zeros((2, 2))), date="2019-06-01")
        man.add("sar_target", Raster(np.zeros((3, 2))), date="2019-06-02")
        with pytest.raises(GridMismatchError):
            man.series("sar_target")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError):
            Manifest.load(tmp_path)
