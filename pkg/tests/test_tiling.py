import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from meltbench.errors import ConfigError, CoverageError, DataError
from meltbench.raster import Raster
from meltbench.tiling import (
    BENCHMARK_TILES,
    PreprocConfig,
    TileSpec,
    coverage_counts,
    fit_normalization,
    mosaic_predict,
    preprocess_inputs,
    receptive_field,
    sample_tiles,
    tile_boxes,
)


@st.composite
def legal_specs(draw):
    tile = draw(st.integers(2, 40))
    erode = draw(st.integers(0, (tile - 1) // 2))
    stride = draw(st.integers(1, tile - 2 * erode))
    return TileSpec(tile, tile, stride, erode)


def identity(tile):
    return tile[0]


class TestTileSpec:
    @pytest.mark.parametrize("args", [(0, 0, 1, 0), (8, 8, 1, 4), (8, 8, 5, 2), (8, 8, 0, 0)])
    def test_illegal(self, args):
        with pytest.raises(ConfigError):
            TileSpec(*args)

    def test_benchmark_geometry(self):
        # eroded extent equals the stride, so interior tiles abut with no overlap
        assert BENCHMARK_TILES.tile_h - 2 * BENCHMARK_TILES.erode == BENCHMARK_TILES.stride
        counts = coverage_counts((1472, 1472), BENCHMARK_TILES)  # 512 + 2 * 480: no clamping
        assert (counts == 1).all()


class TestSampling:
    def test_degenerate(self):
        assert set(sample_tiles((64, 32), TileSpec(32, 64, 1, 0), 20, 0)) == {(0, 0)}

    def test_seeded(self):
        a = sample_tiles((100, 80), TileSpec(16, 16, 8, 2), 50, 7)
        assert a == sample_tiles((100, 80), TileSpec(16, 16, 8, 2), 50, 7)
        assert a != sample_tiles((100, 80), TileSpec(16, 16, 8, 2), 50, 8)

    def test_too_big(self):
        with pytest.raises(ConfigError):
            sample_tiles((10, 10), TileSpec(16, 16, 8, 2), 1, 0)

    def test_uniform_chi2(self):
        origins = np.array(sample_tiles((1024, 1024), TileSpec(512, 512, 480, 16), 10_000, 2024))
        assert origins.min() >= 0 and origins.max() <= 512
        for axis in (0, 1):
            counts, _ = np.histogram(origins[:, axis], bins=19, range=(0, 513))
            assert stats.chisquare(counts).pvalue > 0.01


class TestMosaic:
    def test_overlap_mean(self):
        spec = TileSpec(4, 4, 2, 0)
        calls = iter([0.2, 0.4, 0.2, 0.4])
        out = mosaic_predict(lambda t: np.full(t.shape[1:], next(calls)), np.zeros((4, 6)), spec)
        # tiles at cols 0 and 2 overlap on cols 2-3
        assert out.values[0, 2] == pytest.approx(0.3)

    def test_benchmark_tiles_identity(self, rng):
        x = rng.random((1100, 1250)).astype(np.float32)
        assert np.array_equal(mosaic_predict(identity, x, BENCHMARK_TILES).values, x)

    @settings(max_examples=20, deadline=None)
    @given(legal_specs(), st.integers(1, 70), st.integers(1, 70), st.integers(0, 2**32 - 1))
    def test_identity_random_specs(self, spec, h, w, seed):
        x = np.random.default_rng(seed).random((2, h, w)).astype(np.float32)
        assert np.array_equal(mosaic_predict(identity, x, spec).values, x[0])

    @settings(max_examples=20, deadline=None)
    @given(legal_specs(), st.integers(1, 60), st.integers(1, 60))
    def test_divisor_matches_counting(self, spec, h, w):
        c = spec.clamped(h, w)
        want = oracles.count_coverage(h, w, c.tile_h, c.tile_w, c.stride, c.erode)
        assert np.array_equal(coverage_counts((h, w), spec), want)

    def test_threads_deterministic(self, rng):
        x = rng.random((3, 90, 70)).astype(np.float32)
        f = lambda t: t.sum(axis=0) * 0.5  # noqa: E731
        a = mosaic_predict(f, x, TileSpec(24, 24, 12, 3), threads=1)
        b = mosaic_predict(f, x, TileSpec(24, 24, 12, 3), threads=4)
        assert a == b

    def test_wrong_shape(self):
        with pytest.raises(DataError):
            mosaic_predict(lambda t: np.zeros((2, 2)), np.zeros((10, 10)), TileSpec(4, 4, 2, 1))

    def test_border_tiles_not_eroded(self):
        boxes = tile_boxes((10, 10), TileSpec(6, 6, 4, 1))
        first = boxes[0]
        assert first.keep_rows == (0, 5) and first.keep_cols == (0, 5)

    def test_raster_list_input(self):
        rs = [Raster(np.full((8, 8), 0.25)), Raster(np.ones((8, 8)))]
        out = mosaic_predict(identity, rs, TileSpec(4, 4, 2, 1))
        assert np.all(out.values == 0.25)


class TestPreprocess:
    def test_standardization(self):
        cfg = PreprocConfig(channels=("dem",), blur={}, mean=(5.0,), std=(2.0,))
        assert preprocess_inputs([np.full((3, 3), 7.0)], cfg)[0, 0, 0] == 1.0

    def test_constant_channel(self):
        with pytest.raises(DataError):
            fit_normalization([[np.full((4, 4), 3.0)]], PreprocConfig(channels=("dem",), blur={}))
        with pytest.raises(DataError):
            PreprocConfig(std=(1.0, 0.0, 1.0, 1.0))

    def test_blur_constant(self, rng):
        const = np.full((60, 50), 0.3)
        stacks = [[const, np.full((60, 50), 210.0) + rng.random((60, 50)), rng.random((60, 50)) * 2000, rng.random((60, 50))]]
        cfg = PreprocConfig(mean=(0.0, 0.0, 0.0, 0.0), std=(1.0,) * 4)
        out = preprocess_inputs(stacks[0], cfg)
        assert np.allclose(out[0], 0.3, atol=1e-6)
        assert np.array_equal(out[2], stacks[0][2].astype(np.float32))

    def test_fit_then_apply(self, rng):
        stacks = [[rng.random((30, 30)) * k, rng.random((30, 30)) + 200, rng.random((30, 30)) * 1000, rng.random((30, 30))]
                  for k in (1, 2)]
        cfg = fit_normalization(stacks)
        both = np.stack([preprocess_inputs(s, cfg) for s in stacks]).astype(np.float64)
        assert np.allclose(both.mean(axis=(0, 2, 3)), 0, atol=1e-5)
        assert np.allclose(both.std(axis=(0, 2, 3)), 1, atol=1e-4)


class TestReceptiveField:
    def test_chain(self):
        assert [receptive_field(b) for b in range(5)] == [8, 20, 44, 92, 188]

    def test_negative(self):
        with pytest.raises(ConfigError):
            receptive_field(-1)
