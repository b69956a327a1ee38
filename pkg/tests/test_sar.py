import datetime as dt
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meltbench.errors import DataError, MissingWinterBaselineError
from meltbench.raster import Raster
from meltbench.sar import (
    SarScene,
    aggregate_fraction,
    derive_targets,
    group_by_repeat_cycle,
    mosaic_daily,
    threshold_melt,
    winter_mean_backscatter,
)

T0 = dt.datetime(2018, 12, 3, 8, 15, 30)
D12 = dt.timedelta(days=12)
binary = st.sampled_from([0.0, 1.0, np.nan])


def r10(values):
    return Raster(np.asarray(values, dtype=np.float64), cell_size=10.0)


class TestGrouping:
    def test_within_tolerance(self):
        assert group_by_repeat_cycle([T0, T0 + D12 + dt.timedelta(seconds=2)]) == [0, 0]

    def test_outside_tolerance(self):
        assert group_by_repeat_cycle([T0, T0 + D12 + dt.timedelta(seconds=10)]) == [0, 1]

    def test_chain(self):
        ts = [T0, T0 + D12, T0 + 2 * D12 + dt.timedelta(seconds=3)]
        assert group_by_repeat_cycle(ts) == [0, 0, 0]

    def test_interleaved_orbits_and_input_order(self):
        other = T0 + dt.timedelta(days=5, hours=3)
        ts = [other + D12, T0, T0 + D12, other]
        assert group_by_repeat_cycle(ts) == [1, 0, 0, 1]

    def test_boundary_is_inclusive(self):
        assert group_by_repeat_cycle([T0, T0 + D12 - dt.timedelta(seconds=4)]) == [0, 0]
        assert group_by_repeat_cycle([T0, T0 + D12 + dt.timedelta(seconds=5)]) == [0, 1]


class TestWinterAndThreshold:
    def test_winter_mean(self):
        g = [SarScene(dt.datetime(2018, 12, 10), r10([[-9.0]])), SarScene(dt.datetime(2019, 1, 21), r10([[-11.0]])),
             SarScene(dt.datetime(2019, 6, 1), r10([[-20.0]]))]
        assert winter_mean_backscatter(g, 2019).values[0, 0] == -10.0
        assert winter_mean_backscatter(g[1:2], 2019).values[0, 0] == -11.0

    def test_missing_winter(self):
        with pytest.raises(MissingWinterBaselineError, match="missing winter reference"):
            winter_mean_backscatter([SarScene(dt.datetime(2019, 6, 1), r10([[-20.0]]))], 2019)

    def test_december_of_same_year_not_used(self):
        g = [SarScene(dt.datetime(2019, 12, 10), r10([[-9.0]]))]
        with pytest.raises(MissingWinterBaselineError):
            winter_mean_backscatter(g, 2019)

    def test_threshold_cases(self):
        wm = r10([[-10.0, -10.0, -10.0, np.nan]])
        out = threshold_melt(r10([[-13.5, -12.9, -13.0, -20.0]]), wm).values
        assert out[0, :3].tolist() == [1.0, 0.0, 0.0] and np.isnan(out[0, 3])


class TestMosaic:
    def test_rules(self):
        out = mosaic_daily([r10([[1.0, np.nan, np.nan, 0.0]]), r10([[0.0, 0.0, np.nan, 0.0]])]).values
        assert out[0, 0] == 1 and out[0, 1] == 0 and np.isnan(out[0, 2]) and out[0, 3] == 0

    def test_empty(self):
        with pytest.raises(DataError):
            mosaic_daily([])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(arrays(np.float64, (3, 4), elements=binary), min_size=1, max_size=4))
    def test_commutative_idempotent(self, arrs):
        rs = [r10(a) for a in arrs]
        base = mosaic_daily(rs)
        for perm in itertools.islice(itertools.permutations(rs), 6):
            assert mosaic_daily(list(perm)) == base
        assert mosaic_daily(rs + rs) == base


class TestAggregate:
    def test_counting(self, rng):
        v = np.zeros(100)
        v[rng.choice(100, 37, replace=False)] = 1
        assert aggregate_fraction(r10(v.reshape(10, 10))).values[0, 0] == np.float32(0.37)

    def test_valid_only_denominator(self):
        v = np.array([np.nan] * 50 + [1.0] * 25 + [0.0] * 25).reshape(10, 10)
        out = aggregate_fraction(r10(v))
        assert out.values[0, 0] == 0.5 and out.cell_size == 100.0

    def test_all_nan_and_padding(self):
        v = np.full((12, 15), np.nan)
        v[10:, 10:] = 1.0
        out = aggregate_fraction(r10(v)).values
        assert out.shape == (2, 2) and np.isnan(out[0, 0]) and out[1, 1] == 1.0

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 25), st.integers(1, 25)), elements=binary))
    def test_melt_conserved(self, v):
        out = aggregate_fraction(r10(v), 5).values.astype(np.float64)
        h, w = v.shape
        pad = np.full((-(-h // 5) * 5, -(-w // 5) * 5), np.nan)
        pad[:h, :w] = v
        valid = (~np.isnan(pad)).reshape(out.shape[0], 5, out.shape[1], 5).sum(axis=(1, 3))
        ok = ~np.isnan(out)
        assert ((out[ok] >= 0) & (out[ok] <= 1)).all()
        assert np.sum(np.round(out[ok] * valid[ok])) == np.sum(v == 1)


def orbit(summer_time, image, winter):
    """A summer scene plus its 12-day back-chain to December (March steps carry no data)."""
    scenes = [SarScene(summer_time, r10(image))]
    t = summer_time - D12
    while t >= dt.datetime(2018, 12, 1):
        fill = winter if t.month in (12, 1, 2) else np.full_like(winter, np.nan)
        scenes.append(SarScene(t, r10(fill)))
        t -= D12
    return scenes


def hand_scenes():
    """Two orbit groups over a 20 x 20 (10 m) area, i.e. 2 x 2 cells at 100 m."""
    winter = np.full((20, 20), -10.0)
    a = np.full((20, 20), -11.0)
    a[0:10, 0:5] = -14.0        # 50 melt subcells in cell (0, 0)
    a[0:10, 5:10] = -13.0       # exactly -3 dB: not melt
    a[10:20, 10:20] = np.nan    # cell (1, 1) unobserved in orbit A
    b = np.full((20, 20), -10.5)
    b[10:15, 10:20] = -13.01    # orbit B sees melt in the upper half of cell (1, 1)
    b[15:20, 10:20] = np.nan
    b[0:10, 0:10] = np.nan
    b[0:2, 10:20] = -20.0       # 20 melt subcells in cell (0, 1)
    scenes = orbit(dt.datetime(2019, 4, 2, 8, 0, 0), a, winter)
    scenes += orbit(dt.datetime(2019, 4, 2, 20, 30, 0), b, winter)
    # a third pass without any winter history must be skipped
    scenes.append(SarScene(dt.datetime(2019, 4, 2, 14, 0, 0), r10(np.full((20, 20), -30.0))))
    return scenes


class TestEndToEnd:
    def test_hand_computed_fractions(self):
        out, log = derive_targets(hand_scenes())
        day = dt.date(2019, 4, 2)
        assert list(out) == [day]
        v = out[day].values
        assert v[0, 0] == np.float32(0.5)       # 50 of 100, -3.0 dB boundary excluded
        assert v[0, 1] == np.float32(0.2)       # OR with orbit A's zeros
        assert v[1, 0] == 0.0
        assert v[1, 1] == 1.0                   # only orbit B valid, 50 of 50
        assert len(log.skipped) == 1 and "winter" in log.skipped[0][1]
        assert out[day].cell_size == 100.0

    def test_artifact_mask(self):
        scenes = hand_scenes()
        t = dt.datetime(2019, 4, 2, 8, 0, 0)
        mask = np.zeros((20, 20), dtype=bool)
        mask[0:10, 0:10] = True
        out, _ = derive_targets(scenes, artifact_masks={t: mask})
        assert np.isnan(out[dt.date(2019, 4, 2)].values[0, 0])
