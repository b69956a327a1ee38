import datetime as dt
import filecmp

import numpy as np
import pytest

from meltbench.errors import ConfigError
from meltbench.manifest import Manifest
from meltbench.synth import SynthConfig, generate_synthetic, make_terrain, swath_patterns, first_year_pattern


def blocks_constant(v, f):
    h, w = v.shape
    for r in range(0, h, f):
        for c in range(0, w, f):
            b = v[r: r + f, c: c + f]
            if not np.all(b == b.flat[0]):
                return False
    return True


class TestDeterminism:
    def test_byte_identical(self, tmp_path, small_cfg):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic(small_cfg, a)
        generate_synthetic(small_cfg, b)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        _, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
        assert not mismatch and not errors

    def test_seed_matters(self, small_cfg):
        from dataclasses import replace
        t1 = make_terrain(small_cfg).dem
        t2 = make_terrain(replace(small_cfg, seed=small_cfg.seed + 1)).dem
        assert not np.array_equal(t1, t2)


class TestContents:
    def test_streams(self, small_manifest):
        assert set(small_manifest.streams()) == {"dem", "landmask", "mar_wa1", "pmw_tb", "sar_target", "truth"}

    def test_truth_dense_and_targets_match(self, small_manifest):
        truth = small_manifest.series("truth")
        for day, y in small_manifest.series("sar_target"):
            t = truth[day].values
            assert not np.isnan(t).any() and ((t >= 0) & (t <= 1)).all()
            ok = ~np.isnan(y.values)
            assert ok.any()
            assert np.array_equal(y.values[ok], t[ok])

    def test_coarse_fields_block_constant(self, small_manifest, small_cfg):
        day = small_manifest.series("sar_target").dates[5]
        assert blocks_constant(small_manifest.series("mar_wa1")[day].values, small_cfg.mar_factor)
        assert blocks_constant(small_manifest.series("pmw_tb")[day].values, small_cfg.pmw_factor)

    def test_winter_pmw_each_year(self, small_manifest, small_cfg):
        pmw_days = small_manifest.series("pmw_tb").dates
        for y in small_cfg.years:
            assert any(d.year == y and d.month in (1, 2) for d in pmw_days)

    def test_land_fraction(self, small_manifest, small_cfg):
        land = small_manifest.static("landmask").values
        assert abs(land.mean() - small_cfg.land_fraction) < 0.01

    def test_seasonal_unimodal(self, small_manifest):
        land = small_manifest.static("landmask").values > 0.5
        by_month = {}
        for day, r in small_manifest.series("truth"):
            by_month.setdefault(day.month, []).append(r.values[land].mean())
        means = [np.mean(by_month[m]) for m in range(4, 10)]
        peak = int(np.argmax(means))
        assert peak in (2, 3)  # June or July
        assert all(a < b for a, b in zip(means[:peak], means[1: peak + 1]))
        assert all(a > b for a, b in zip(means[peak:], means[peak + 1:]))

    def test_event_doubles(self, small_manifest, small_cfg):
        truth = small_manifest.series("truth")
        for e in small_cfg.events:
            d = dt.date.fromisoformat(e)
            after = (truth[d].values > 0.1).sum()
            before = (truth[d - dt.timedelta(days=1)].values > 0.1).sum()
            assert 1.7 < after / before < 2.3


class TestSwaths:
    def test_coverage_levels(self):
        cfg = SynthConfig()
        for level, mask in swath_patterns(cfg):
            assert abs(mask.mean() - level) <= 0.02
        assert abs(first_year_pattern(cfg).mean() - cfg.first_year_coverage) <= 0.02

    def test_observation_fraction_55(self):
        cfg = SynthConfig(coverage_levels=(0.55,), patterns_per_level=3)
        for _, mask in swath_patterns(cfg):
            assert abs(mask.mean() - 0.55) <= 0.02


class TestDefaultDataset:
    def test_melt_ratio_near_35_65(self, tmp_path):
        generate_synthetic(SynthConfig(), tmp_path)
        man = Manifest.load(tmp_path)
        melt = valid = 0
        for _, r in man.series("sar_target"):
            v = r.values
            ok = ~np.isnan(v)
            melt += int((v[ok] > 0.1).sum())
            valid += int(ok.sum())
        assert abs(melt / valid - 0.35) <= 0.05


class TestErrors:
    def test_degenerate(self):
        with pytest.raises(ConfigError):
            SynthConfig(width=2, height=2)
        with pytest.raises(ConfigError):
            SynthConfig(land_fraction=1.0)

    def test_unwritable(self, tmp_path, small_cfg):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(ConfigError):
            generate_synthetic(small_cfg, blocker / "sub")
