"""Deterministic synthetic melt datasets shaped like the real benchmark.

The generator writes a dataset root with a static DEM and land mask, a
dense daily ground-truth melt field, coarse block-constant MAR-like and
PMW-like inputs, and swath-masked SAR-like targets on observed days.

Melt model: for day ``t`` a pixel at elevation ``z`` melts with probability
``sigmoid((U(t) - z) / w) * sigmoid((z - L) / w_l)``, where the snowline
``U(t)`` follows a half-sine over the season, a per-year offset and, on
event days, a jump sized so the melt area multiplies by ``event_factor``
relative to the previous day.  The snowline base is calibrated so the
season-mean melt share over land hits ``melt_ratio``.

Every random draw comes from a stream keyed on ``(seed, purpose, date)``,
so output does not depend on generation order.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .manifest import Manifest
from .raster import Raster

log = logging.getLogger(__name__)

COVERAGE_LEVELS = (0.05, 0.15, 0.45, 0.55, 0.70)
SEASON_START = (4, 1)
SEASON_END = (9, 30)

# stream keys for per-purpose random generators
_RNG_STATIC, _RNG_SWATH, _RNG_DAYS, _RNG_TRUTH, _RNG_MAR, _RNG_PMW, _RNG_YEAR, _RNG_WINTER = range(8)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 512
    height: int = 384
    cell_size: float = 100.0
    years: tuple[int, ...] = (2017, 2018, 2019, 2020, 2021, 2022, 2023)
    obs_per_month: int = 5
    obs_per_month_first_year: int = 3
    coverage_levels: tuple[float, ...] = COVERAGE_LEVELS
    patterns_per_level: int = 2
    first_year_coverage: float = 0.15
    land_fraction: float = 0.72
    max_elevation: float = 2400.0
    melt_ratio: float = 0.346
    snowline_amplitude: float = 700.0
    snowline_width: float = 40.0
    rockline: float = 120.0
    rockline_width: float = 30.0
    year_jitter: float = 60.0
    speckle: float = 0.03
    obs_noise: float = 0.0
    mar_factor: int = 50
    pmw_factor: int = 31
    mar_scale: float = 0.01  # WA1-like value of a fully melting block
    mar_bias: float = 250.0  # snowline shift in m, + early season, - late
    pmw_bias: float = 150.0
    pmw_winter_base: float = 205.0
    pmw_winter_spread: float = 12.0
    pmw_melt_gain: float = 55.0
    pmw_noise: float = 1.0
    winter_days: int = 6
    events: tuple[str, ...] = ("2018-06-04", "2019-06-12", "2022-09-03")
    event_factor: float = 2.0
    dense_range: tuple[str, str] | None = ("2019-06-05", "2019-06-18")
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigError(f"degenerate synthetic grid {self.width}x{self.height}")
        if not 0 < self.land_fraction < 1:
            raise ConfigError("land fraction must be in (0, 1)")
        if not self.years:
            raise ConfigError("at least one year is required")
        for c in self.coverage_levels + (self.first_year_coverage,):
            if not 0 < c <= 1:
                raise ConfigError(f"coverage level {c} outside (0, 1]")
        if self.obs_per_month < 1 or self.obs_per_month_first_year < 1:
            raise ConfigError("need at least one observation per month")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["years"] = list(self.years)
        d["coverage_levels"] = list(self.coverage_levels)
        d["events"] = list(self.events)
        d["dense_range"] = list(self.dense_range) if self.dense_range else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("years", "coverage_levels", "events"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        if d.get("dense_range") is not None:
            d["dense_range"] = tuple(d["dense_range"])
        return cls(**d)

    @classmethod
    def full_shape(cls, **overrides) -> "SynthConfig":
        """Full study-area grid (2863 x 1633 pixels)."""
        return cls(width=1633, height=2863, **overrides)


def _rng(cfg: SynthConfig, purpose: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, purpose, *keys])


def season_phase(day: dt.date) -> float:
    """0 at the start of April, 1 at the end of September."""
    start = dt.date(day.year, *SEASON_START)
    end = dt.date(day.year, *SEASON_END)
    return float(np.clip((day - start).days / (end - start).days, 0.0, 1.0))


def season_days(year: int) -> list[dt.date]:
    start = dt.date(year, *SEASON_START)
    end = dt.date(year, *SEASON_END)
    return [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    """Replace each ``factor`` x ``factor`` block by its mean (edge blocks partial)."""
    h, w = values.shape
    H, W = -(-h // factor), -(-w // factor)
    pad = np.zeros((H * factor, W * factor))
    cnt = np.zeros_like(pad)
    pad[:h, :w] = values
    cnt[:h, :w] = 1.0
    s = pad.reshape(H, factor, W, factor).sum(axis=(1, 3))
    n = cnt.reshape(H, factor, W, factor).sum(axis=(1, 3))
    means = s / n
    return np.repeat(np.repeat(means, factor, axis=0), factor, axis=1)[:h, :w]


def block_noise(rng: np.random.Generator, shape, factor: int, scale: float) -> np.ndarray:
    h, w = shape
    H, W = -(-h // factor), -(-w // factor)
    coarse = rng.standard_normal((H, W)) * scale
    return np.repeat(np.repeat(coarse, factor, axis=0), factor, axis=1)[:h, :w]


@dataclass
class Terrain:
    dem: np.ndarray
    land: np.ndarray  # bool


def make_terrain(cfg: SynthConfig) -> Terrain:
    """Ocean along the southern edge, elevation rising inland with rough relief."""
    rng = _rng(cfg, _RNG_STATIC)
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # row 0 is north; the coast is a wavy line near the south edge
    wave = (0.06 * h * np.sin(2 * np.pi * xx / w * 1.5 + rng.uniform(0, 2 * np.pi))
            + 0.03 * h * np.sin(2 * np.pi * xx / w * 4.0 + rng.uniform(0, 2 * np.pi)))
    rough = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 40, mode="reflect")
    rough /= np.abs(rough).max() or 1.0
    coast_field = yy + wave + 0.05 * h * rough
    cut = np.quantile(coast_field, cfg.land_fraction)
    land = coast_field <= cut
    dist = ndimage.distance_transform_edt(land)
    inland = np.clip(dist / (0.85 * h), 0.0, 1.0)
    relief = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 60, mode="reflect")
    relief /= np.abs(relief).max() or 1.0
    dem = cfg.max_elevation * inland**0.8 + 150.0 * relief * inland
    dem = np.where(land, np.maximum(dem, 0.0), 0.0)
    return Terrain(dem, land)


def swath_patterns(cfg: SynthConfig) -> list[tuple[float, np.ndarray]]:
    """Straight-edged swath masks, ``patterns_per_level`` per coverage level."""
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = []
    for li, level in enumerate(cfg.coverage_levels):
        for k in range(cfg.patterns_per_level):
            rng = _rng(cfg, _RNG_SWATH, li, k)
            theta = np.deg2rad(rng.uniform(-35.0, 35.0))  # roughly north-south tracks
            proj = xx * np.cos(theta) + yy * np.sin(theta)
            lo_q = rng.uniform(0.0, 1.0 - level)
            lo, hi = np.quantile(proj, [lo_q, lo_q + level])
            out.append((level, (proj >= lo) & (proj <= hi)))
    return out


def first_year_pattern(cfg: SynthConfig) -> np.ndarray:
    """Single south-western swath used for the first year."""
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    proj = xx / w - yy / h
    return proj <= np.quantile(proj, cfg.first_year_coverage)


def observed_days(cfg: SynthConfig) -> list[dt.date]:
    events = {dt.date.fromisoformat(e) for e in cfg.events}
    out = set()
    for yi, year in enumerate(sorted(cfg.years)):
        per_month = cfg.obs_per_month_first_year if yi == 0 else cfg.obs_per_month
        for month in range(SEASON_START[0], SEASON_END[0] + 1):
            days = [d for d in season_days(year) if d.month == month]
            forced = sorted(e for e in events if e in days)
            pool = [d for d in days if d not in forced]
            rng = _rng(cfg, _RNG_DAYS, year, month)
            k = max(0, min(per_month - len(forced), len(pool)))
            picks = rng.choice(len(pool), size=k, replace=False)
            out.update(forced)
            out.update(pool[i] for i in picks)
    return sorted(out)


def winter_days(cfg: SynthConfig) -> list[dt.date]:
    out = []
    for year in sorted(cfg.years):
        rng = _rng(cfg, _RNG_WINTER, year)
        pool = [dt.date(year, 1, 1) + dt.timedelta(days=i) for i in range(59)]
        picks = rng.choice(len(pool), size=min(cfg.winter_days, len(pool)), replace=False)
        out.extend(pool[i] for i in sorted(picks))
    return out


class MeltModel:
    """Noise-free melt probability and the snowline schedule for a terrain."""

    def __init__(self, cfg: SynthConfig, terrain: Terrain, masks: dict | None = None):
        self.cfg = cfg
        self.terrain = terrain
        # elevation quantiles stand in for the pixels when calibrating
        q = np.linspace(0.0, 1.0, 4097)
        self._land_z = np.quantile(terrain.dem[terrain.land], q)
        if masks:
            q = np.linspace(0.0, 1.0, 513)
            self._calib = [(d, np.quantile(terrain.dem[m], q), int(m.sum())) for d, m in sorted(masks.items()) if m.any()]
        else:
            days = [d for y in cfg.years for d in season_days(y)[::7]]
            self._calib = [(d, self._land_z, 1) for d in days]
        self.year_offset = {y: float(_rng(cfg, _RNG_YEAR, y).normal(0.0, cfg.year_jitter)) for y in cfg.years}
        self.base = self._calibrate_base()
        self.event_shift: dict[dt.date, float] = {}
        for e in sorted(dt.date.fromisoformat(s) for s in cfg.events):
            if e.year in cfg.years:
                self.event_shift[e] = self._solve_event(e)

    def probability(self, z, snowline: float):
        c = self.cfg
        return _sigmoid((snowline - z) / c.snowline_width) * _sigmoid((z - c.rockline) / c.rockline_width)

    def regular_snowline(self, day: dt.date, base: float | None = None) -> float:
        base = self.base if base is None else base
        return base + self.cfg.snowline_amplitude * np.sin(np.pi * season_phase(day)) + self.year_offset.get(day.year, 0.0)

    def snowline(self, day: dt.date) -> float:
        return self.regular_snowline(day) + self.event_shift.get(day, 0.0)

    def land_share(self, snowline: float, threshold: float = 0.1, z=None) -> float:
        """Share of land where the noise-free melt exceeds ``threshold``."""
        z = self._land_z if z is None else z
        return float((self.probability(z, snowline) > threshold).mean())

    def _calibrate_base(self) -> float:
        """Snowline base giving ``melt_ratio`` pooled over the calibration pixels."""
        weights = np.array([w for _, _, w in self._calib], dtype=np.float64)

        def mean_share(base):
            shares = [self.land_share(self.regular_snowline(d, base), z=z) for d, z, _ in self._calib]
            return float(np.dot(shares, weights) / weights.sum())

        lo, hi = -2 * self.cfg.max_elevation, 2 * self.cfg.max_elevation
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if mean_share(mid) < self.cfg.melt_ratio:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def _solve_event(self, day: dt.date) -> float:
        prior = self.land_share(self.regular_snowline(day - dt.timedelta(days=1)))
        goal = min(self.cfg.event_factor * prior, 0.98)
        u0 = self.regular_snowline(day)
        lo, hi = 0.0, 2 * self.cfg.max_elevation
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.land_share(u0 + mid) < goal:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


@dataclass
class DayFields:
    truth: np.ndarray
    mar: np.ndarray
    pmw: np.ndarray


def day_fields(cfg: SynthConfig, model: MeltModel, winter_base: np.ndarray, day: dt.date) -> DayFields:
    terrain = model.terrain
    z = terrain.dem
    key = day.toordinal()
    u = model.snowline(day)
    p = model.probability(z, u)
    speckle = _rng(cfg, _RNG_TRUTH, key).standard_normal(z.shape) * cfg.speckle
    truth = np.clip(p + speckle, 0.0, 1.0)
    truth[~terrain.land] = 0.0

    # coarse MAR: too much melt early, too little late
    phase = season_phase(day)
    mar_p = model.probability(z, u + cfg.mar_bias * np.cos(np.pi * phase)) * terrain.land
    mar = block_mean(mar_p, cfg.mar_factor) * cfg.mar_scale
    mar = mar * (1.0 + 0.05 * block_noise(_rng(cfg, _RNG_MAR, key), z.shape, cfg.mar_factor, 1.0))
    mar = np.maximum(mar, 0.0)

    pmw_p = model.probability(z, u + cfg.pmw_bias * np.cos(np.pi * phase)) * terrain.land
    pmw = winter_base + cfg.pmw_melt_gain * block_mean(pmw_p, cfg.pmw_factor)
    pmw = pmw + block_noise(_rng(cfg, _RNG_PMW, key), z.shape, cfg.pmw_factor, cfg.pmw_noise)
    return DayFields(truth, mar, pmw)


def pmw_winter_base(cfg: SynthConfig, terrain: Terrain) -> np.ndarray:
    rng = _rng(cfg, _RNG_STATIC, 1)
    base = cfg.pmw_winter_base + block_noise(rng, terrain.dem.shape, cfg.pmw_factor, cfg.pmw_winter_spread)
    # colder at altitude
    return base - 10.0 * block_mean(terrain.dem / cfg.max_elevation, cfg.pmw_factor)


@dataclass
class SynthDataset:
    root: Path
    manifest: Manifest
    observed: list[dt.date]
    daily: list[dt.date]
    events: dict[dt.date, float] = field(default_factory=dict)


def daily_days(cfg: SynthConfig, observed: list[dt.date]) -> list[dt.date]:
    days = set(observed)
    for e in cfg.events:
        d = dt.date.fromisoformat(e)
        if d.year in cfg.years:
            days.update({d - dt.timedelta(days=1), d, d + dt.timedelta(days=1)})
    if cfg.dense_range:
        a, b = (dt.date.fromisoformat(s) for s in cfg.dense_range)
        if a.year in cfg.years:
            days.update(a + dt.timedelta(days=i) for i in range((b - a).days + 1))
    return sorted(d for d in days if d.month in range(SEASON_START[0], SEASON_END[0] + 1))


def observation_masks(cfg: SynthConfig, terrain: Terrain, observed=None) -> dict[dt.date, np.ndarray]:
    """Valid-pixel mask (swath and land) of every observed day."""
    patterns = swath_patterns(cfg)
    first_mask = first_year_pattern(cfg)
    first_year = min(cfg.years)
    out = {}
    for day in observed_days(cfg) if observed is None else observed:
        if day.year == first_year:
            swath = first_mask
        else:
            rng = _rng(cfg, _RNG_SWATH, 1000, day.toordinal())
            swath = patterns[int(rng.integers(len(patterns)))][1]
        out[day] = swath & terrain.land
    return out


def generate_synthetic(cfg: SynthConfig, root) -> SynthDataset:
    """Write a synthetic dataset under ``root`` and return its index."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create dataset root {root}: {exc}") from exc
    terrain = make_terrain(cfg)
    observed = observed_days(cfg)
    masks = observation_masks(cfg, terrain, observed)
    model = MeltModel(cfg, terrain, masks)
    daily = daily_days(cfg, observed)
    wbase = pmw_winter_base(cfg, terrain)

    man = Manifest(root, meta={"generator": "meltbench.synth", "config": cfg.to_dict()})
    cs = cfg.cell_size
    man.add("dem", Raster(terrain.dem, cs))
    man.add("landmask", Raster(terrain.land.astype(np.float32), cs))

    for day in winter_days(cfg):
        noise = block_noise(_rng(cfg, _RNG_PMW, day.toordinal()), terrain.dem.shape, cfg.pmw_factor, cfg.pmw_noise)
        man.add("pmw_tb", Raster(wbase + noise, cs), date=day)

    for day in daily:
        f = day_fields(cfg, model, wbase, day)
        man.add("truth", Raster(f.truth, cs), date=day)
        man.add("mar_wa1", Raster(f.mar, cs), date=day)
        man.add("pmw_tb", Raster(f.pmw, cs), date=day)
        if day in masks:
            obs = f.truth
            if cfg.obs_noise > 0:
                rng = _rng(cfg, _RNG_TRUTH, 1000, day.toordinal())
                obs = np.clip(obs + rng.standard_normal(obs.shape) * cfg.obs_noise, 0.0, 1.0)
            target = np.where(masks[day], obs, np.nan)
            man.add("sar_target", Raster(target, cs), date=day)
    man.meta["events"] = {d.isoformat(): s for d, s in sorted(model.event_shift.items())}
    man.save()
    log.info("synthetic dataset: %d observed days, %d daily days under %s", len(observed), len(daily), root)
    return SynthDataset(root, man, observed, daily, dict(model.event_shift))


def load_config(path) -> SynthConfig:
    with open(path) as fh:
        return SynthConfig.from_dict(json.load(fh))


def scaled(cfg: SynthConfig, width: int, height: int) -> SynthConfig:
    return replace(cfg, width=width, height=height)
