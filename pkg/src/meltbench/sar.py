"""Melt-fraction targets from calibrated 10 m SAR backscatter scenes.

Pipeline per melt season: group scenes by repeat orbit, average each
group's winter (Dec-Feb) scenes in dB, flag melt where a summer scene
falls more than 3 dB below its group's winter mean, OR-mosaic all
binaries of a day, then aggregate to 100 m as the fraction of valid 10 m
subcells that melt.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, MissingWinterBaselineError
from .raster import Raster

log = logging.getLogger(__name__)

REPEAT_CYCLE = dt.timedelta(days=12)
REPEAT_TOLERANCE = dt.timedelta(seconds=4)
THRESHOLD_DB = -3.0
AGG_FACTOR = 10
WINTER_MONTHS = (12, 1, 2)
SEASON_MONTHS = (4, 5, 6, 7, 8, 9)


@dataclass(frozen=True)
class SarScene:
    acquired: dt.datetime
    raster: Raster  # backscatter in dB on the 10 m grid
    orbit_group: int | None = None


def group_by_repeat_cycle(timestamps: Sequence[dt.datetime]) -> list[int]:
    """Assign orbit groups by chaining 12-day (+-4 s) revisits.

    A scene joins the group of the most recent earlier scene that lies
    12 days +- 4 s before it; otherwise it opens a new group.  Group ids
    count from 0 in order of first appearance.  Accepts timestamps or
    :class:`SarScene` objects; the result is aligned with the input order.
    """
    ts = [s.acquired if isinstance(s, SarScene) else s for s in timestamps]
    order = sorted(range(len(ts)), key=lambda i: ts[i])
    groups = [-1] * len(ts)
    next_id = 0
    seen: list[int] = []  # indices in time order
    for i in order:
        assigned = None
        for j in reversed(seen):
            gap = ts[i] - ts[j]
            if gap > REPEAT_CYCLE + REPEAT_TOLERANCE:
                break
            if abs(gap - REPEAT_CYCLE) <= REPEAT_TOLERANCE:
                assigned = groups[j]
                break
        if assigned is None:
            assigned = next_id
            next_id += 1
        groups[i] = assigned
        seen.append(i)
    return groups


def season_year(when: dt.date | dt.datetime) -> int:
    """Melt season a winter acquisition serves as reference for (Dec counts forward)."""
    return when.year + 1 if when.month == 12 else when.year


def is_winter_for(when: dt.date | dt.datetime, year: int) -> bool:
    return when.month in WINTER_MONTHS and season_year(when) == year


def _valid_mean(rasters: Sequence[Raster]) -> Raster:
    first = rasters[0]
    total = np.zeros(first.shape, dtype=np.float64)
    count = np.zeros(first.shape, dtype=np.int32)
    for r in rasters:
        first.check_grid(r, "scene")
        v = r.values
        ok = ~np.isnan(v)
        total[ok] += v[ok]
        count += ok
    out = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return Raster(out, first.cell_size)


def winter_mean_backscatter(group: Iterable[SarScene], year: int) -> Raster:
    """Valid-only dB mean of a group's Dec (year-1), Jan and Feb (year) scenes."""
    winter = [s.raster for s in group if is_winter_for(s.acquired, year)]
    if not winter:
        raise MissingWinterBaselineError(f"missing winter reference for season {year}")
    return _valid_mean(winter)


def threshold_melt(scene, winter_mean: Raster, threshold_db: float = THRESHOLD_DB) -> Raster:
    """1 where ``scene - winter_mean < threshold_db`` (strict), else 0; NaN if either is missing."""
    raster = scene.raster if isinstance(scene, SarScene) else scene
    raster.check_grid(winter_mean, "winter mean")
    diff = raster.values.astype(np.float64) - winter_mean.values.astype(np.float64)
    out = (diff < threshold_db).astype(np.float64)
    out[np.isnan(diff)] = np.nan
    return Raster(out, raster.cell_size)


def mosaic_daily(binaries: Sequence[Raster]) -> Raster:
    """OR-combine same-day binaries: melt wins, any observation beats missing."""
    if not binaries:
        raise DataError("nothing to mosaic")
    first = binaries[0]
    any_melt = np.zeros(first.shape, dtype=bool)
    any_valid = np.zeros(first.shape, dtype=bool)
    for b in binaries:
        first.check_grid(b, "binary")
        v = b.values
        any_melt |= v == 1
        any_valid |= ~np.isnan(v)
    out = np.where(any_melt, 1.0, np.where(any_valid, 0.0, np.nan))
    return Raster(out, first.cell_size)


def aggregate_fraction(binary: Raster, factor: int = AGG_FACTOR) -> Raster:
    """Fraction of valid subcells flagged as melt in each ``factor`` x ``factor`` block.

    Grids not divisible by ``factor`` are padded with NaN at the bottom and
    right.  Blocks without any valid subcell are NaN.
    """
    if factor < 1:
        raise ConfigError(f"aggregation factor must be >= 1, got {factor}")
    v = binary.values.astype(np.float64)
    h, w = v.shape
    H, W = -(-h // factor), -(-w // factor)
    padded = np.full((H * factor, W * factor), np.nan)
    padded[:h, :w] = v
    blocks = padded.reshape(H, factor, W, factor)
    valid = (~np.isnan(blocks)).sum(axis=(1, 3))
    melt = (blocks == 1).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(valid > 0, melt / np.maximum(valid, 1), np.nan)
    return Raster(frac, binary.cell_size * factor)


@dataclass
class DerivationLog:
    skipped: list[tuple[dt.datetime, str]]
    days: list[dt.date]


def derive_targets(
    scenes: Sequence[SarScene],
    threshold_db: float = THRESHOLD_DB,
    factor: int = AGG_FACTOR,
    artifact_masks: dict | None = None,
) -> tuple[dict[dt.date, Raster], DerivationLog]:
    """Full derivation from timestamped dB scenes to daily 100 m melt fractions.

    Scenes whose group lacks a winter reference are skipped and listed in
    the returned log.  ``artifact_masks`` maps an acquisition time to a
    boolean array of pixels to discard before thresholding.
    """
    scenes = sorted(scenes, key=lambda s: s.acquired)
    groups = group_by_repeat_cycle([s.acquired for s in scenes])
    scenes = [SarScene(s.acquired, s.raster, g) for s, g in zip(scenes, groups)]
    if artifact_masks:
        cleaned = []
        for s in scenes:
            m = artifact_masks.get(s.acquired)
            if m is not None:
                v = s.raster.values.copy()
                v[np.asarray(m, dtype=bool)] = np.nan
                s = SarScene(s.acquired, Raster(v, s.raster.cell_size), s.orbit_group)
            cleaned.append(s)
        scenes = cleaned

    by_group: dict[int, list[SarScene]] = {}
    for s in scenes:
        by_group.setdefault(s.orbit_group, []).append(s)

    winter_cache: dict[tuple[int, int], Raster | None] = {}
    daily: dict[dt.date, list[Raster]] = {}
    skipped = []
    for s in scenes:
        if s.acquired.month not in SEASON_MONTHS:
            continue
        key = (s.orbit_group, s.acquired.year)
        if key not in winter_cache:
            try:
                winter_cache[key] = winter_mean_backscatter(by_group[s.orbit_group], s.acquired.year)
            except MissingWinterBaselineError:
                winter_cache[key] = None
        wm = winter_cache[key]
        if wm is None:
            log.warning("scene %s (group %s): missing winter reference, skipped", s.acquired, s.orbit_group)
            skipped.append((s.acquired, "missing winter reference"))
            continue
        daily.setdefault(s.acquired.date(), []).append(threshold_melt(s, wm, threshold_db))

    out = {day: aggregate_fraction(mosaic_daily(bins), factor) for day, bins in sorted(daily.items())}
    return out, DerivationLog(skipped, sorted(out))
