"""Passive-microwave brightness-temperature threshold detector.

Melt is flagged where the observed brightness temperature exceeds a
linear function of the same year's January/February mean.  The slope and
intercept are fixed literature constants and are never fitted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import MissingWinterBaselineError
from ..manifest import RasterSeries
from ..raster import Raster, apply_landmask

N_PARAMS = 0
WINTER_MONTHS = (1, 2)


@dataclass(frozen=True)
class PmwThresholdParams:
    gamma: float = 0.48
    omega: float = 128.0  # Kelvin

    def to_dict(self) -> dict:
        return asdict(self)


def pmw_winter_mean(pmw: RasterSeries, year: int) -> Raster:
    """Valid-only per-pixel mean of the January and February images of ``year``."""
    days = [d for d in pmw.dates if d.year == year and d.month in WINTER_MONTHS]
    if not days:
        raise MissingWinterBaselineError(f"missing winter baseline: no Jan/Feb PMW images for {year}")
    total = count = None
    for d in days:
        v = pmw[d].values
        ok = ~np.isnan(v)
        if total is None:
            total = np.zeros(v.shape, dtype=np.float64)
            count = np.zeros(v.shape, dtype=np.int32)
        total[ok] += v[ok]
        count += ok
    out = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return Raster(out, pmw.grid.cell_size if pmw.grid else 100.0)


def pmw_threshold(winter_mean, params: PmwThresholdParams = PmwThresholdParams()) -> np.ndarray:
    wm = winter_mean.values if isinstance(winter_mean, Raster) else np.asarray(winter_mean)
    return params.gamma * wm.astype(np.float64) + params.omega


def threshold_pmw(
    pmw: Raster,
    winter_mean: Raster,
    params: PmwThresholdParams = PmwThresholdParams(),
    landmask: Raster | None = None,
) -> Raster:
    """Binary melt map: 1 where ``pmw > gamma * winter_mean + omega``.

    NaN where either input is missing or over ocean.
    """
    pmw.check_grid(winter_mean, "winter mean")
    obs = pmw.values.astype(np.float64)
    thr = pmw_threshold(winter_mean, params)
    out = (obs > thr).astype(np.float64)
    out[np.isnan(obs) | np.isnan(thr)] = np.nan
    result = Raster(out, pmw.cell_size)
    if landmask is not None:
        result = apply_landmask(result, landmask)
    return result


def predict_series(pmw: RasterSeries, dates, params: PmwThresholdParams, landmask: Raster) -> RasterSeries:
    winters: dict[int, Raster] = {}
    out = []
    for d in dates:
        if d.year not in winters:
            winters[d.year] = pmw_winter_mean(pmw, d.year)
        out.append((d, threshold_pmw(pmw[d], winters[d.year], params, landmask)))
    return RasterSeries("prediction", out)
