"""Planted-parameter problems shared by the baseline and acceptance tests."""

import datetime as dt

import numpy as np

from meltbench.baselines.dem import DemBandParams, MONTHS, threshold_dem_predict
from meltbench.baselines.mar import MarCalibParams, interpolate_mar
from meltbench.manifest import RasterSeries
from meltbench.raster import Raster

# melt band (low, high) edges in meters per month
BANDS = {4: (300, 600), 5: (300, 800), 6: (300, 1100), 7: (350, 1300), 8: (350, 1200), 9: (300, 700)}


def band_params(bands=BANDS, c=4.0):
    a, b = [], []
    for m in MONTHS:
        lo, hi = bands[m]
        half = (hi - lo) / 2
        a.append(c / half)
        b.append(-(c / half) * (hi + lo) / 2)
    return DemBandParams(tuple(a), tuple(b), c)


def planted_dem(shape=(192, 256), per_month=8, seed=1):
    """DEM, planted params and swath-masked targets generated from the model itself."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    elev = 2000.0 * yy / h + 100.0 * np.sin(xx / 17.0) + 50.0 * rng.standard_normal(shape)
    dem = Raster(elev)
    planted = band_params()
    items = []
    for m in MONTHS:
        truth = threshold_dem_predict(dem, planted, m).values
        for k in range(per_month):
            proj = xx * np.cos(k) + yy * np.sin(k)
            lo, hi = np.quantile(proj, [0.2, 0.7])
            y = np.where((proj > lo) & (proj < hi), truth, np.nan)
            items.append((dt.date(2019, m, 1 + 3 * k), Raster(y)))
    return dem, planted, RasterSeries("sar_target", items)


def band_iou(dem, fitted, planted, month, thr=0.1):
    a = threshold_dem_predict(dem, fitted, month).values > thr
    b = threshold_dem_predict(dem, planted, month).values > thr
    return (a & b).sum() / (a | b).sum()


def planted_mar(shape=(64, 80), n=4, seed=3, params=MarCalibParams(91, 33.0, 2.0, 120.0)):
    """MAR-like inputs and targets produced by ``interpolate_mar`` at ``params``."""
    rng = np.random.default_rng(seed)
    h, w = shape
    land = Raster(np.ones(shape))
    ins, outs = [], []
    for k in range(n):
        coarse = rng.random((h // 16 + 1, w // 16 + 1)) * 0.012
        field = np.repeat(np.repeat(coarse, 16, axis=0), 16, axis=1)[:h, :w]
        mar = Raster(field)
        day = dt.date(2019, 6, 1 + k)
        ins.append((day, mar))
        outs.append((day, interpolate_mar(mar, params, land)))
    return RasterSeries("mar_wa1", ins), RasterSeries("sar_target", outs), land, params
