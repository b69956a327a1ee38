"""Benchmark harness for gap-filling daily surface-meltwater rasters."""

from .raster import Grid, Raster, apply_landmask, load_raster, save_raster, valid_stats
from .manifest import Manifest, RasterSeries

__version__ = "0.1.0"
