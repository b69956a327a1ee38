"""Climate-model baseline: blurred and intensity-calibrated MAR liquid water content.

The transform order is blur, multiply by brightness, clamp to [0, 1],
raise to ``gamma``, clamp again, then apply the land mask.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError
from ..filters import gaussian_filter
from ..manifest import RasterSeries, check_aligned
from ..metrics import DEFAULT_SSIM, SsimConfig, SsimReference
from ..raster import Raster, apply_landmask

N_PARAMS = 4

DEFAULT_SWEEP = {
    "blur_kernel": [91, 131, 171, 201],
    "blur_sigma": [33.0, 66.0, 99.0],
    "gamma": [0.001, 0.1, 0.5, 1.0, 2.0, 5.0, 30.0],
    "brightness": [40.0, 80.0, 120.0, 160.0, 200.0],
}


@dataclass(frozen=True)
class MarCalibParams:
    blur_kernel: int = 131
    blur_sigma: float = 33.0
    gamma: float = 1.0
    brightness: float = 100.0

    def __post_init__(self):
        if self.blur_kernel < 3 or self.blur_kernel % 2 == 0:
            raise ConfigError(f"blur kernel must be odd and >= 3, got {self.blur_kernel}")
        if not self.blur_sigma > 0:
            raise ConfigError("blur sigma must be > 0")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if not self.brightness > 0:
            raise ConfigError("brightness must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def blur_mar(mar: Raster, kernel: int, sigma: float) -> np.ndarray:
    """Gaussian blur; missing MAR pixels enter as zero water content."""
    v = np.nan_to_num(mar.values.astype(np.float64), nan=0.0)
    return gaussian_filter(v, kernel, sigma)


def calibrate(blurred: np.ndarray, brightness: float, gamma: float) -> np.ndarray:
    v = np.clip(blurred * brightness, 0.0, 1.0)
    return np.clip(v**gamma, 0.0, 1.0)


def interpolate_mar(mar: Raster, params: MarCalibParams, landmask: Raster) -> Raster:
    mar.check_grid(landmask, "landmask")
    out = calibrate(blur_mar(mar, params.blur_kernel, params.blur_sigma), params.brightness, params.gamma)
    out[np.isnan(mar.values)] = np.nan
    return apply_landmask(Raster(out, mar.cell_size), landmask)


def _grid_points(grid: dict) -> list[MarCalibParams]:
    keys = ["blur_kernel", "blur_sigma", "gamma", "brightness"]
    missing = [k for k in keys if not grid.get(k)]
    if missing:
        raise ConfigError(f"sweep grid has no values for {missing}")
    return [MarCalibParams(int(k), float(s), float(g), float(b)) for k, s, g, b in
            itertools.product(*(grid[k] for k in keys))]


def sweep_interpolate_mar(
    inputs: RasterSeries,
    targets: RasterSeries,
    landmask: Raster,
    grid: dict | None = None,
    ssim_cfg: SsimConfig = DEFAULT_SSIM,
) -> list[tuple[MarCalibParams, float]]:
    """Score every grid point by pooled masked SSIM on the given pairs.

    The blur depends only on ``(kernel, sigma)``, so blurred inputs are
    computed once per blur setting and target statistics once per image.
    """
    check_aligned(inputs, targets)
    if len(inputs) == 0:
        raise DataError("no training pairs for the MAR sweep")
    points = _grid_points(grid or DEFAULT_SWEEP)
    refs = []
    for _, t in targets:
        refs.append(SsimReference(apply_landmask(t, landmask), ssim_cfg))
    n_total = sum(r.n_valid for r in refs)
    if n_total == 0:
        raise DataError("no valid target pixels for the MAR sweep")
    mars = inputs.rasters()
    ocean = ~(landmask.values >= 0.5)
    results: dict[MarCalibParams, float] = {}
    blur_keys = sorted({(p.blur_kernel, p.blur_sigma) for p in points})
    for kernel, sigma in blur_keys:
        blurred = [blur_mar(m, kernel, sigma) for m in mars]
        for p in points:
            if (p.blur_kernel, p.blur_sigma) != (kernel, sigma):
                continue
            total = 0.0
            for b, m, ref in zip(blurred, mars, refs):
                pred = calibrate(b, p.brightness, p.gamma)
                pred[ocean | np.isnan(m.values)] = np.nan
                s, _ = ref.score(pred)
                total += s
            results[p] = total / n_total
    return [(p, results[p]) for p in points]


def fit_interpolate_mar(
    inputs: RasterSeries,
    targets: RasterSeries,
    landmask: Raster,
    grid: dict | None = None,
    ssim_cfg: SsimConfig = DEFAULT_SSIM,
) -> MarCalibParams:
    """Exhaustive grid search; returns the point with the highest SSIM.

    Ties resolve to the earliest point in grid order.
    """
    scored = sweep_interpolate_mar(inputs, targets, landmask, grid, ssim_cfg)
    best_params, best = scored[0]
    for p, s in scored[1:]:
        if s > best:
            best_params, best = p, s
    return best_params


def predict_series(inputs: RasterSeries, params: MarCalibParams, landmask: Raster, dates: Sequence | None = None) -> RasterSeries:
    src = inputs if dates is None else inputs.subset(dates)
    return RasterSeries("prediction", [(d, interpolate_mar(r, params, landmask)) for d, r in src])
