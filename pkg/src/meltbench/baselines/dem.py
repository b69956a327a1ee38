"""Elevation-band baseline: melt inside a month-specific elevation band.

Prediction per pixel is ``tanh_hat(a_m * elevation + b_m, c)`` where
``tanh_hat`` is a smooth box that is ~1 for ``|z| < c`` and decays to 0
outside.  Six months (Apr-Sep) give twelve free parameters ``(a_m, b_m)``.

Fitting runs minibatch SGD on masked MSE over randomly placed tiles.  The
optimizer works on standardized elevation ``u = (elev - mu) / sd`` so a
learning rate of order 10 is stable; parameters are converted back to
per-meter units on return.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError
from ..manifest import RasterSeries
from ..raster import Raster, apply_landmask
from ..tiling import TileSpec, sample_tiles

log = logging.getLogger(__name__)

MONTHS = (4, 5, 6, 7, 8, 9)
N_PARAMS = 12


def tanh_hat(z, c: float = 4.0):
    """``0.5 * (tanh(c + z) + tanh(c - z))``; symmetric, peak ``tanh(c)`` at 0."""
    return 0.5 * (np.tanh(c + z) + np.tanh(c - z))


def tanh_hat_grad(z, c: float = 4.0):
    """Derivative of :func:`tanh_hat` with respect to ``z``."""
    return 0.5 * (1.0 / np.cosh(c + z) ** 2 - 1.0 / np.cosh(c - z) ** 2)


@dataclass(frozen=True)
class DemBandParams:
    a: tuple[float, ...] = (0.0,) * 6  # 1/m, one per month Apr..Sep
    b: tuple[float, ...] = (0.0,) * 6
    c: float = 4.0

    def __post_init__(self):
        if len(self.a) != len(MONTHS) or len(self.b) != len(MONTHS):
            raise ConfigError("DEM band needs exactly six (a, b) pairs, Apr..Sep")

    def month(self, month: int) -> tuple[float, float]:
        if month not in MONTHS:
            raise ConfigError(f"month {month} outside the Apr-Sep season")
        i = MONTHS.index(month)
        return self.a[i], self.b[i]

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b), "c": self.c}

    @classmethod
    def from_dict(cls, d: dict) -> "DemBandParams":
        return cls(tuple(map(float, d["a"])), tuple(map(float, d["b"])), float(d.get("c", 4.0)))


def threshold_dem_predict(dem: Raster, params: DemBandParams, month: int, landmask: Raster | None = None) -> Raster:
    a, b = params.month(month)
    z = a * dem.values.astype(np.float64) + b
    out = np.clip(tanh_hat(z, params.c), 0.0, 1.0)
    r = Raster(out, dem.cell_size)
    if landmask is not None:
        r = apply_landmask(r, landmask)
    return r


def predict_series(dem: Raster, params: DemBandParams, dates, landmask: Raster) -> RasterSeries:
    return RasterSeries(
        "prediction", [(d, threshold_dem_predict(dem, params, d.month, landmask)) for d in dates]
    )


@dataclass(frozen=True)
class DemFitConfig:
    c: float = 4.0
    epochs: int = 22
    batch: int = 16
    lr0: float = 10.0
    plateau_patience: int = 5
    lr_decay: float = 0.1
    plateau_eps: float = 1e-6
    tile: int = 512
    seed: int = 0
    init: str = "moments"  # "moments" or "flat"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DemFitResult:
    params: DemBandParams
    loss: float
    init_loss: float
    history: list[float] = field(default_factory=list)  # full-set loss after each epoch
    lr_history: list[float] = field(default_factory=list)
    unfitted_months: list[int] = field(default_factory=list)


class _Problem:
    """Training images as flat arrays in standardized elevation units."""

    def __init__(self, dem: Raster, targets: RasterSeries, landmask: Raster | None):
        elev = dem.values.astype(np.float64)
        land = ~np.isnan(elev)
        if landmask is not None:
            dem.check_grid(landmask, "landmask")
            land &= landmask.values >= 0.5
        if not land.any():
            raise DataError("DEM has no valid land pixels")
        self.mu = float(elev[land].mean())
        self.sd = float(elev[land].std()) or 1.0
        self.u = np.where(land, (elev - self.mu) / self.sd, np.nan)
        self.days = []
        self.targets = []
        for day, r in targets:
            if day.month not in MONTHS:
                continue
            y = r.values.astype(np.float64)
            y = np.where(np.isnan(self.u), np.nan, y)
            self.days.append(day)
            self.targets.append(y)
        if not self.targets:
            raise DataError("no training targets in the Apr-Sep season")
        self.shape = elev.shape

    def month_slots(self) -> list[int]:
        return [MONTHS.index(d.month) for d in self.days]


def _moment_init(prob: _Problem, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Band centered on the melt-weighted mean elevation with matching width."""
    alpha = np.ones(len(MONTHS))
    beta = np.zeros(len(MONTHS))
    slots = prob.month_slots()
    for m in range(len(MONTHS)):
        w_sum = s1 = s2 = 0.0
        for slot, y in zip(slots, prob.targets):
            if slot != m:
                continue
            ok = ~np.isnan(y)
            w = y[ok]
            u = prob.u[ok]
            w_sum += w.sum()
            s1 += (w * u).sum()
            s2 += (w * u * u).sum()
        if w_sum <= 0:
            continue
        mean = s1 / w_sum
        sd = math.sqrt(max(s2 / w_sum - mean**2, 1e-6))
        # a uniform band of half-width hw has sd hw / sqrt(3)
        half_width = math.sqrt(3.0) * sd
        alpha[m] = c / half_width
        beta[m] = -alpha[m] * mean
    return alpha, beta


def _full_loss(prob: _Problem, alpha, beta, c) -> float:
    num = 0.0
    n = 0
    for slot, y in zip(prob.month_slots(), prob.targets):
        ok = ~np.isnan(y)
        pred = tanh_hat(alpha[slot] * prob.u[ok] + beta[slot], c)
        d = pred - y[ok]
        num += float((d * d).sum())
        n += int(ok.sum())
    if n == 0:
        raise DataError("no valid training pixels for the DEM fit")
    return num / n


def fit_threshold_dem(
    dem: Raster,
    train_targets: RasterSeries,
    cfg: DemFitConfig = DemFitConfig(),
    landmask: Raster | None = None,
    init: DemBandParams | None = None,
) -> DemFitResult:
    """Fit the twelve band parameters by minibatch SGD on masked MSE.

    Each epoch draws one random tile per training image; tiles are grouped
    into batches of ``cfg.batch``.  The learning rate drops by
    ``cfg.lr_decay`` after ``cfg.plateau_patience`` epochs whose mean batch
    loss fails to improve by ``cfg.plateau_eps``.  The returned parameters
    are the best seen on the full training set, initialization included.
    """
    prob = _Problem(dem, train_targets, landmask)
    c = cfg.c
    slots = np.array(prob.month_slots())
    if init is not None:
        a0, b0 = np.array(init.a, dtype=np.float64), np.array(init.b, dtype=np.float64)
        alpha = a0 * prob.sd
        beta = b0 + a0 * prob.mu
    elif cfg.init == "moments":
        alpha, beta = _moment_init(prob, c)
    elif cfg.init == "flat":
        alpha, beta = np.ones(len(MONTHS)), np.zeros(len(MONTHS))
    else:
        raise ConfigError(f"unknown DEM init {cfg.init!r}")

    unfitted = [MONTHS[m] for m in range(len(MONTHS)) if m not in set(slots.tolist())]
    if unfitted:
        log.warning("no training images for months %s; keeping initial band", unfitted)

    height, width = prob.shape
    spec = TileSpec(min(cfg.tile, height), min(cfg.tile, width), 1, 0)
    rng = np.random.default_rng(cfg.seed)

    best_alpha, best_beta = alpha.copy(), beta.copy()
    init_loss = best_loss = _full_loss(prob, alpha, beta, c)
    lr = cfg.lr0
    plateau_best = math.inf
    bad_epochs = 0
    history, lr_history = [], []
    n_img = len(prob.targets)

    for _epoch in range(cfg.epochs):
        order = rng.permutation(n_img)
        origins = sample_tiles((width, height), spec, n_img, rng)
        ep_num = 0.0
        ep_n = 0
        for start in range(0, n_img, cfg.batch):
            batch = order[start: start + cfg.batch]
            g_alpha = np.zeros(len(MONTHS))
            g_beta = np.zeros(len(MONTHS))
            sq = 0.0
            n = 0
            for k, img in enumerate(batch):
                r, col = origins[start + k]
                y = prob.targets[img][r: r + spec.tile_h, col: col + spec.tile_w]
                u = prob.u[r: r + spec.tile_h, col: col + spec.tile_w]
                ok = ~np.isnan(y)
                if not ok.any():
                    continue
                m = slots[img]
                uu = u[ok]
                z = alpha[m] * uu + beta[m]
                resid = tanh_hat(z, c) - y[ok]
                dz = resid * tanh_hat_grad(z, c)
                g_alpha[m] += (dz * uu).sum()
                g_beta[m] += dz.sum()
                sq += float((resid * resid).sum())
                n += int(ok.sum())
            if n == 0:
                continue
            alpha -= lr * 2.0 * g_alpha / n
            beta -= lr * 2.0 * g_beta / n
            ep_num += sq
            ep_n += n
        epoch_loss = ep_num / ep_n if ep_n else math.nan
        full = _full_loss(prob, alpha, beta, c)
        history.append(full)
        lr_history.append(lr)
        if full < best_loss:
            best_loss = full
            best_alpha, best_beta = alpha.copy(), beta.copy()
        if epoch_loss < plateau_best - cfg.plateau_eps:
            plateau_best = epoch_loss
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.plateau_patience:
                lr *= cfg.lr_decay
                bad_epochs = 0

    a = best_alpha / prob.sd
    b = best_beta - best_alpha * prob.mu / prob.sd
    params = DemBandParams(tuple(map(float, a)), tuple(map(float, b)), c)
    return DemFitResult(params, best_loss, init_loss, history, lr_history, unfitted)


def band_loss(dem: Raster, targets: RasterSeries, params: DemBandParams, landmask: Raster | None = None) -> float:
    """Masked MSE of ``params`` over ``targets`` (in-season images only)."""
    num = 0.0
    n = 0
    for day, r in targets:
        if day.month not in MONTHS:
            continue
        p = threshold_dem_predict(dem, params, day.month, landmask).values.astype(np.float64)
        y = r.values.astype(np.float64)
        ok = ~(np.isnan(p) | np.isnan(y))
        d = p[ok] - y[ok]
        num += float((d * d).sum())
        n += int(ok.sum())
    if n == 0:
        raise DataError("no valid pixels")
    return num / n


def fitted_months(train_dates: Sequence) -> list[int]:
    return sorted({d.month for d in train_dates if d.month in MONTHS})
