"""Masked evaluation metrics pooled over valid pixels.

Every pooled score is a weighted combination of per-image partial sums.
Partials are accumulated in float64 and reduced in date order, so results
do not depend on how many worker threads produced them.  A pixel is valid
for image ``k`` when both target and prediction are non-NaN there.
"""

from __future__ import annotations

import datetime as dt
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DateMismatchError, GridMismatchError, NoValidPixelsError
from .filters import gaussian_filter
from .manifest import RasterSeries, check_aligned
from .raster import Raster

Y_THOLD = 0.1
S_MAX = 1.0
R2_FLOOR = -1.0


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 72
    window_sigma: float = 10.0
    c1: float = 1e-4
    c2: float = 9e-4

    def __post_init__(self):
        if self.window_size < 3:
            raise ConfigError(f"SSIM window must be >= 3, got {self.window_size}")
        if not self.window_sigma > 0:
            raise ConfigError("SSIM window sigma must be > 0")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ConfigError("SSIM constants must be > 0")


DEFAULT_SSIM = SsimConfig()


# ---------------------------------------------------------------------------
# input handling


def _as_array(x) -> np.ndarray:
    if isinstance(x, Raster):
        return x.values.astype(np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _pairs(targets, preds) -> list[tuple[object, np.ndarray, np.ndarray]]:
    """Aligned ``(key, target, prediction)`` triples; key is a date or index."""
    if isinstance(targets, RasterSeries) and isinstance(preds, RasterSeries):
        check_aligned(targets, preds)
        keys = targets.dates
        ys = (r for _, r in targets)
        ps = (r for _, r in preds)
    else:
        if isinstance(targets, (Raster, np.ndarray)):
            targets, preds = [targets], [preds]
        targets = list(targets.rasters() if isinstance(targets, RasterSeries) else targets)
        preds = list(preds.rasters() if isinstance(preds, RasterSeries) else preds)
        if len(targets) != len(preds):
            raise DateMismatchError(f"{len(targets)} targets vs {len(preds)} predictions")
        keys = list(range(len(targets)))
        ys, ps = iter(targets), iter(preds)
    out = []
    for key, y, p in zip(keys, ys, ps):
        if isinstance(y, Raster) and isinstance(p, Raster) and y.cell_size != p.cell_size:
            raise GridMismatchError(f"{key}: cell size {y.cell_size} vs {p.cell_size}")
        ya, pa = _as_array(y), _as_array(p)
        if ya.shape != pa.shape:
            raise GridMismatchError(f"{key}: target shape {ya.shape} vs prediction {pa.shape}")
        out.append((key, ya, pa))
    return out


def _valid(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    return ~(np.isnan(y) | np.isnan(p))


# ---------------------------------------------------------------------------
# SSIM


def ssim_map(target: np.ndarray, pred: np.ndarray, cfg: SsimConfig = DEFAULT_SSIM) -> np.ndarray:
    """Per-pixel SSIM of two dense images using Gaussian window statistics."""
    h, s = cfg.window_size, cfg.window_sigma
    y = np.asarray(target, dtype=np.float64)
    x = np.asarray(pred, dtype=np.float64)
    mu_y = gaussian_filter(y, h, s)
    mu_x = gaussian_filter(x, h, s)
    var_y = gaussian_filter(y * y, h, s) - mu_y * mu_y
    var_x = gaussian_filter(x * x, h, s) - mu_x * mu_x
    cov = gaussian_filter(x * y, h, s) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + cfg.c1) * (2.0 * cov + cfg.c2)
    den = (mu_x * mu_x + mu_y * mu_y + cfg.c1) * (var_x + var_y + cfg.c2)
    return num / den


class SsimReference:
    """Target-side SSIM statistics cached for scoring many predictions.

    ``score(pred)`` returns ``(sum of ssim over valid pixels, n_valid)``.
    Valid pixels are those valid in the target; a prediction with extra
    NaNs inside that set falls back to a full recomputation.
    """

    def __init__(self, target, cfg: SsimConfig = DEFAULT_SSIM):
        y = _as_array(target)
        self.cfg = cfg
        self.mask = ~np.isnan(y)
        self.n_valid = int(self.mask.sum())
        self._y0 = np.where(self.mask, y, 0.0)
        h, s = cfg.window_size, cfg.window_sigma
        self._mu_y = gaussian_filter(self._y0, h, s)
        self._var_y = gaussian_filter(self._y0 * self._y0, h, s) - self._mu_y**2

    def score(self, pred) -> tuple[float, int]:
        x = _as_array(pred)
        if np.isnan(x[self.mask]).any():
            mask = self.mask & ~np.isnan(x)
            y0 = np.where(mask, self._y0, 0.0)
            x0 = np.where(mask, x, 0.0)
            m = ssim_map(y0, x0, self.cfg)
            return float(m[mask].sum()), int(mask.sum())
        cfg = self.cfg
        h, s = cfg.window_size, cfg.window_sigma
        x0 = np.where(self.mask, x, 0.0)
        mu_x = gaussian_filter(x0, h, s)
        var_x = gaussian_filter(x0 * x0, h, s) - mu_x * mu_x
        cov = gaussian_filter(x0 * self._y0, h, s) - mu_x * self._mu_y
        num = (2.0 * mu_x * self._mu_y + cfg.c1) * (2.0 * cov + cfg.c2)
        den = (mu_x * mu_x + self._mu_y**2 + cfg.c1) * (var_x + self._var_y + cfg.c2)
        m = num / den
        return float(m[self.mask].sum()), self.n_valid


# ---------------------------------------------------------------------------
# per-image partials


@dataclass
class ImageStats:
    """Partial sums for one target/prediction pair."""

    key: object
    n_valid: int
    sum_abs: float = 0.0
    sum_sq: float = 0.0
    n_correct: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    r2: float = 0.0
    ssim_sum: float | None = None

    @property
    def mae(self) -> float:
        return self.sum_abs / self.n_valid if self.n_valid else math.nan

    @property
    def mse(self) -> float:
        return self.sum_sq / self.n_valid if self.n_valid else math.nan

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_valid if self.n_valid else math.nan

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def ssim(self) -> float:
        if self.ssim_sum is None or not self.n_valid:
            return math.nan
        return self.ssim_sum / self.n_valid

    def to_dict(self) -> dict:
        key = self.key.isoformat() if isinstance(self.key, dt.date) else self.key
        return {
            "date": key,
            "n_valid": self.n_valid,
            "mae": self.mae,
            "mse": self.mse,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "r2": self.r2,
            "ssim": self.ssim,
        }


def image_stats(
    key,
    target: np.ndarray,
    pred: np.ndarray,
    y_thold: float = Y_THOLD,
    ssim_cfg: SsimConfig | None = DEFAULT_SSIM,
) -> ImageStats:
    """All partial sums for one image pair; SSIM skipped when ``ssim_cfg`` is None."""
    mask = _valid(target, pred)
    n = int(mask.sum())
    st = ImageStats(key, n)
    if ssim_cfg is not None:
        if n:
            y0 = np.where(mask, target, 0.0)
            x0 = np.where(mask, pred, 0.0)
            st.ssim_sum = float(ssim_map(y0, x0, ssim_cfg)[mask].sum())
        else:
            st.ssim_sum = 0.0
    if not n:
        return st
    y = target[mask]
    p = pred[mask]
    d = y - p
    st.sum_abs = float(np.abs(d).sum())
    st.sum_sq = float((d * d).sum())
    ty = y > y_thold
    tp_ = p > y_thold
    st.tp = int(np.count_nonzero(ty & tp_))
    st.fp = int(np.count_nonzero(~ty & tp_))
    st.fn = int(np.count_nonzero(ty & ~tp_))
    st.tn = int(np.count_nonzero(~ty & ~tp_))
    st.n_correct = st.tp + st.tn
    ss_tot = float(((y - y.mean()) ** 2).sum())
    st.r2 = max(R2_FLOOR, 1.0 - st.sum_sq / ss_tot) if ss_tot > 0 else 0.0
    return st


def collect_stats(
    targets,
    preds,
    y_thold: float = Y_THOLD,
    ssim_cfg: SsimConfig | None = DEFAULT_SSIM,
    threads: int = 1,
) -> list[ImageStats]:
    """Per-image partials in input (date) order."""
    pairs = _pairs(targets, preds)

    def one(item):
        key, y, p = item
        return image_stats(key, y, p, y_thold, ssim_cfg)

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, pairs))
    return [one(item) for item in pairs]


def _total(stats: Sequence[ImageStats]) -> int:
    n = sum(s.n_valid for s in stats)
    if n == 0:
        raise NoValidPixelsError()
    return n


def _weighted_sigma(stats: Sequence[ImageStats], per_image, pooled: float, n_total: int) -> float:
    acc = 0.0
    for s in stats:
        if s.n_valid:
            acc += s.n_valid * (per_image(s) - pooled) ** 2
    return math.sqrt(acc / n_total)


# ---------------------------------------------------------------------------
# reductions


def reduce_error(stats: Sequence[ImageStats], p: int) -> tuple[float, float]:
    n = _total(stats)
    if p == 1:
        err = sum(s.sum_abs for s in stats) / n
        return err, _weighted_sigma(stats, lambda s: s.mae, err, n)
    if p == 2:
        err = sum(s.sum_sq for s in stats) / n
        return err, _weighted_sigma(stats, lambda s: s.mse, err, n)
    raise ConfigError(f"error exponent must be 1 or 2, got {p}")


def reduce_ssim(stats: Sequence[ImageStats]) -> tuple[float, float]:
    n = _total(stats)
    if any(s.ssim_sum is None for s in stats):
        raise ConfigError("SSIM partials were not computed")
    val = sum(s.ssim_sum for s in stats) / n
    return val, _weighted_sigma(stats, lambda s: s.ssim, val, n)


@dataclass(frozen=True)
class Classification:
    accuracy: float
    precision: float
    recall: float
    f1: float
    sigma_acc: float
    pooled_precision: float = math.nan
    pooled_recall: float = math.nan

    def __iter__(self):
        # unpacks like the five-tuple (accuracy, precision, recall, f1, sigma_acc)
        return iter((self.accuracy, self.precision, self.recall, self.f1, self.sigma_acc))


def harmonic_mean(a: float, b: float) -> float:
    if a > 0 and b > 0:
        return 2.0 / (1.0 / a + 1.0 / b)
    return 0.0


def reduce_classification(stats: Sequence[ImageStats]) -> Classification:
    n = _total(stats)
    acc = sum(s.n_correct for s in stats) / n
    prec = sum(s.n_valid * s.precision for s in stats) / n
    rec = sum(s.n_valid * s.recall for s in stats) / n
    tp = sum(s.tp for s in stats)
    fp = sum(s.fp for s in stats)
    fn = sum(s.fn for s in stats)
    return Classification(
        accuracy=acc,
        precision=prec,
        recall=rec,
        f1=harmonic_mean(prec, rec),
        sigma_acc=_weighted_sigma(stats, lambda s: s.accuracy, acc, n),
        pooled_precision=tp / (tp + fp) if tp + fp else 0.0,
        pooled_recall=tp / (tp + fn) if tp + fn else 0.0,
    )


def reduce_r2(stats: Sequence[ImageStats]) -> float:
    n = _total(stats)
    return sum(s.n_valid * s.r2 for s in stats) / n


# ---------------------------------------------------------------------------
# public single-metric entry points


def spatial_error(targets, preds, p: int = 1) -> tuple[float, float]:
    """Pooled mean ``|y - y_hat| ** p`` over valid pixels and its image-level spread.

    Returns ``(err, sigma)``: ``p=1`` gives MAE, ``p=2`` MSE.  ``sigma`` is
    the valid-pixel-weighted standard deviation of the per-image errors.
    """
    return reduce_error(collect_stats(targets, preds, ssim_cfg=None), p)


def rmse_psnr(mse: float) -> tuple[float, float]:
    """RMSE and PSNR in dB (peak value 1); a perfect fit gives ``psnr = inf``."""
    if mse < 0 or math.isnan(mse):
        raise ConfigError(f"mse must be >= 0, got {mse}")
    rmse = math.sqrt(mse)
    if mse == 0:
        return rmse, math.inf
    return rmse, 10.0 * math.log10(S_MAX**2 / mse)


def masked_ssim(targets, preds, cfg: SsimConfig = DEFAULT_SSIM) -> tuple[float, float]:
    """SSIM with invalid pixels zero-filled, averaged over valid pixels.

    Returns ``(ssim, sigma_ssim)``.
    """
    return reduce_ssim(collect_stats(targets, preds, ssim_cfg=cfg))


def classification_metrics(targets, preds, y_thold: float = Y_THOLD) -> Classification:
    """Melt/no-melt scores at a strict ``value > y_thold`` cut.

    Accuracy is pooled over valid pixels.  Precision and recall are per-image
    ratios weighted by each image's valid-pixel count; an image with no
    predicted (actual) positives contributes zero precision (recall).
    """
    return reduce_classification(collect_stats(targets, preds, y_thold, ssim_cfg=None))


def r_squared(targets, preds) -> float:
    """Valid-pixel-weighted mean of per-image R^2 clipped below at -1."""
    return reduce_r2(collect_stats(targets, preds, ssim_cfg=None))


def _image_mean(raster, mask=None) -> tuple[float, int]:
    v = _as_array(raster)
    valid = ~np.isnan(v)
    if mask is not None:
        valid &= mask
    n = int(valid.sum())
    return (float(v[valid].sum()) / n if n else math.nan), n


def monthly_mean_fraction(preds: RasterSeries, targets: RasterSeries | None = None) -> dict[int, float]:
    """Calendar month -> mean over images of each image's valid-pixel mean.

    Images are weighted equally regardless of their valid-pixel count.  When
    ``targets`` is given, only pixels valid in the matching target count.
    Images without valid pixels and months without images are left out.
    """
    if targets is not None:
        check_aligned(preds, targets)
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for i, (day, raster) in enumerate(preds):
        mask = None
        if targets is not None:
            mask = targets.raster_at(i).valid
        mean, n = _image_mean(raster, mask)
        if not n:
            continue
        sums[day.month] = sums.get(day.month, 0.0) + mean
        counts[day.month] = counts.get(day.month, 0) + 1
    return {m: sums[m] / counts[m] for m in sorted(sums)}


def melt_area_km2(raster: Raster) -> float:
    v = raster.values.astype(np.float64)
    total = float(np.nansum(v))
    return total * (raster.cell_size / 1000.0) ** 2


def melt_extent_timeseries(preds: RasterSeries) -> list[tuple[dt.date, float]]:
    """Daily meltwater area in km^2: sum of valid fractions times cell area."""
    return [(day, melt_area_km2(r)) for day, r in preds]


# ---------------------------------------------------------------------------
# full report


@dataclass
class MetricReport:
    model: str
    n_params: int | None
    n_images: int
    n_valid: int
    mae: float
    mse: float
    rmse: float
    psnr: float
    ssim: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    r2: float
    sigma_mae: float
    sigma_mse: float
    sigma_acc: float
    sigma_ssim: float
    pooled_precision: float
    pooled_recall: float
    reference: str = "sar_target"
    per_image: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    targets,
    preds,
    model: str = "model",
    n_params: int | None = None,
    y_thold: float = Y_THOLD,
    ssim_cfg: SsimConfig | None = DEFAULT_SSIM,
    threads: int = 1,
    reference: str = "sar_target",
) -> MetricReport:
    """Compute every metric for one model over aligned series.

    ``ssim_cfg=None`` skips SSIM; the report then carries NaN for it.
    """
    stats = collect_stats(targets, preds, y_thold, ssim_cfg, threads)
    return report_from_stats(stats, model, n_params, reference)


def report_from_stats(
    stats: Sequence[ImageStats], model: str, n_params=None, reference="sar_target"
) -> MetricReport:
    mae, sigma_mae = reduce_error(stats, 1)
    mse, sigma_mse = reduce_error(stats, 2)
    rmse, psnr = rmse_psnr(mse)
    if any(s.ssim_sum is None for s in stats):
        ssim = sigma_ssim = math.nan
    else:
        ssim, sigma_ssim = reduce_ssim(stats)
    cls = reduce_classification(stats)
    return MetricReport(
        model=model,
        n_params=n_params,
        n_images=len(stats),
        n_valid=_total(stats),
        mae=mae,
        mse=mse,
        rmse=rmse,
        psnr=psnr,
        ssim=ssim,
        accuracy=cls.accuracy,
        precision=cls.precision,
        recall=cls.recall,
        f1=cls.f1,
        r2=reduce_r2(stats),
        sigma_mae=sigma_mae,
        sigma_mse=sigma_mse,
        sigma_acc=cls.sigma_acc,
        sigma_ssim=sigma_ssim,
        pooled_precision=cls.pooled_precision,
        pooled_recall=cls.pooled_recall,
        reference=reference,
        per_image=[s.to_dict() for s in stats],
    )
