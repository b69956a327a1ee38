"""Running-mean interpolation of past and future SAR observations."""

from __future__ import annotations

import bisect
import datetime as dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError
from ..manifest import RasterSeries, parse_date
from ..raster import Raster

N_PARAMS = 1


@dataclass(frozen=True)
class RunningMeanParams:
    k_h: int = 3

    def __post_init__(self):
        if int(self.k_h) != self.k_h or self.k_h < 1:
            raise ConfigError(f"k_h must be an integer >= 1, got {self.k_h}")


def neighbor_indices(dates: Sequence[dt.date], query, k_h: int) -> list[int]:
    """Indices of the ``k_h`` observations before and after ``query``.

    The query's own observation is skipped when present.  Near the ends of
    the series fewer neighbors are returned.
    """
    if k_h < 1:
        raise ConfigError(f"k_h must be >= 1, got {k_h}")
    q = parse_date(query)
    pos = bisect.bisect_left(dates, q)
    after_start = pos + 1 if pos < len(dates) and dates[pos] == q else pos
    before = range(max(0, pos - k_h), pos)
    after = range(after_start, min(len(dates), after_start + k_h))
    return list(before) + list(after)


def running_mean_sar(train: RasterSeries, query_date, params: RunningMeanParams = RunningMeanParams()) -> Raster:
    """Per-pixel mean of the valid neighbor observations in ``train``.

    Pixels where no neighbor is valid come out NaN.
    """
    if len(train) == 0:
        raise DataError("running mean needs a non-empty training series")
    idx = neighbor_indices(train.dates, query_date, params.k_h)
    if not idx:
        raise DataError(f"no training observations around {query_date}")
    first = train.raster_at(idx[0])
    total = np.zeros(first.shape, dtype=np.float64)
    count = np.zeros(first.shape, dtype=np.int32)
    for i in idx:
        v = train.raster_at(i).values
        ok = ~np.isnan(v)
        total[ok] += v[ok]
        count += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return Raster(out, first.cell_size)


def predict_series(train: RasterSeries, dates, params: RunningMeanParams) -> RasterSeries:
    return RasterSeries(
        "prediction", [(d, running_mean_sar(train, d, params)) for d in dates]
    )


def fit_running_mean(
    train: RasterSeries,
    val_targets: RasterSeries,
    candidates: Sequence[int] = (1, 2, 3),
    score=None,
) -> tuple[RunningMeanParams, dict[int, float]]:
    """Pick ``k_h`` from ``candidates`` by the validation score (higher wins).

    ``score(targets, preds)`` defaults to masked SSIM.  Ties go to the
    smaller horizon.
    """
    from ..metrics import masked_ssim

    if not candidates:
        raise ConfigError("no k_h candidates given")
    if score is None:
        score = lambda t, p: masked_ssim(t, p)[0]  # noqa: E731
    scores = {}
    for k in sorted(candidates):
        preds = predict_series(train, val_targets.dates, RunningMeanParams(k))
        scores[k] = float(score(val_targets, preds))
    best = max(scores, key=lambda k: (scores[k], -k))
    return RunningMeanParams(best), scores
