"""Glue between datasets, splits and the baseline models.

A fitted model is stored as a :class:`ModelRecord` JSON file holding the
model name, its parameters and the provenance of the fit.  The functions
here turn records plus a dataset into prediction series and reports.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import N_PARAMS, dem, mar, pmw, running_mean
from .errors import ConfigError, DataError, MissingInputError
from .manifest import Manifest, RasterSeries
from .metrics import DEFAULT_SSIM, Y_THOLD, MetricReport, SsimConfig, evaluate, melt_extent_timeseries
from .raster import Raster, apply_landmask, load_raster, save_raster
from .splits import SplitAssignment
from .tiling import TileSpec, mosaic_predict

log = logging.getLogger(__name__)

MODELS = ("running_mean_sar", "interpolate_mar", "threshold_pmw", "threshold_dem", "external")
EXTERNAL_CHANNELS = ("mar_wa1", "pmw_tb", "dem", "running_mean_sar", "landmask")

QUICK_MAR_SWEEP = {
    "blur_kernel": [91, 171],
    "blur_sigma": [33.0, 66.0],
    "gamma": [0.5, 1.0, 2.0],
    "brightness": [40.0, 80.0, 120.0, 200.0],
}


@dataclass
class ModelRecord:
    model: str
    params: dict
    n_params: int | None = None
    info: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.n_params is None:
            self.n_params = N_PARAMS.get(self.model)

    def to_json(self) -> str:
        doc = {
            "model": self.model,
            "params": self.params,
            "n_params": self.n_params,
            "info": self.info,
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "ModelRecord":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"params file not found: {path}")
        try:
            doc = json.loads(path.read_text())
            return cls(doc["model"], doc.get("params", {}), doc.get("n_params"),
                       doc.get("info", {}), doc.get("provenance", {}))
        except (KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: malformed params file ({exc})") from exc


# ---------------------------------------------------------------------------
# hashing


def canonical_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def dataset_hash(man: Manifest) -> str:
    """sha256 over every indexed file, in manifest path order."""
    h = hashlib.sha256()
    for e in sorted(man.entries, key=lambda e: e.path):
        h.update(e.path.encode() + b"\0")
        with open(man.root / e.path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# data access


def _landmask(man: Manifest) -> Raster:
    return man.static("landmask")


def _targets(man: Manifest, dates) -> RasterSeries:
    return man.series("sar_target").subset(dates)


def _split_dates(man: Manifest, split: SplitAssignment, name: str) -> list[dt.date]:
    have = set(man.series("sar_target").dates)
    return [d for d in split.dates(name) if d in have]


def _require(series: RasterSeries, dates: Sequence[dt.date], stream: str) -> None:
    for d in dates:
        if d not in series:
            raise MissingInputError(f"missing input stream {stream} for {d.isoformat()}")


def _subsample(dates: list, limit: int | None, seed: int) -> list:
    if limit is None or len(dates) <= limit:
        return list(dates)
    rng = np.random.default_rng(seed)
    pick = sorted(rng.choice(len(dates), size=limit, replace=False))
    return [dates[i] for i in pick]


# ---------------------------------------------------------------------------
# fitting


def fit_model(
    name: str,
    man: Manifest,
    split: SplitAssignment,
    seed: int = 0,
    options: dict | None = None,
) -> ModelRecord:
    """Fit one baseline on the training split.

    Options per model: ``k_h_candidates`` (running mean); ``sweep`` ("quick",
    "full" or a grid dict) and ``max_images`` (MAR); ``epochs`` and
    ``tile`` (DEM).
    """
    options = dict(options or {})
    if name not in MODELS:
        raise ConfigError(f"unknown model {name!r}")
    train = _split_dates(man, split, "train")
    if not train:
        raise DataError("training split has no target images")
    prov = {
        "seed": seed,
        "dataset_hash": dataset_hash(man),
        "split_seed": split.seed,
        "options": options,
        "version": __version__,
    }
    landmask = _landmask(man)

    if name == "running_mean_sar":
        val = _split_dates(man, split, "val")
        if not val:
            raise DataError("validation split is empty; cannot select k_h")
        cands = tuple(options.get("k_h_candidates", (1, 2, 3)))
        params, scores = running_mean.fit_running_mean(_targets(man, train), _targets(man, val), cands)
        return ModelRecord(name, {"k_h": params.k_h}, info={"val_ssim": {str(k): v for k, v in scores.items()}},
                           provenance=prov)

    if name == "interpolate_mar":
        mar_series = man.series("mar_wa1")
        usable = [d for d in train if d in mar_series]
        if not usable:
            raise MissingInputError("no MAR inputs on training dates")
        chosen = _subsample(usable, options.get("max_images", 12), seed)
        sweep = options.get("sweep", "quick")
        grid = {"quick": QUICK_MAR_SWEEP, "full": mar.DEFAULT_SWEEP}.get(sweep, sweep)
        if not isinstance(grid, dict):
            raise ConfigError(f"unknown MAR sweep {sweep!r}")
        scored = mar.sweep_interpolate_mar(mar_series.subset(chosen), _targets(man, chosen), landmask, grid)
        best, best_score = scored[0]
        for p, s in scored[1:]:
            if s > best_score:
                best, best_score = p, s
        return ModelRecord(name, best.to_dict(), info={"train_ssim": best_score, "n_images": len(chosen),
                                                       "n_points": len(scored)}, provenance=prov)

    if name == "threshold_pmw":
        return ModelRecord(name, pmw.PmwThresholdParams().to_dict(), info={"fitted": False}, provenance=prov)

    if name == "threshold_dem":
        cfg = dem.DemFitConfig(seed=seed, epochs=int(options.get("epochs", 22)), tile=int(options.get("tile", 512)))
        res = dem.fit_threshold_dem(man.static("dem"), _targets(man, train), cfg, landmask)
        info = {"loss": res.loss, "init_loss": res.init_loss, "history": res.history,
                "unfitted_months": res.unfitted_months, "fit_config": cfg.to_dict()}
        return ModelRecord(name, res.params.to_dict(), info=info, provenance=prov)

    raise ConfigError("the external model is not fitted here; write its params file by hand")


# ---------------------------------------------------------------------------
# prediction


def _external_predict(record: ModelRecord, man: Manifest, dates, split, landmask: Raster) -> RasterSeries:
    """Run predictions from a directory of rasters or a shell command.

    ``params["predictions"]`` names a directory holding ``{date}.mwbr``.
    ``params["command"]`` is a template with ``{input_dir}``, ``{output}``
    and ``{date}`` placeholders; each channel is written as
    ``{input_dir}/{channel}.mwbr``.  With ``params["tile"]`` set to
    ``[tile, stride, erode]`` the command runs per tile.
    """
    p = record.params
    if "predictions" in p:
        root = Path(p["predictions"])
        if not root.is_absolute():
            root = man.root / root
        out = []
        for d in dates:
            path = root / f"{d.isoformat()}.mwbr"
            if not path.exists():
                raise MissingInputError(f"missing prediction for {d.isoformat()} under {root}")
            out.append((d, load_raster(path)))
        return RasterSeries("prediction", out)
    if "command" not in p:
        raise ConfigError("external params need 'predictions' or 'command'")
    template = p["command"]
    tile = p.get("tile")
    channels = input_channels(man, dates, split)
    out = []
    for d in dates:
        stack = channels[d]

        def run(arr: np.ndarray, day=d) -> np.ndarray:
            with tempfile.TemporaryDirectory() as tmp:
                tmp = Path(tmp)
                for name, ch in zip(EXTERNAL_CHANNELS, arr):
                    save_raster(Raster(ch), tmp / f"{name}.mwbr")
                target = tmp / "prediction.mwbr"
                cmd = template.format(input_dir=shlex.quote(str(tmp)), output=shlex.quote(str(target)),
                                      date=day.isoformat())
                proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
                if proc.returncode != 0:
                    raise DataError(f"external command failed on {day}: {proc.stderr.strip()[-400:]}")
                if not target.exists():
                    raise DataError(f"external command wrote no prediction for {day}")
                return load_raster(target).values

        if tile:
            t, s, e = (int(v) for v in tile)
            pred = mosaic_predict(run, stack, TileSpec(t, t, s, e), cell_size=landmask.cell_size)
        else:
            pred = Raster(run(stack), landmask.cell_size)
        out.append((d, apply_landmask(pred, landmask)))
    return RasterSeries("prediction", out)


def input_channels(man: Manifest, dates, split: SplitAssignment | None) -> dict[dt.date, np.ndarray]:
    """Raw ``(C, H, W)`` input stacks in :data:`EXTERNAL_CHANNELS` order."""
    mar_s, pmw_s = man.series("mar_wa1"), man.series("pmw_tb")
    _require(mar_s, dates, "mar_wa1")
    _require(pmw_s, dates, "pmw_tb")
    elev, land = man.static("dem"), _landmask(man)
    if split is None:
        raise ConfigError("a split file is needed to build the running-mean input channel")
    train = _targets(man, _split_dates(man, split, "train"))
    out = {}
    for d in dates:
        rm = running_mean.running_mean_sar(train, d)
        out[d] = np.stack([mar_s[d].values, pmw_s[d].values, elev.values, rm.values, land.values])
    return out


def predict_model(
    record: ModelRecord,
    man: Manifest,
    dates: Sequence[dt.date],
    split: SplitAssignment | None = None,
) -> RasterSeries:
    """Landmasked predictions of ``record`` for every date."""
    dates = sorted(dates)
    landmask = _landmask(man)
    name, p = record.model, record.params
    if name == "running_mean_sar":
        if split is None:
            raise ConfigError("running_mean_sar needs the split file to find its training images")
        train = _targets(man, _split_dates(man, split, "train"))
        preds = running_mean.predict_series(train, dates, running_mean.RunningMeanParams(int(p["k_h"])))
        return RasterSeries("prediction", [(d, apply_landmask(r, landmask)) for d, r in preds])
    if name == "interpolate_mar":
        series = man.series("mar_wa1")
        _require(series, dates, "mar_wa1")
        params = mar.MarCalibParams(int(p["blur_kernel"]), float(p["blur_sigma"]), float(p["gamma"]),
                                    float(p["brightness"]))
        return mar.predict_series(series, params, landmask, dates)
    if name == "threshold_pmw":
        series = man.series("pmw_tb")
        _require(series, dates, "pmw_tb")
        params = pmw.PmwThresholdParams(float(p["gamma"]), float(p["omega"]))
        return pmw.predict_series(series, dates, params, landmask)
    if name == "threshold_dem":
        return dem.predict_series(man.static("dem"), dem.DemBandParams.from_dict(p), dates, landmask)
    return _external_predict(record, man, dates, split, landmask)


def save_predictions(preds: RasterSeries, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [save_raster(r, out_dir / f"{d.isoformat()}.mwbr") for d, r in preds]


# ---------------------------------------------------------------------------
# evaluation


def evaluate_record(
    record: ModelRecord,
    man: Manifest,
    dates: Sequence[dt.date],
    split: SplitAssignment | None = None,
    reference: str = "sar_target",
    threads: int = 1,
    y_thold: float = Y_THOLD,
    ssim_cfg: SsimConfig = DEFAULT_SSIM,
    preds: RasterSeries | None = None,
) -> MetricReport:
    """Score ``record`` against ``reference`` on ``dates`` (landmask applied to both)."""
    if not dates:
        raise DataError("no dates to evaluate")
    landmask = _landmask(man)
    refs = man.series(reference).subset(dates)
    refs = RasterSeries(reference, [(d, apply_landmask(r, landmask)) for d, r in refs])
    if preds is None:
        preds = predict_model(record, man, dates, split)
    preds = RasterSeries("prediction", [(d, apply_landmask(r, landmask)) for d, r in preds])
    return evaluate(refs, preds, record.model, record.n_params, y_thold, ssim_cfg, threads, reference)


# ---------------------------------------------------------------------------
# daily product


def date_range(start, end) -> list[dt.date]:
    a, b = (d if isinstance(d, dt.date) else dt.date.fromisoformat(d) for d in (start, end))
    if b < a:
        raise ConfigError(f"end date {b} precedes start date {a}")
    return [a + dt.timedelta(days=i) for i in range((b - a).days + 1)]


def daily_product(
    record: ModelRecord,
    man: Manifest,
    days: Sequence[dt.date],
    out_dir,
    split: SplitAssignment | None = None,
) -> tuple[list[Path], Path]:
    """Predict every day, write one raster per day plus ``melt_extent.csv``."""
    out_dir = Path(out_dir)
    preds = predict_model(record, man, days, split)
    paths = save_predictions(preds, out_dir)
    csv_path = out_dir / "melt_extent.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "melt_area_km2"])
        for d, area in melt_extent_timeseries(preds):
            w.writerow([d.isoformat(), f"{area:.6f}"])
    return paths, csv_path
