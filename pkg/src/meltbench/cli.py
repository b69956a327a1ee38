"""``meltbench`` command line.

Every subcommand accepts ``--config FILE.json``; keys are flag names
(kebab or snake case) and explicit flags override them.  Exit status is
0 on success, 2 for configuration errors and 3 for data errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import MODEL_NAMES
from .errors import ConfigError, DataError, MeltbenchError
from .manifest import Manifest, parse_date
from .metrics import DEFAULT_SSIM, Y_THOLD
from .pipeline import (
    MODELS,
    ModelRecord,
    canonical_hash,
    daily_product,
    dataset_hash,
    date_range,
    evaluate_record,
    fit_model,
    predict_model,
    save_predictions,
)
from .raster import Raster
from .report import format_table, reports_from_json, write_reports
from .sar import SarScene, derive_targets
from .splits import SPLITS, SplitAssignment, stratified_split
from .synth import SynthConfig, generate_synthetic

log = logging.getLogger("meltbench")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


@dataclass
class RunConfig:
    """Resolved settings shared by fit/predict/evaluate/daily-product."""

    root: Path
    split: Path | None = None
    model: str | None = None
    params: list[Path] = dataclasses.field(default_factory=list)
    out: Path | None = None
    seed: int = 0
    threads: int = 1
    reference: str = "sar_target"
    subset: str = "test"
    y_thold: float = Y_THOLD

    def validate(self) -> "RunConfig":
        if not (self.root / "manifest.json").exists():
            raise ConfigError(f"dataset root {self.root} has no manifest.json")
        if self.split is not None and not self.split.exists():
            raise ConfigError(f"split file not found: {self.split}")
        for p in self.params:
            if not p.exists():
                raise ConfigError(f"params file not found: {p}")
        if self.model is not None and self.model not in MODELS + ("all",):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if self.subset not in SPLITS + ("all",):
            raise ConfigError(f"unknown subset {self.subset!r}")
        return self

    def hash_fields(self) -> dict:
        # paths and thread count do not change the numbers
        return {"model": self.model, "seed": self.seed, "reference": self.reference,
                "subset": self.subset, "y_thold": self.y_thold}


# ---------------------------------------------------------------------------
# option handling


def _load_config(path) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge hard defaults, then the config file, then explicit flags."""
    merged = dict(defaults)
    merged.update(_load_config(getattr(args, "config", None)))
    merged.update({k: v for k, v in vars(args).items() if k not in ("config", "func")})
    return merged


def _run_config(opts: dict) -> RunConfig:
    if not opts.get("root"):
        raise ConfigError("--root is required")
    params = opts.get("params") or []
    if isinstance(params, (str, Path)):
        params = [params]
    expanded = []
    for p in map(Path, params):
        expanded.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    return RunConfig(
        root=Path(opts["root"]),
        split=Path(opts["split"]) if opts.get("split") else None,
        model=opts.get("model"),
        params=expanded,
        out=Path(opts["out"]) if opts.get("out") else None,
        seed=int(opts.get("seed", 0)),
        threads=int(opts.get("threads", 1)),
        reference=opts.get("reference", "sar_target"),
        subset=opts.get("subset", "test"),
        y_thold=float(opts.get("y_thold", Y_THOLD)),
    ).validate()


def _split(rc: RunConfig) -> SplitAssignment | None:
    return SplitAssignment.load(rc.split) if rc.split else None


def _eval_dates(man: Manifest, rc: RunConfig, split: SplitAssignment | None, opts: dict) -> list[dt.date]:
    have = set(man.series(rc.reference).dates)
    if opts.get("start") or opts.get("end"):
        if not (opts.get("start") and opts.get("end")):
            raise ConfigError("--start and --end go together")
        wanted = date_range(opts["start"], opts["end"])
        missing = [d for d in wanted if d not in have]
        if missing:
            raise DataError(f"no {rc.reference} raster for {missing[0].isoformat()}")
        return wanted
    if rc.subset == "all":
        return sorted(have)
    if split is None:
        raise ConfigError(f"--split is required to select the {rc.subset} subset")
    return [d for d in split.dates(rc.subset) if d in have]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(args) -> int:
    opts = resolve(args, {"seed": 0})
    if not opts.get("out"):
        raise ConfigError("--out is required")
    fields = dict(opts.get("synth") or {})
    for key in ("width", "height", "cell_size", "seed"):
        if opts.get(key) is not None:
            fields[key] = opts[key]
    if opts.get("full_grid"):
        fields.update(width=1633, height=2863)
    try:
        cfg = SynthConfig.from_dict(fields)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic config: {exc}") from exc
    ds = generate_synthetic(cfg, opts["out"])
    print(f"wrote {len(ds.observed)} observed days, {len(ds.daily)} daily days to {ds.root}")
    return EXIT_OK


def _read_geotiff(path: Path, cell_size: float | None, nodata: float | None) -> Raster:
    import tifffile

    if not path.exists():
        raise ConfigError(f"input not found: {path}")
    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            arr = page.asarray()
            tags = page.tags
            scale = tags.get(33550)  # ModelPixelScaleTag
            gdal_nodata = tags.get(42113)  # GDAL_NODATA
            if cell_size is None and scale is not None:
                sx, sy = scale.value[0], scale.value[1]
                if abs(sx - sy) > 1e-6 * max(abs(sx), 1.0):
                    raise DataError(f"{path}: non-square pixels {sx} x {sy}")
                cell_size = float(sx)
            if nodata is None and gdal_nodata is not None:
                nodata = float(str(gdal_nodata.value).strip("\x00 "))
    except (tifffile.TiffFileError, ValueError) as exc:
        raise DataError(f"{path}: cannot read GeoTIFF ({exc})") from exc
    if arr.ndim == 3 and 1 in (arr.shape[0], arr.shape[-1]):
        arr = arr.reshape(arr.shape[1:] if arr.shape[0] == 1 else arr.shape[:-1])
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a single band, got shape {arr.shape}")
    if cell_size is None:
        raise ConfigError(f"{path}: no pixel scale tag; pass --cell-size")
    values = arr.astype(np.float32)
    if nodata is not None:
        values[values == np.float32(nodata)] = np.nan
    return Raster(values, cell_size)


def cmd_import_geotiff(args) -> int:
    opts = resolve(args, {})
    for key in ("root", "input", "stream"):
        if not opts.get(key):
            raise ConfigError(f"--{key} is required")
    root = Path(opts["root"])
    man = Manifest.load(root) if (root / "manifest.json").exists() else Manifest(root)
    raster = _read_geotiff(Path(opts["input"]), opts.get("cell_size"), opts.get("nodata"))
    acquired = dt.datetime.fromisoformat(opts["acquired"]) if opts.get("acquired") else None
    entry = man.add(opts["stream"], raster, date=opts.get("date"), acquired=acquired)
    man.save()
    print(f"imported {opts['input']} as {entry.path}")
    return EXIT_OK


def cmd_derive_sar(args) -> int:
    opts = resolve(args, {"threshold_db": -3.0, "factor": 10})
    if not opts.get("root"):
        raise ConfigError("--root is required")
    man = Manifest.load(opts["root"])
    entries = man.scenes("backscatter")
    if not entries:
        raise DataError("dataset has no timestamped backscatter scenes")
    from .raster import load_raster

    scenes = [SarScene(ts, load_raster(p)) for ts, p in entries]
    targets, dlog = derive_targets(scenes, float(opts["threshold_db"]), int(opts["factor"]))
    out = Manifest.load(opts["out_root"]) if opts.get("out_root") and (Path(opts["out_root"]) / "manifest.json").exists() \
        else (Manifest(Path(opts["out_root"])) if opts.get("out_root") else man)
    for day, r in targets.items():
        out.add("sar_target", r, date=day)
    out.meta["sar_derivation"] = {
        "threshold_db": float(opts["threshold_db"]),
        "factor": int(opts["factor"]),
        "skipped": [[ts.isoformat(), why] for ts, why in dlog.skipped],
    }
    out.save()
    print(f"derived {len(targets)} daily targets; skipped {len(dlog.skipped)} scenes")
    return EXIT_OK


def cmd_make_split(args) -> int:
    opts = resolve(args, {"seed": 0})
    if not opts.get("root"):
        raise ConfigError("--root is required")
    man = Manifest.load(opts["root"])
    split = stratified_split(man.series("sar_target").dates, int(opts["seed"]))
    out = Path(opts.get("out") or Path(opts["root"]) / "split.json")
    split.save(out)
    c = split.counts()
    print(f"train {c['train']}  val {c['val']}  test {c['test']}  -> {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    opts = resolve(args, {"seed": 0, "threads": 1})
    rc = _run_config(opts)
    if rc.split is None:
        raise ConfigError("--split is required")
    if rc.model is None:
        raise ConfigError("--model is required")
    man = Manifest.load(rc.root)
    split = _split(rc)
    names = MODEL_NAMES if rc.model == "all" else (rc.model,)
    fit_opts = {k: opts[k] for k in ("sweep", "max_images", "epochs", "tile") if opts.get(k) is not None}
    if rc.out is None:
        raise ConfigError("--out is required")
    for name in names:
        model_opts = {k: v for k, v in fit_opts.items()
                      if (k in ("sweep", "max_images") and name == "interpolate_mar")
                      or (k in ("epochs", "tile") and name == "threshold_dem")}
        record = fit_model(name, man, split, rc.seed, model_opts)
        path = rc.out / f"{name}.json" if len(names) > 1 or rc.out.suffix != ".json" else rc.out
        record.save(path)
        print(f"{name}: {json.dumps(record.params, sort_keys=True)} -> {path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    opts = resolve(args, {"seed": 0, "threads": 1, "subset": "test"})
    rc = _run_config(opts)
    if len(rc.params) != 1:
        raise ConfigError("predict takes exactly one --params file")
    if rc.out is None:
        raise ConfigError("--out is required")
    man = Manifest.load(rc.root)
    split = _split(rc)
    record = ModelRecord.load(rc.params[0])
    if opts.get("start") or opts.get("end"):
        days = date_range(opts["start"], opts["end"])
    else:
        days = _eval_dates(man, rc, split, opts)
    preds = predict_model(record, man, days, split)
    save_predictions(preds, rc.out)
    print(f"wrote {len(preds)} predictions to {rc.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    opts = resolve(args, {"seed": 0, "threads": 1, "subset": "test"})
    rc = _run_config(opts)
    man = Manifest.load(rc.root)
    split = _split(rc)
    records = [ModelRecord.load(p) for p in rc.params]
    if opts.get("predictions"):
        records.append(ModelRecord("external", {"predictions": str(Path(opts["predictions"]).resolve())},
                                   opts.get("n_params")))
    if not records:
        raise ConfigError("nothing to evaluate: pass --params or --predictions")
    order = {m: i for i, m in enumerate(MODELS)}
    records.sort(key=lambda r: order[r.model])
    days = _eval_dates(man, rc, split, opts)
    reports = []
    for rec in records:
        rep = evaluate_record(rec, man, days, split, rc.reference, rc.threads, rc.y_thold, DEFAULT_SSIM)
        if opts.get("model_name") and rec.model == "external":
            rep.model = opts["model_name"]
        reports.append(rep)
    provenance = {
        "seed": rc.seed,
        "config_hash": canonical_hash(rc.hash_fields()),
        "dataset_hash": dataset_hash(man),
        "split_hash": canonical_hash(split.to_json()) if split else None,
        "params_hash": canonical_hash([json.loads(r.to_json()) for r in records if r.model != "external"]),
        "reference": rc.reference,
        "subset": rc.subset,
        "n_dates": len(days),
        "version": __version__,
    }
    out = rc.out or Path(".")
    js, txt = write_reports(reports, out, provenance)
    print(txt.read_text(), end="")
    return EXIT_OK


def cmd_daily_product(args) -> int:
    opts = resolve(args, {"seed": 0, "threads": 1})
    rc = _run_config(opts)
    if len(rc.params) != 1:
        raise ConfigError("daily-product takes exactly one --params file")
    if not (opts.get("start") and opts.get("end")):
        raise ConfigError("--start and --end are required")
    if rc.out is None:
        raise ConfigError("--out is required")
    man = Manifest.load(rc.root)
    record = ModelRecord.load(rc.params[0])
    days = date_range(parse_date(opts["start"]), parse_date(opts["end"]))
    paths, csv_path = daily_product(record, man, days, rc.out, _split(rc))
    print(f"wrote {len(paths)} daily rasters and {csv_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    opts = resolve(args, {})
    inputs = opts.get("inputs") or []
    if not inputs:
        raise ConfigError("--inputs is required")
    reports, provs = [], []
    for p in map(Path, inputs):
        if not p.exists():
            raise ConfigError(f"report not found: {p}")
        rs, prov = reports_from_json(p.read_text())
        reports.extend(rs)
        provs.append(prov)
    if opts.get("out"):
        write_reports(reports, opts["out"], {"merged": provs})
    print(format_table(reports), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--threads", type=int)
    common.add_argument("--log-level", default=S, choices=["debug", "info", "warning", "error"])

    run = argparse.ArgumentParser(add_help=False, argument_default=S)
    run.add_argument("--root", help="dataset root")
    run.add_argument("--split", help="split JSON file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")

    parser = argparse.ArgumentParser(prog="meltbench", description="Surface-melt gap-filling benchmark harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", parents=[common], argument_default=S, help="generate a synthetic dataset")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--cell-size", type=float)
    p.add_argument("--full-grid", action="store_true", help="full 2863 x 1633 grid")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("import-geotiff", parents=[common], argument_default=S, help="convert a GeoTIFF into MWBR")
    p.add_argument("--root")
    p.add_argument("--input")
    p.add_argument("--stream")
    p.add_argument("--date")
    p.add_argument("--acquired", help="acquisition timestamp for backscatter scenes")
    p.add_argument("--cell-size", type=float)
    p.add_argument("--nodata", type=float)
    p.set_defaults(func=cmd_import_geotiff)

    p = sub.add_parser("derive-sar", parents=[common], argument_default=S, help="melt fractions from backscatter")
    p.add_argument("--root")
    p.add_argument("--out-root")
    p.add_argument("--threshold-db", type=float)
    p.add_argument("--factor", type=int)
    p.set_defaults(func=cmd_derive_sar)

    p = sub.add_parser("make-split", parents=[common], argument_default=S, help="stratified train/val/test split")
    p.add_argument("--root")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_split)

    p = sub.add_parser("fit", parents=[common, run], argument_default=S, help="fit a baseline")
    p.add_argument("--model", choices=MODELS + ("all",))
    p.add_argument("--sweep", choices=["quick", "full"])
    p.add_argument("--max-images", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tile", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common, run], argument_default=S, help="write prediction rasters")
    p.add_argument("--params")
    p.add_argument("--subset", choices=SPLITS + ("all",))
    p.add_argument("--start")
    p.add_argument("--end")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common, run], argument_default=S, help="score models into a report")
    p.add_argument("--params", nargs="+", help="params files or directories of them")
    p.add_argument("--predictions", help="directory of external prediction rasters")
    p.add_argument("--model-name")
    p.add_argument("--n-params", type=int)
    p.add_argument("--subset", choices=SPLITS + ("all",))
    p.add_argument("--reference", choices=["sar_target", "truth"])
    p.add_argument("--y-thold", type=float)
    p.add_argument("--start")
    p.add_argument("--end")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("daily-product", parents=[common, run], argument_default=S, help="daily maps and extent CSV")
    p.add_argument("--params")
    p.add_argument("--start")
    p.add_argument("--end")
    p.set_defaults(func=cmd_daily_product)

    p = sub.add_parser("report", parents=[common], argument_default=S, help="merge report JSON files")
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = getattr(args, "log_level", "warning")
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "log_level"):
        del args.log_level
    del args.command
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"meltbench: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"meltbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MeltbenchError as exc:
        print(f"meltbench: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
