"""Serialization of metric reports: JSON documents and aligned text tables."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

from .metrics import MetricReport

MAIN_COLUMNS = [
    ("#p", "n_params"),
    ("MAE", "mae"),
    ("MSE", "mse"),
    ("Acc", "accuracy"),
    ("F1", "f1"),
    ("SSIM", "ssim"),
]
EXTENDED_COLUMNS = [
    ("PSNR", "psnr"),
    ("RMSE", "rmse"),
    ("R2", "r2"),
    ("Prec", "precision"),
    ("Rec", "recall"),
    ("sd_MAE", "sigma_mae"),
    ("sd_MSE", "sigma_mse"),
    ("sd_Acc", "sigma_acc"),
    ("sd_SSIM", "sigma_ssim"),
]


def _clean(obj):
    """Replace non-finite floats with strings so the output is strict JSON."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _restore(obj):
    if obj in ("nan", "inf", "-inf"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), indent=1, sort_keys=True, allow_nan=False) + "\n"


def reports_to_json(reports: Sequence[MetricReport], provenance: dict | None = None) -> str:
    doc = {"reports": [r.to_dict() for r in reports]}
    if provenance is not None:
        doc["provenance"] = provenance
    return dumps(doc)


def reports_from_json(text: str) -> tuple[list[MetricReport], dict]:
    doc = _restore(json.loads(text))
    return [MetricReport(**r) for r in doc["reports"]], doc.get("provenance", {})


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, int):
        return str(value)
    if math.isinf(value):
        return "inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.4f}"


def _table(reports, columns) -> list[str]:
    header = ["Model"] + [c for c, _ in columns]
    rows = [[r.model] + [_fmt(getattr(r, attr)) for _, attr in columns] for r in reports]
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = []
    for row in [header] + rows:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return lines


def format_table(reports: Sequence[MetricReport]) -> str:
    """Main score table followed by the extended metrics block."""
    refs = sorted({r.reference for r in reports})
    lines = [f"Evaluation scores (reference: {', '.join(refs)})"]
    lines += _table(reports, MAIN_COLUMNS)
    lines.append("")
    lines.append("Extended metrics")
    lines += _table(reports, EXTENDED_COLUMNS)
    return "\n".join(lines) + "\n"


def write_reports(reports, out_dir, provenance=None, stem="report") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / f"{stem}.json"
    tpath = out / f"{stem}.txt"
    jpath.write_text(reports_to_json(reports, provenance))
    tpath.write_text(format_table(reports))
    return jpath, tpath
