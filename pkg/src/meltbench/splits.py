"""Month-stratified train/val/test split of observed days."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError
from .manifest import parse_date

SPLITS = ("train", "val", "test")
STRATIFIED_YEARS = range(2018, 2024)
SEASON_MONTHS = (4, 5, 6, 7, 8, 9)


@dataclass
class SplitAssignment:
    seed: int
    assignments: dict[dt.date, str]
    report: dict[str, dict[str, int]] = field(default_factory=dict)

    def dates(self, split: str) -> list[dt.date]:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        return sorted(d for d, s in self.assignments.items() if s == split)

    def counts(self) -> dict[str, int]:
        return {s: len(self.dates(s)) for s in SPLITS}

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "assignments": {d.isoformat(): s for d, s in sorted(self.assignments.items())},
            "report": self.report,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitAssignment":
        doc = json.loads(text)
        assignments = {parse_date(d): s for d, s in doc["assignments"].items()}
        bad = {s for s in assignments.values() if s not in SPLITS}
        if bad:
            raise DataError(f"split file has unknown split names {sorted(bad)}")
        return cls(int(doc["seed"]), assignments, doc.get("report", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"split file not found: {path}")
        return cls.from_json(path.read_text())


def stratified_split(dates: Iterable, seed: int) -> SplitAssignment:
    """Draw two val and two test days from every (year, month) of 2018-2023.

    Months with 2-3 observations give one val and one test day; a month with
    a single observation keeps it in train.  Val is drawn before test.  All
    other dates, including every 2017 date, are train.
    """
    days = sorted({parse_date(d) for d in dates})
    if not days:
        raise DataError("cannot split an empty date list")
    rng = np.random.default_rng(seed)
    assignments = {d: "train" for d in days}
    by_month: dict[tuple[int, int], list[dt.date]] = {}
    for d in days:
        if d.year in STRATIFIED_YEARS and d.month in SEASON_MONTHS:
            by_month.setdefault((d.year, d.month), []).append(d)
    report = {}
    for (year, month), pool in sorted(by_month.items()):
        n = len(pool)
        k = 2 if n >= 4 else (1 if n >= 2 else 0)
        remaining = list(pool)
        for split in ("val", "test"):
            if k == 0:
                break
            picks = rng.choice(len(remaining), size=k, replace=False)
            chosen = [remaining[i] for i in sorted(picks)]
            for d in chosen:
                assignments[d] = split
            remaining = [d for d in remaining if d not in chosen]
        report[f"{year:04d}-{month:02d}"] = {
            "observed": n,
            "val": k,
            "test": k,
            "train": n - 2 * k,
        }
    return SplitAssignment(seed, assignments, report)
