"""Date-indexed raster series and the JSON dataset manifest.

A dataset root holds ``manifest.json`` plus MWBR files at relative paths.
Each manifest entry names its stream, calendar day (``null`` for static
layers such as the DEM), path and grid.  SAR scene entries additionally
carry an ``acquired`` timestamp with seconds precision.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError, DataError, DateMismatchError, GridMismatchError
from .raster import Grid, Raster, load_raster, save_raster

STREAMS = (
    "sar_target",
    "mar_wa1",
    "pmw_tb",
    "dem",
    "landmask",
    "prediction",
    "backscatter",
    "truth",
)
STATIC_STREAMS = ("dem", "landmask")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def parse_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"not an ISO-8601 day: {value!r}") from exc


class RasterSeries:
    """Ordered collection of rasters for one stream, one per calendar day.

    Items may be in-memory :class:`Raster` objects or paths that are loaded
    on access.  Dates must be unique; they are kept sorted.
    """

    def __init__(self, stream: str, items: Iterable[tuple], grid: Grid | None = None):
        pairs = sorted(((parse_date(d), r) for d, r in items), key=lambda p: p[0])
        for (d0, _), (d1, _) in zip(pairs, pairs[1:]):
            if d0 == d1:
                raise DataError(f"duplicate date {d0} in stream {stream!r}")
        self.stream = stream
        self._dates = [d for d, _ in pairs]
        self._items = [r for _, r in pairs]
        self._index = {d: i for i, d in enumerate(self._dates)}
        if grid is None:
            for r in self._items:
                if isinstance(r, Raster):
                    grid = r.grid
                    break
        self.grid = grid

    @classmethod
    def from_rasters(cls, stream: str, rasters: dict | Iterable[tuple]) -> "RasterSeries":
        items = rasters.items() if isinstance(rasters, dict) else rasters
        return cls(stream, items)

    @property
    def dates(self) -> list[dt.date]:
        return list(self._dates)

    def __len__(self) -> int:
        return len(self._dates)

    def __contains__(self, day) -> bool:
        return parse_date(day) in self._index

    def __getitem__(self, day) -> Raster:
        day = parse_date(day)
        try:
            i = self._index[day]
        except KeyError:
            raise MissingDate(self.stream, day) from None
        return self.raster_at(i)

    def raster_at(self, i: int) -> Raster:
        item = self._items[i]
        if isinstance(item, Raster):
            raster = item
        else:
            raster = load_raster(item)
        if self.grid is not None and raster.grid != self.grid:
            raise GridMismatchError(
                f"{self.stream} {self._dates[i]}: grid {raster.grid} != {self.grid}"
            )
        return raster

    def __iter__(self) -> Iterator[tuple[dt.date, Raster]]:
        for i, d in enumerate(self._dates):
            yield d, self.raster_at(i)

    def rasters(self) -> list[Raster]:
        return [self.raster_at(i) for i in range(len(self))]

    def subset(self, dates: Iterable) -> "RasterSeries":
        """Series restricted to ``dates``; every requested date must exist."""
        wanted = sorted({parse_date(d) for d in dates})
        missing = [d for d in wanted if d not in self._index]
        if missing:
            raise MissingDate(self.stream, missing[0])
        return RasterSeries(
            self.stream, [(d, self._items[self._index[d]]) for d in wanted], self.grid
        )

    def materialize(self) -> "RasterSeries":
        """Load every lazily referenced raster into memory."""
        return RasterSeries(self.stream, list(self), self.grid)

    def __repr__(self) -> str:
        span = f"{self._dates[0]}..{self._dates[-1]}" if self._dates else "empty"
        return f"RasterSeries({self.stream!r}, n={len(self)}, {span})"


class MissingDate(DateMismatchError, KeyError):
    def __init__(self, stream: str, day: dt.date):
        self.stream = stream
        self.day = day
        super().__init__(f"stream {stream!r} has no raster for {day}")

    def __str__(self) -> str:
        return self.args[0]


def check_aligned(a: RasterSeries, b: RasterSeries) -> None:
    if a.dates != b.dates:
        only_a = sorted(set(a.dates) - set(b.dates))
        only_b = sorted(set(b.dates) - set(a.dates))
        raise DateMismatchError(
            f"series {a.stream!r} and {b.stream!r} are not date-aligned "
            f"(only in first: {only_a[:3]}, only in second: {only_b[:3]})"
        )


@dataclass
class Entry:
    stream: str
    date: dt.date | None
    path: str
    grid: Grid
    acquired: dt.datetime | None = None

    def to_dict(self) -> dict:
        d = {
            "stream": self.stream,
            "date": self.date.isoformat() if self.date else None,
            "path": self.path,
            "grid": self.grid.to_dict(),
        }
        if self.acquired is not None:
            d["acquired"] = self.acquired.isoformat(timespec="seconds")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Entry":
        stream = d["stream"]
        if stream not in STREAMS:
            raise DataError(f"unknown stream {stream!r}")
        acquired = d.get("acquired")
        return cls(
            stream=stream,
            date=parse_date(d["date"]) if d.get("date") else None,
            path=d["path"],
            grid=Grid.from_dict(d["grid"]),
            acquired=dt.datetime.fromisoformat(acquired) if acquired else None,
        )


@dataclass
class Manifest:
    """Index of every raster under a dataset root."""

    root: Path
    entries: list[Entry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def load(cls, root) -> "Manifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            raise ConfigError(f"no {MANIFEST_NAME} under {root}")
        with open(path) as fh:
            doc = json.load(fh)
        try:
            entries = [Entry.from_dict(e) for e in doc["entries"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from exc
        return cls(root, entries, doc.get("meta", {}))

    def save(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        ordered = sorted(
            self.entries,
            key=lambda e: (e.stream, e.date or dt.date.min, e.acquired or dt.datetime.min, e.path),
        )
        doc = {
            "version": MANIFEST_VERSION,
            "meta": self.meta,
            "entries": [e.to_dict() for e in ordered],
        }
        path = self.root / MANIFEST_NAME
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    def streams(self) -> list[str]:
        return sorted({e.stream for e in self.entries})

    def add(
        self,
        stream: str,
        raster: Raster,
        date=None,
        acquired: dt.datetime | None = None,
        path: str | None = None,
    ) -> Entry:
        """Write ``raster`` under the root and register it."""
        if stream not in STREAMS:
            raise ConfigError(f"unknown stream {stream!r}")
        day = parse_date(date) if date is not None else None
        if path is None:
            if acquired is not None:
                path = f"{stream}/{acquired.strftime('%Y%m%dT%H%M%S')}.mwbr"
            elif day is not None:
                path = f"{stream}/{day.isoformat()}.mwbr"
            else:
                path = f"{stream}.mwbr"
        save_raster(raster, self.root / path)
        entry = Entry(stream, day, path, raster.grid, acquired)
        self.entries = [e for e in self.entries if e.path != path]
        self.entries.append(entry)
        return entry

    def series(self, stream: str) -> RasterSeries:
        entries = [e for e in self.entries if e.stream == stream and e.date is not None]
        if not entries:
            raise DataError(f"dataset has no {stream!r} stream")
        grids = {e.grid for e in entries}
        if len(grids) > 1:
            raise GridMismatchError(f"stream {stream!r} mixes grids {sorted(map(str, grids))}")
        return RasterSeries(stream, [(e.date, self.root / e.path) for e in entries], grids.pop())

    def static(self, stream: str) -> Raster:
        entries = [e for e in self.entries if e.stream == stream]
        if not entries:
            raise DataError(f"dataset has no {stream!r} layer")
        if len(entries) > 1:
            raise DataError(f"static layer {stream!r} has {len(entries)} entries")
        return load_raster(self.root / entries[0].path)

    def has(self, stream: str) -> bool:
        return any(e.stream == stream for e in self.entries)

    def scenes(self, stream: str = "backscatter") -> list[tuple[dt.datetime, Path]]:
        """Timestamped scene entries, sorted by acquisition time."""
        out = [
            (e.acquired, self.root / e.path)
            for e in self.entries
            if e.stream == stream and e.acquired is not None
        ]
        return sorted(out, key=lambda p: p[0])
