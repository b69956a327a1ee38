"""Masked single-band rasters and the MWBR on-disk format.

A pixel is invalid when its value is NaN; there is no separate mask band.
Rasters are immutable: the backing array is flagged read-only and every
operation returns a new object.

MWBR layout (little-endian)::

    bytes 0-3   magic  b"MWBR"
    u16         version (1)
    u16         reserved (0)
    u32         width
    u32         height
    f32         cell size in meters
    f32 * width * height, row-major, row 0 = north
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridMismatchError, RasterFormatError

MAGIC = b"MWBR"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIf")
HEADER_SIZE = _HEADER.size
# u32 fields cap each dimension; the product must also be addressable
MAX_PIXELS = 2**31 - 1

LANDMASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class Grid:
    width: int
    height: int
    cell_size: float

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "cell_size": self.cell_size}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(int(d["width"]), int(d["height"]), float(d["cell_size"]))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


class Raster:
    """A 2-D float32 field on a regular grid with NaN as the invalid marker.

    Args:
        values: 2-D array-like, converted to float32 (rows x columns).
        cell_size: Pixel edge length in meters.
    """

    __slots__ = ("_values", "_cell_size")

    def __init__(self, values, cell_size: float = 100.0):
        arr = np.array(values, dtype=np.float32, copy=True)
        if arr.ndim != 2:
            raise ConfigError(f"raster values must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError(f"raster must be at least 1x1, got {arr.shape}")
        if not (np.isfinite(cell_size) and cell_size > 0):
            raise ConfigError(f"cell size must be positive, got {cell_size}")
        arr.flags.writeable = False
        self._values = arr
        self._cell_size = float(np.float32(cell_size))

    @classmethod
    def _wrap(cls, arr: np.ndarray, cell_size: float) -> "Raster":
        # Trusted fast path: arr is already a fresh float32 2-D array.
        obj = cls.__new__(cls)
        arr.flags.writeable = False
        obj._values = arr
        obj._cell_size = float(np.float32(cell_size))
        return obj

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def cell_size(self) -> float:
        return self._cell_size

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape

    @property
    def grid(self) -> Grid:
        return Grid(self.width, self.height, self.cell_size)

    @property
    def valid(self) -> np.ndarray:
        """Boolean array, True where the pixel holds an observation."""
        return ~np.isnan(self._values)

    def with_values(self, values) -> "Raster":
        """New raster on the same grid with different values."""
        out = Raster(values, self._cell_size)
        if out.shape != self.shape:
            raise GridMismatchError(f"shape {out.shape} does not match {self.shape}")
        return out

    def same_grid(self, other: "Raster") -> bool:
        return self.shape == other.shape and self.cell_size == other.cell_size

    def check_grid(self, other: "Raster", what: str = "raster") -> None:
        if not self.same_grid(other):
            raise GridMismatchError(
                f"{what} grid {other.grid} does not match {self.grid}"
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return self.same_grid(other) and np.array_equal(
            self._values, other._values, equal_nan=True
        )

    def __hash__(self):
        return hash((self.shape, self.cell_size, self._values.tobytes()))

    def __repr__(self) -> str:
        n, frac = valid_stats(self)
        return (
            f"Raster({self.height}x{self.width}, cell={self.cell_size:g} m, "
            f"valid={n} ({frac:.1%}))"
        )


def save_raster(raster: Raster, path) -> Path:
    """Write ``raster`` as an MWBR file and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, VERSION, 0, raster.width, raster.height, raster.cell_size)
    payload = np.ascontiguousarray(raster.values, dtype="<f4").tobytes()
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)
    return path


def read_header(path) -> tuple[int, int, float]:
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    return _parse_header(head, path)


def _parse_header(head: bytes, path) -> tuple[int, int, float]:
    if len(head) < HEADER_SIZE:
        raise RasterFormatError(f"{path}: truncated header ({len(head)} bytes)")
    magic, version, _reserved, width, height, cell = _HEADER.unpack(head)
    if magic != MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise RasterFormatError(f"{path}: unsupported MWBR version {version}")
    if width < 1 or height < 1:
        raise RasterFormatError(f"{path}: degenerate dimensions {width}x{height}")
    if width * height > MAX_PIXELS:
        raise RasterFormatError(f"{path}: dimension overflow {width}x{height}")
    if not (np.isfinite(cell) and cell > 0):
        raise RasterFormatError(f"{path}: invalid cell size {cell}")
    return width, height, float(cell)


def load_raster(path) -> Raster:
    """Read an MWBR file.

    Raises:
        RasterFormatError: bad magic/version, truncated or oversized payload,
            or dimensions that overflow.
    """
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
        width, height, cell = _parse_header(head, path)
        expected = width * height * 4
        payload = fh.read(expected + 1)
    if len(payload) < expected:
        raise RasterFormatError(
            f"{path}: truncated payload, {len(payload)} of {expected} bytes"
        )
    if len(payload) > expected:
        raise RasterFormatError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(height, width)
    return Raster._wrap(arr, cell)


def apply_landmask(raster: Raster, landmask: Raster) -> Raster:
    """Invalidate ocean pixels (landmask < 0.5) and keep land pixels unchanged."""
    raster.check_grid(landmask, "landmask")
    lm = landmask.values
    ocean = ~(lm >= LANDMASK_THRESHOLD)  # NaN landmask counts as ocean
    out = raster.values.copy()
    out[ocean] = np.nan
    return Raster._wrap(out, raster.cell_size)


def valid_stats(raster: Raster) -> tuple[int, float]:
    """Return ``(n_valid, fraction_valid)``."""
    n = int(np.count_nonzero(~np.isnan(raster.values)))
    return n, n / raster.values.size
