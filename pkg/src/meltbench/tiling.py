"""Tile sampling, stride/erode mosaic inference and input preprocessing.

Mosaic inference slides a tile over the scene with stride ``s``; the last
tile on each axis is clamped to the image edge.  Each predicted tile loses
its outer ``e`` pixels on every side that faces the scene interior (sides
lying on the scene border are kept, otherwise the border would never be
covered).  Overlapping pixels take the arithmetic mean of the surviving
predictions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, CoverageError, DataError
from .filters import gaussian_filter
from .raster import Raster


@dataclass(frozen=True)
class TileSpec:
    tile_h: int = 512
    tile_w: int = 512
    stride: int = 480
    erode: int = 16

    def __post_init__(self):
        if self.tile_h < 1 or self.tile_w < 1:
            raise ConfigError(f"tile must be at least 1x1, got {self.tile_h}x{self.tile_w}")
        small = min(self.tile_h, self.tile_w)
        if self.erode < 0 or 2 * self.erode >= small:
            raise ConfigError(f"erode {self.erode} must satisfy 0 <= e < {small}/2")
        if not 1 <= self.stride <= small - 2 * self.erode:
            raise ConfigError(
                f"stride {self.stride} must lie in [1, {small - 2 * self.erode}] "
                "so eroded tiles leave no gaps"
            )

    def clamped(self, height: int, width: int) -> "TileSpec":
        """Shrink the tile to fit a ``height`` x ``width`` scene."""
        th, tw = min(self.tile_h, height), min(self.tile_w, width)
        if (th, tw) == (self.tile_h, self.tile_w):
            return self
        small = min(th, tw)
        e = min(self.erode, (small - 1) // 2)
        s = max(1, min(self.stride, small - 2 * e))
        return replace(self, tile_h=th, tile_w=tw, stride=s, erode=e)


BENCHMARK_TILES = TileSpec(512, 512, 480, 16)


# ---------------------------------------------------------------------------
# random tiles


def sample_tiles(grid: tuple[int, int], spec: TileSpec, n: int, seed) -> list[tuple[int, int]]:
    """``n`` tile origins ``(row, col)`` drawn uniformly over all legal positions.

    ``grid`` is ``(width, height)``.  The same seed yields the same list.
    """
    width, height = grid
    if spec.tile_h > height or spec.tile_w > width:
        raise ConfigError(f"tile {spec.tile_h}x{spec.tile_w} larger than grid {height}x{width}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rows = rng.integers(0, height - spec.tile_h + 1, size=n)
    cols = rng.integers(0, width - spec.tile_w + 1, size=n)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


# ---------------------------------------------------------------------------
# mosaic inference


def tile_origins(length: int, tile: int, stride: int) -> list[int]:
    if tile >= length:
        return [0]
    out = list(range(0, length - tile, stride))
    out.append(length - tile)
    return out


def _kept(start: int, tile: int, length: int, erode: int) -> tuple[int, int]:
    """Half-open range of a tile that survives erosion, in tile coordinates."""
    lo = erode if start > 0 else 0
    hi = tile - erode if start + tile < length else tile
    return lo, hi


@dataclass(frozen=True)
class TileBox:
    row: int
    col: int
    h: int
    w: int
    keep_rows: tuple[int, int]
    keep_cols: tuple[int, int]


def tile_boxes(shape: tuple[int, int], spec: TileSpec) -> list[TileBox]:
    height, width = shape
    spec = spec.clamped(height, width)
    boxes = []
    for r in tile_origins(height, spec.tile_h, spec.stride):
        kr = _kept(r, spec.tile_h, height, spec.erode)
        for c in tile_origins(width, spec.tile_w, spec.stride):
            kc = _kept(c, spec.tile_w, width, spec.erode)
            boxes.append(TileBox(r, c, spec.tile_h, spec.tile_w, kr, kc))
    return boxes


def coverage_counts(shape: tuple[int, int], spec: TileSpec) -> np.ndarray:
    """Number of eroded tiles covering each pixel."""
    counts = np.zeros(shape, dtype=np.int64)
    for b in tile_boxes(shape, spec):
        counts[b.row + b.keep_rows[0]: b.row + b.keep_rows[1],
               b.col + b.keep_cols[0]: b.col + b.keep_cols[1]] += 1
    return counts


def _stack_array(inputs) -> tuple[np.ndarray, float]:
    if isinstance(inputs, Raster):
        return inputs.values[None], inputs.cell_size
    if isinstance(inputs, np.ndarray):
        arr = inputs[None] if inputs.ndim == 2 else inputs
        return np.asarray(arr, dtype=np.float32), 100.0
    rasters = list(inputs)
    if rasters and all(isinstance(r, Raster) for r in rasters):
        cell = rasters[0].cell_size
        for r in rasters[1:]:
            rasters[0].check_grid(r, "input channel")
        return np.stack([r.values for r in rasters]), cell
    return np.stack([np.asarray(r, dtype=np.float32) for r in rasters]), 100.0


def mosaic_predict(
    predict: Callable[[np.ndarray], np.ndarray],
    inputs,
    spec: TileSpec = BENCHMARK_TILES,
    threads: int = 1,
    cell_size: float | None = None,
) -> Raster:
    """Run ``predict`` tile by tile and merge the eroded tiles by averaging.

    Args:
        predict: Maps a ``(channels, h, w)`` float32 tile to an ``(h, w)`` tile.
            Must be thread-safe when ``threads > 1``.
        inputs: Channel stack as a ``(C, H, W)`` array, a 2-D array, or a list
            of same-grid rasters.
        spec: Tile geometry; clamped to the scene when the scene is smaller.
    """
    stack, cell = _stack_array(inputs)
    if cell_size is not None:
        cell = cell_size
    _, height, width = stack.shape
    boxes = tile_boxes((height, width), spec)

    def run(b: TileBox) -> np.ndarray:
        tile = stack[:, b.row: b.row + b.h, b.col: b.col + b.w]
        out = np.asarray(predict(tile))
        if out.shape != (b.h, b.w):
            raise DataError(f"tile function returned shape {out.shape}, expected {(b.h, b.w)}")
        return out

    total = np.zeros((height, width), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)

    def accumulate(b: TileBox, out: np.ndarray) -> None:
        (r0, r1), (c0, c1) = b.keep_rows, b.keep_cols
        total[b.row + r0: b.row + r1, b.col + c0: b.col + c1] += out[r0:r1, c0:c1]
        count[b.row + r0: b.row + r1, b.col + c0: b.col + c1] += 1

    if threads > 1 and len(boxes) > 1:
        # results are merged in tile order so the float sums are deterministic
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for b, out in zip(boxes, pool.map(run, boxes)):
                accumulate(b, out)
    else:
        for b in boxes:
            accumulate(b, run(b))
    if (count == 0).any():
        raise CoverageError(f"{int((count == 0).sum())} pixels not covered by any eroded tile")
    return Raster(total / count, cell)


# ---------------------------------------------------------------------------
# input preprocessing

CHANNELS = ("mar_wa1", "pmw_tb", "dem", "running_mean_sar")


@dataclass(frozen=True)
class PreprocConfig:
    """Per-channel blur and standardization.

    ``mean``/``std`` come from the training split via :func:`fit_normalization`.
    """

    channels: tuple[str, ...] = CHANNELS
    blur: dict = field(default_factory=lambda: {"mar_wa1": (99, 33.0), "pmw_tb": (45, 15.0)})
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    def __post_init__(self):
        for name, (k, s) in self.blur.items():
            if k < 1 or k % 2 == 0 or not s > 0:
                raise ConfigError(f"bad blur for {name}: kernel {k}, sigma {s}")
        if self.std is not None and any(not sd > 0 for sd in self.std):
            raise DataError(f"channel std must be > 0, got {self.std}")

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "blur": {k: list(v) for k, v in self.blur.items()},
            "mean": list(self.mean) if self.mean is not None else None,
            "std": list(self.std) if self.std is not None else None,
        }


def _as_channel(x) -> np.ndarray:
    return (x.values if isinstance(x, Raster) else np.asarray(x)).astype(np.float64)


def blur_channels(stack: Sequence, cfg: PreprocConfig) -> list[np.ndarray]:
    if len(stack) != len(cfg.channels):
        raise ConfigError(f"expected {len(cfg.channels)} channels, got {len(stack)}")
    out = []
    for name, x in zip(cfg.channels, stack):
        arr = _as_channel(x)
        if name in cfg.blur:
            k, s = cfg.blur[name]
            arr = gaussian_filter(arr, k, s)
        out.append(arr)
    return out


def fit_normalization(stacks: Sequence[Sequence], cfg: PreprocConfig = PreprocConfig()) -> PreprocConfig:
    """Per-channel mean and std over the valid pixels of the training stacks."""
    n = len(cfg.channels)
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    cnt = np.zeros(n)
    for stack in stacks:
        for i, arr in enumerate(blur_channels(stack, cfg)):
            v = arr[~np.isnan(arr)]
            s1[i] += v.sum()
            s2[i] += (v * v).sum()
            cnt[i] += v.size
    if (cnt == 0).any():
        raise DataError("a channel has no valid training pixels")
    mean = s1 / cnt
    var = np.maximum(s2 / cnt - mean**2, 0.0)
    std = np.sqrt(var)
    for name, sd, m in zip(cfg.channels, std, mean):
        if not sd > 1e-12 * max(1.0, abs(m)):
            raise DataError(f"channel {name!r} is constant (std = 0); cannot standardize")
    return replace(cfg, mean=tuple(float(m) for m in mean), std=tuple(float(s) for s in std))


def preprocess_inputs(stack: Sequence, cfg: PreprocConfig) -> np.ndarray:
    """Blur the coarse channels, then standardize each channel.

    Returns a ``(C, H, W)`` float32 array; NaN pixels stay NaN.
    """
    if cfg.mean is None or cfg.std is None:
        raise ConfigError("normalization statistics missing; call fit_normalization first")
    chans = blur_channels(stack, cfg)
    out = [(arr - m) / s for arr, m, s in zip(chans, cfg.mean, cfg.std)]
    return np.stack(out).astype(np.float32)


def receptive_field(n_blocks: int) -> int:
    """Theoretical receptive field in pixels of a UNet with ``n_blocks`` pooling levels.

    Evaluates ``4 * 2**b + sum(4 * 2**i for i in 0..b)``.
    """
    if n_blocks < 0:
        raise ConfigError(f"n_blocks must be >= 0, got {n_blocks}")
    b = int(n_blocks)
    return 4 * 2**b + sum(4 * 2**i for i in range(b + 1))
