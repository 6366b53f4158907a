"""Dyadic density maps and the pyramid operators the multi-resolution loss is built on.

A density map at level ``i`` is a square ``2**i x 2**i`` grid of float64 cell
densities (persons per cell), stored row-major with ``(row, col) = (y, x)``.
Level 0 is a single cell holding the global count.

Operators:

* ``rasterize``           -- count point annotations into grid cells.
* ``downsample_sum``      -- coarsen by block sums; preserves total count.
* ``downsample_avg``      -- coarsen by block means.
* ``upsample_replicate``  -- refine by copying each cell into its descendants.
* ``residual``            -- fine map minus the coarse map spread uniformly
                             over its blocks; when the coarse map is the sum
                             downsample of the fine one, the residual
                             average-downsamples to exactly zero.
* ``build_pyramid``       -- the stack of sum-downsamples at a resolution set.

Replication upsampling is the adjoint of sum pooling: for any ``a`` at level
``l1`` and ``b`` at level ``l2 > l1``,
``dot(upsample_replicate(a, l2), b) == dot(a, downsample_sum(b, l1))``.
The loss gradients rely on this identity.

All operations are pure; map data is locked read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


def _as_locked_f64(data, shape_hint: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{shape_hint} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DensityMap:
    """Square 2^level x 2^level grid of float64 densities.

    ``data`` may be given flat (length 4^level) or square; it is copied,
    coerced to float64, and locked read-only.
    """

    level: int
    data: np.ndarray

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")
        side = 1 << self.level
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            if arr.size != side * side:
                raise ValueError(
                    f"flat data length {arr.size} does not match 4^{self.level} = {side * side}"
                )
            arr = arr.reshape(side, side)
        elif arr.shape != (side, side):
            raise ValueError(f"expected shape {(side, side)} at level {self.level}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("density map contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def side(self) -> int:
        return 1 << self.level

    def total(self) -> float:
        return float(self.data.sum())

    def require_nonnegative(self) -> "DensityMap":
        """Check the ground-truth invariant (all entries >= 0)."""
        if np.any(self.data < 0.0):
            raise ValueError("ground-truth density map has negative entries")
        return self


@dataclass(frozen=True)
class PointAnnotations:
    """2-D point annotations in the square scene [0, scene_size)^2."""

    points: np.ndarray  # (N, 2) float64, columns (x, y)
    scene_size: float

    def __post_init__(self):
        if not (self.scene_size > 0.0) or not np.isfinite(self.scene_size):
            raise ValueError(f"scene_size must be finite and > 0, got {self.scene_size}")
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("annotations contain non-finite coordinates")
        bad = np.nonzero((pts < 0.0) | (pts >= self.scene_size))
        if bad[0].size:
            i = int(bad[0][0])
            raise ValueError(
                f"point {i} at ({pts[i, 0]}, {pts[i, 1]}) lies outside [0, {self.scene_size})^2"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ResidualMap:
    """Fine-level map minus a coarse map spread uniformly over its blocks."""

    fine_level: int
    coarse_level: int
    data: np.ndarray

    def __post_init__(self):
        if not self.coarse_level < self.fine_level:
            raise ValueError(
                f"coarse level {self.coarse_level} must be < fine level {self.fine_level}"
            )
        side = 1 << self.fine_level
        arr = _as_locked_f64(self.data, "residual map")
        if arr.shape != (side, side):
            raise ValueError(f"expected shape {(side, side)}, got {arr.shape}")
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class ResolutionSet:
    """Strictly increasing grid levels; the last one is the prediction level."""

    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if not levels:
            raise ValueError("resolution set must not be empty")
        if any(v < 0 for v in levels):
            raise ValueError(f"levels must be >= 0, got {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"levels must be strictly increasing, got {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def of(cls, levels: "ResolutionSet | Iterable[int]") -> "ResolutionSet":
        if isinstance(levels, ResolutionSet):
            return levels
        return cls(tuple(levels))

    @classmethod
    def dense(cls, n: int, prediction_level: int) -> "ResolutionSet":
        """The set {0, 1, ..., n} plus the prediction level."""
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        if prediction_level <= n:
            raise ValueError(f"prediction level {prediction_level} must exceed n = {n}")
        return cls(tuple(range(n + 1)) + (prediction_level,))

    @property
    def prediction_level(self) -> int:
        return self.levels[-1]

    @property
    def sub_levels(self) -> tuple[int, ...]:
        return self.levels[:-1]

    def __iter__(self) -> Iterator[int]:
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class Pyramid:
    """Ordered stack of sum-downsamples of one map, finest level last."""

    maps: tuple[DensityMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        ResolutionSet(self.levels)  # validates ordering

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(m.level for m in self.maps)

    def at_level(self, level: int) -> DensityMap:
        for m in self.maps:
            if m.level == level:
                return m
        raise KeyError(f"no map at level {level}; pyramid holds {self.levels}")

    def __iter__(self) -> Iterator[DensityMap]:
        return iter(self.maps)

    def __len__(self) -> int:
        return len(self.maps)


def rasterize(ann: PointAnnotations, level: int) -> DensityMap:
    """Count annotations into the uniform 2^level x 2^level partition of the scene.

    Cells are half-open, so a point on an interior grid line belongs to the
    cell with the larger index. Floating-point boundary rounding is resolved
    by clamping indices into the grid.
    """
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    side = 1 << level
    grid = np.zeros((side, side), dtype=np.float64)
    if len(ann):
        scaled = ann.points * (side / ann.scene_size)
        cols = np.minimum(np.floor(scaled[:, 0]).astype(np.int64), side - 1)
        rows = np.minimum(np.floor(scaled[:, 1]).astype(np.int64), side - 1)
        np.add.at(grid, (rows, cols), 1.0)
    return DensityMap(level, grid)


def _pool_sum(data: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
    factor = 1 << (from_level - to_level)
    if factor == 1:
        return data
    out_side = data.shape[-1] >> (from_level - to_level)
    shaped = data.reshape(data.shape[:-2] + (out_side, factor, out_side, factor))
    return shaped.sum(axis=(-3, -1))


def _replicate(data: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
    factor = 1 << (to_level - from_level)
    if factor == 1:
        return data
    return data.repeat(factor, axis=-2).repeat(factor, axis=-1)


def downsample_sum(m: DensityMap, target_level: int) -> DensityMap:
    """Coarsen by summing each block of 4^(level - target_level) cells."""
    if target_level < 0 or target_level > m.level:
        raise ValueError(f"target level {target_level} not in [0, {m.level}]")
    return DensityMap(target_level, _pool_sum(m.data, m.level, target_level))


def downsample_avg(m: DensityMap, target_level: int) -> DensityMap:
    """Coarsen by block means; equals downsample_sum scaled by 4^(target - level)."""
    if target_level < 0 or target_level > m.level:
        raise ValueError(f"target level {target_level} not in [0, {m.level}]")
    scale = 4.0 ** (target_level - m.level)
    return DensityMap(target_level, _pool_sum(m.data, m.level, target_level) * scale)


def upsample_replicate(m: DensityMap, target_level: int) -> DensityMap:
    """Refine by copying each cell's value into all of its descendant cells."""
    if target_level < m.level:
        raise ValueError(f"target level {target_level} must be >= map level {m.level}")
    return DensityMap(target_level, _replicate(m.data, m.level, target_level))


def residual(fine: DensityMap, coarse: DensityMap) -> ResidualMap:
    """Fine map minus the coarse map spread uniformly over its blocks."""
    if not coarse.level < fine.level:
        raise ValueError(f"coarse level {coarse.level} must be < fine level {fine.level}")
    spread = 4.0 ** (coarse.level - fine.level) * _replicate(coarse.data, coarse.level, fine.level)
    return ResidualMap(fine.level, coarse.level, fine.data - spread)


def build_pyramid(m: DensityMap, levels: ResolutionSet | Iterable[int]) -> Pyramid:
    """Sum-downsample ``m`` to every level in ``levels`` (which must be increasing)."""
    levels = ResolutionSet.of(levels)
    if levels.prediction_level > m.level:
        raise ValueError(f"requested level {levels.prediction_level} exceeds map level {m.level}")
    return Pyramid(tuple(downsample_sum(m, i) for i in levels))


def maps_from_batch(batch: np.ndarray, level: int) -> list[DensityMap]:
    """Wrap a (B, 2^level, 2^level) array as a list of density maps."""
    return [DensityMap(level, batch[b]) for b in range(batch.shape[0])]
