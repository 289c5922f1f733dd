"""Ego-anchored bird's-eye-view occupancy rasters.

Cells are indexed ``cells[v, u]`` where column ``u`` follows the longitudinal
x axis and row ``v`` the lateral y axis, so a pixel maps to ego-relative
metres as ``(x, y) = r * (u - u0, v - v0)``.  Maps are translated into the
ego frame but never rotated.
"""

from __future__ import annotations

import base64
import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .scenario import VehicleState

VEHICLE_LENGTH = 4.5  # m
VEHICLE_WIDTH = 2.0  # m
HAZARD_RADIUS = 1.0  # m


class ConfigurationError(ValueError):
    """Raised for grid / pooling / patch settings that cannot be honoured."""


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    scale: float  # metres per pixel
    anchor_u: int
    anchor_v: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("grid dimensions must be positive")
        if not self.scale > 0:
            raise ConfigurationError("grid scale must be positive")
        if not (0 <= self.anchor_u < self.width and 0 <= self.anchor_v < self.height):
            raise ConfigurationError("ego anchor must lie inside the grid")

    @classmethod
    def centered(cls, size: int, half_extent_m: float) -> "GridSpec":
        """Square grid whose centre anchor sees ``half_extent_m`` to each side."""
        return cls(size, size, 2.0 * half_extent_m / size, size // 2, size // 2)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class BevMap:
    grid: GridSpec
    cells: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=float)
        if cells.shape != self.grid.shape:
            raise ConfigurationError(f"cells shape {cells.shape} does not match grid {self.grid.shape}")
        if cells.size and (cells.min() < 0.0 or cells.max() > 1.0):
            raise ValueError("occupancy values must lie in [0, 1]")
        object.__setattr__(self, "cells", cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BevMap):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.timestamp == other.timestamp
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class OverlaySpec:
    tick_spacing: float = 5.0  # metres between ruler ticks
    value: float = 1.0
    stroke_lengths: Optional[Tuple[int, int]] = None  # (along u, along v) in pixels; None = whole grid

    def __post_init__(self) -> None:
        if not self.tick_spacing > 0:
            raise ConfigurationError("tick spacing must be positive")
        if not 0.0 <= self.value <= 1.0:
            raise ConfigurationError("stroke value must lie in [0, 1]")


# -- coordinate mapping --------------------------------------------------------


def pixel_to_metric(u: float, v: float, grid: GridSpec) -> Tuple[float, float]:
    return (grid.scale * (u - grid.anchor_u), grid.scale * (v - grid.anchor_v))


def metric_to_pixel(x: float, y: float, grid: GridSpec) -> Tuple[int, int, bool]:
    """Nearest pixel to an ego-relative point, plus whether it lies on the grid."""
    u = math.floor(x / grid.scale + grid.anchor_u + 0.5)
    v = math.floor(y / grid.scale + grid.anchor_v + 0.5)
    inside = 0 <= u < grid.width and 0 <= v < grid.height
    return u, v, inside


@functools.lru_cache(maxsize=32)
def _pixel_centres(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    u = np.arange(grid.width, dtype=float)
    v = np.arange(grid.height, dtype=float)
    xs = grid.scale * (u - grid.anchor_u)
    ys = grid.scale * (v - grid.anchor_v)
    return xs, ys


# -- rendering -----------------------------------------------------------------


def _window(centres: np.ndarray, lo: float, hi: float) -> slice:
    start = int(np.searchsorted(centres, lo, side="left"))
    stop = int(np.searchsorted(centres, hi, side="right"))
    return slice(start, stop)


def paint_box(cells: np.ndarray, grid: GridSpec, x: float, y: float, yaw: float,
              length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH, value: float = 1.0) -> None:
    """Fill pixels whose centres fall inside an oriented rectangle (in place)."""
    xs, ys = _pixel_centres(grid)
    c, s = math.cos(yaw), math.sin(yaw)
    half_l, half_w = 0.5 * length, 0.5 * width
    ext_x = abs(c) * half_l + abs(s) * half_w
    ext_y = abs(s) * half_l + abs(c) * half_w
    cu = _window(xs, x - ext_x, x + ext_x)
    cv = _window(ys, y - ext_y, y + ext_y)
    if cu.start >= cu.stop or cv.start >= cv.stop:
        return
    dx = xs[cu][None, :] - x
    dy = ys[cv][:, None] - y
    along = dx * c + dy * s
    across = -dx * s + dy * c
    inside = (np.abs(along) <= half_l) & (np.abs(across) <= half_w)
    block = cells[cv, cu]
    block[inside] = np.maximum(block[inside], value)


def paint_disc(cells: np.ndarray, grid: GridSpec, x: float, y: float,
               radius: float = HAZARD_RADIUS, value: float = 1.0) -> None:
    xs, ys = _pixel_centres(grid)
    cu = _window(xs, x - radius, x + radius)
    cv = _window(ys, y - radius, y + radius)
    if cu.start >= cu.stop or cv.start >= cv.stop:
        return
    dx = xs[cu][None, :] - x
    dy = ys[cv][:, None] - y
    inside = dx * dx + dy * dy <= radius * radius
    block = cells[cv, cu]
    block[inside] = np.maximum(block[inside], value)


def rasterize(
    agents: Sequence[VehicleState],
    ego: VehicleState,
    grid: GridSpec,
    hazard: Optional[Tuple[float, float]] = None,
    timestamp: float = 0.0,
) -> BevMap:
    """Render the ego and surrounding vehicles (and an optional hazard disc).

    Everything is placed relative to ``ego`` so the ego footprint sits on the
    anchor pixel.  Anything off the grid is clipped.
    """
    cells = np.zeros(grid.shape, dtype=float)
    paint_box(cells, grid, 0.0, 0.0, ego.yaw)
    for a in agents:
        if ego.agent_id and a.agent_id == ego.agent_id:
            continue
        paint_box(cells, grid, a.x - ego.x, a.y - ego.y, a.yaw)
    if hazard is not None:
        paint_disc(cells, grid, hazard[0] - ego.x, hazard[1] - ego.y)
    return BevMap(grid, cells, timestamp)


def axis_stroke_set(grid: GridSpec, spec: OverlaySpec) -> np.ndarray:
    """Boolean mask of ruler-tick pixels on the two axes through the anchor."""
    step = max(1, int(round(spec.tick_spacing / grid.scale)))
    len_u, len_v = spec.stroke_lengths or (max(grid.width, grid.height),) * 2
    mask = np.zeros(grid.shape, dtype=bool)
    du = np.arange(grid.width) - grid.anchor_u
    dv = np.arange(grid.height) - grid.anchor_v
    mask[grid.anchor_v, :] |= (du % step == 0) & (np.abs(du) <= len_u)
    mask[:, grid.anchor_u] |= (dv % step == 0) & (np.abs(dv) <= len_v)
    return mask


def overlay_axes(bev: BevMap, spec: OverlaySpec) -> BevMap:
    omega = axis_stroke_set(bev.grid, spec)
    cells = bev.cells.copy()
    cells[omega] = spec.value
    return BevMap(bev.grid, cells, bev.timestamp)


def pool(bev: BevMap, factor: int) -> BevMap:
    """Max-pool by an integer factor that divides both grid dimensions."""
    g = bev.grid
    if factor < 1 or g.width % factor or g.height % factor:
        raise ConfigurationError(
            f"pool factor {factor} does not divide grid {g.width}x{g.height}; "
            "rasterize directly at the target size instead"
        )
    if factor == 1:
        return bev
    h, w = g.height // factor, g.width // factor
    pooled = bev.cells.reshape(h, factor, w, factor).max(axis=(1, 3))
    new_grid = GridSpec(w, h, g.scale * factor, g.anchor_u // factor, g.anchor_v // factor)
    return BevMap(new_grid, pooled, bev.timestamp)


# -- image export --------------------------------------------------------------


def to_pgm(bev_or_cells) -> bytes:
    """Binary 8-bit grayscale PGM (P5), occupancy scaled to 0..255."""
    cells = bev_or_cells.cells if isinstance(bev_or_cells, BevMap) else np.asarray(bev_or_cells)
    h, w = cells.shape
    data = np.clip(np.rint(cells * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def from_pgm(blob: bytes) -> np.ndarray:
    """Parse a P5 PGM written by :func:`to_pgm` back to occupancy in [0, 1]."""
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(p) for p in parts[1].split())
    maxval = int(parts[2])
    data = np.frombuffer(parts[3], dtype=np.uint8, count=w * h)
    return data.reshape(h, w).astype(float) / maxval


def to_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.asarray(rgb, dtype=np.uint8).tobytes()


def pgm_base64(bev: BevMap) -> str:
    return base64.b64encode(to_pgm(bev)).decode("ascii")


def stack_masks(maps: Iterable[BevMap]) -> np.ndarray:
    return np.stack([m.cells > 0 for m in maps])
