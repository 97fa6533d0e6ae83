"""Reference grids and training labels from LiDAR point clouds.

The label pipeline for one annotation frame is:

1. ray-trace the LiDAR cloud into a Cartesian measurement grid,
2. accumulate several of those over time in a dynamic grid map and
   project it back to the measurement frame (done by the caller or by
   :func:`accumulate_lidar_grids`),
3. stamp full occupancy into the ground-truth object boxes,
4. convert to the radar's polar raster,
5. clear occupancy in the partially observed area except around actual
   radar detections,
6. threshold each cell to one of free / occupied / unknown.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evidential import CellClass, classify_planes
from .grids import (
    CartesianGrid,
    CartesianGridSpec,
    Detection,
    PolarGrid,
    PolarGridSpec,
    rasterize,
    rot2,
)

# LiDAR returns are trusted: strong free space along the ray and strong
# occupancy at the return, still leaving residual unknown mass.
LIDAR_B_FREE = 0.9
LIDAR_B_OCC = 0.9
# Height band keeping guardrails and vehicle bodies, dropping road
# surface returns and overhead structures.
Z_MIN_M = 0.3
Z_MAX_M = 2.5
# Angular sector width for the 2D ray tracing.
SECTOR_DEG = 0.2
# Range beyond the last return that is trusted as free when a sector has
# no return at all (open road); bounded by the grid anyway.
LIDAR_TRUSTED_RANGE_M = 120.0


@dataclass(frozen=True)
class LidarScan:
    """Point cloud in the vehicle frame; points is an (N, 3) float array."""

    points: np.ndarray
    t_s: float = 0.0


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    length: float
    width: float
    yaw_deg: float

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0:
            raise ValueError("box extents must be positive")

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask for points (..., 2) inside the box."""
        local = (np.asarray(points, dtype=float) - [self.cx, self.cy]) @ rot2(
            self.yaw_deg
        )
        return (np.abs(local[..., 0]) <= self.length / 2) & (
            np.abs(local[..., 1]) <= self.width / 2
        )


@dataclass
class LabelImage:
    """Per-cell hard classes on a polar or Cartesian raster."""

    spec: PolarGridSpec | CartesianGridSpec
    classes: np.ndarray  # uint8 CellClass values

    def __post_init__(self) -> None:
        if isinstance(self.spec, PolarGridSpec):
            expect = (self.spec.a_bins, self.spec.r_bins)
        else:
            expect = (self.spec.w_cells, self.spec.h_cells)
        if self.classes.shape != expect:
            raise ValueError("class plane shape does not match spec")


def lidar_measurement_grid(
    scan: LidarScan,
    cspec: CartesianGridSpec,
    z_min: float = Z_MIN_M,
    z_max: float = Z_MAX_M,
    sector_deg: float = SECTOR_DEG,
) -> CartesianGrid:
    """Ray-trace one LiDAR cloud into a Cartesian measurement grid.

    Points outside the height band are discarded.  Per angular sector,
    cells before the first retained return become free, the return cell
    occupied, cells beyond stay vacuous.  An empty (or fully filtered)
    scan yields a fully vacuous grid.
    """
    out = CartesianGrid.vacuous(cspec)
    pts = np.asarray(scan.points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return out
    keep = (pts[:, 2] >= z_min) & (pts[:, 2] <= z_max)
    pts = pts[keep]
    if len(pts) == 0:
        return out

    n_sectors = int(round(360.0 / sector_deg))
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    sector = (np.floor(np.degrees(theta) / sector_deg) + n_sectors) % n_sectors
    r = np.hypot(pts[:, 0], pts[:, 1])
    first = np.full(n_sectors, np.inf)
    np.minimum.at(first, sector.astype(int), r)

    centers = cspec.cell_centers()
    local = centers  # sensor at the vehicle origin (roof-mounted)
    cr = np.hypot(local[..., 0], local[..., 1])
    ctheta = np.degrees(np.arctan2(local[..., 1], local[..., 0]))
    csector = ((np.floor(ctheta / sector_deg) + n_sectors) % n_sectors).astype(int)
    cfirst = first[csector]

    no_return = ~np.isfinite(cfirst)
    free = cr < np.where(no_return, LIDAR_TRUSTED_RANGE_M, cfirst)
    hit = np.isfinite(cfirst) & (np.abs(cr - cfirst) <= cspec.alpha_x_m)
    out.masses[free] = (LIDAR_B_FREE, 0.0, 1.0 - LIDAR_B_FREE)
    out.masses[hit] = (0.0, LIDAR_B_OCC, 1.0 - LIDAR_B_OCC)
    return out


def refine_with_boxes(grid: CartesianGrid, boxes: Sequence[OrientedBox]) -> CartesianGrid:
    """Stamp certain occupancy into every cell whose center lies in a box."""
    out = grid.copy()
    if not boxes:
        return out
    centers = grid.spec.cell_centers()
    inside = np.zeros(centers.shape[:2], dtype=bool)
    for box in boxes:
        inside |= box.contains(centers)
    out.masses[inside] = (0.0, 1.0, 0.0)
    return out


def filter_partial_area(
    grid: PolarGrid,
    detections: Sequence[Detection],
    dilation_radius: int = 3,
    occupied_threshold: float = 0.5,
) -> PolarGrid:
    """Remove unsupported occupancy from the partially observed area.

    Along each azimuth ray the span strictly between the first and last
    occupied bin is only partially observed; occupancy there is moved to
    unknown unless the bin lies within a Chebyshev ``dilation_radius`` of
    a radar detection bin.  Free mass is never touched.
    """
    out = grid.copy()
    occ = out.masses[..., 1] >= occupied_threshold
    if not occ.any():
        return out

    a_bins, r_bins = occ.shape
    ridx = np.arange(r_bins)
    has = occ.any(axis=1)
    first = np.where(has, np.argmax(occ, axis=1), r_bins)
    last = np.where(has, r_bins - 1 - np.argmax(occ[:, ::-1], axis=1), -1)
    partial = (ridx[None, :] > first[:, None]) & (ridx[None, :] < last[:, None])

    keep = _dilate_chebyshev(rasterize(detections, grid.spec) > 0, dilation_radius)
    clear = partial & ~keep
    out.masses[clear, 2] += out.masses[clear, 1]
    out.masses[clear, 1] = 0.0
    return out


def _dilate_chebyshev(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1)^2 square structuring element."""
    out = mask.copy()
    for axis in (0, 1):
        cur = out.copy()
        for shift in range(1, radius + 1):
            rolled = np.zeros_like(out)
            sl_to = [slice(None)] * 2
            sl_from = [slice(None)] * 2
            sl_to[axis], sl_from[axis] = slice(shift, None), slice(None, -shift)
            rolled[tuple(sl_to)] = cur[tuple(sl_from)]
            out |= rolled
            rolled = np.zeros_like(out)
            sl_to[axis], sl_from[axis] = slice(None, -shift), slice(shift, None)
            rolled[tuple(sl_to)] = cur[tuple(sl_from)]
            out |= rolled
    return out


def make_label(grid: PolarGrid) -> LabelImage:
    """Threshold a polar measurement grid into per-cell hard classes."""
    return LabelImage(grid.spec, classify_planes(grid.masses))


def class_fractions(label: LabelImage) -> dict[CellClass, float]:
    total = label.classes.size
    return {c: float((label.classes == c).mean()) for c in CellClass}
