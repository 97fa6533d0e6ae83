"""Grid geometry: polar and Cartesian specs, rasterization, resampling.

Conventions used throughout the package:

* Vehicle frame: x forward, y left, yaw counter-clockwise in degrees.
* A sensor's polar field of view spans azimuth
  [-0.5 * alpha_a * a_bins, +0.5 * alpha_a * a_bins) degrees around its
  boresight and range [0, alpha_r * r_bins) meters.  Azimuth bin ``a``
  covers [lo + a * alpha_a, lo + (a + 1) * alpha_a); a detection exactly
  on the upper FOV edge is dropped.
* Mass planes are stacked float64 arrays of shape (A, R, 3) respectively
  (W, H, 3) in (b_F, b_O, b_FO) order.
* Resampling in both directions is nearest-bin: the output cell samples
  the input bin containing its center, which moves Dempster masses
  without blending them across class boundaries.  Output cells whose
  centers fall outside the input coverage become vacuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AggregationBudgetError

# Average passenger-vehicle length; upper bound for the tolerable
# spatial error introduced by multi-frame aggregation of moving objects.
MAX_AGGREGATION_ERROR_M = 4.5


def rot2(yaw_deg: float) -> np.ndarray:
    y = math.radians(yaw_deg)
    c, s = math.cos(y), math.sin(y)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2d:
    """2D rigid pose (x, y in meters, yaw counter-clockwise in degrees).

    Grids are bird's-eye-view: z offsets and pitch/roll of real mounts
    are deliberately ignored.
    """

    x: float = 0.0
    y: float = 0.0
    yaw_deg: float = 0.0

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map local-frame points (..., 2) into the parent frame."""
        points = np.asarray(points, dtype=float)
        return points @ rot2(self.yaw_deg).T + np.array([self.x, self.y])

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        """Map parent-frame points (..., 2) into the local frame."""
        points = np.asarray(points, dtype=float)
        return (points - np.array([self.x, self.y])) @ rot2(self.yaw_deg)

    def compose(self, inner: "Pose2d") -> "Pose2d":
        """Pose of ``inner`` (given in this frame) in this pose's parent."""
        t = self.transform(np.array([inner.x, inner.y]))
        return Pose2d(float(t[0]), float(t[1]), self.yaw_deg + inner.yaw_deg)

    def inverse(self) -> "Pose2d":
        t = -rot2(-self.yaw_deg) @ np.array([self.x, self.y])
        return Pose2d(float(t[0]), float(t[1]), -self.yaw_deg)


# A sensor mounting pose is just a rigid 2D pose in the vehicle frame.
SensorPose = Pose2d


@dataclass(frozen=True)
class PolarGridSpec:
    """Azimuth x range raster covering one sensor's field of view."""

    a_bins: int
    r_bins: int
    alpha_a_deg: float
    alpha_r_m: float

    def __post_init__(self) -> None:
        if self.a_bins <= 0 or self.r_bins <= 0:
            raise ValueError("bin counts must be positive")
        if self.alpha_a_deg <= 0 or self.alpha_r_m <= 0:
            raise ValueError("bin sizes must be positive")
        if self.a_bins * self.alpha_a_deg > 360.0 + 1e-9:
            raise ValueError("azimuth coverage exceeds 360 degrees")

    @property
    def fov_deg(self) -> float:
        return self.a_bins * self.alpha_a_deg

    @property
    def azimuth_lo_deg(self) -> float:
        return -0.5 * self.fov_deg

    @property
    def max_range_m(self) -> float:
        return self.r_bins * self.alpha_r_m

    def azimuth_centers_deg(self) -> np.ndarray:
        return self.azimuth_lo_deg + (np.arange(self.a_bins) + 0.5) * self.alpha_a_deg

    def range_centers_m(self) -> np.ndarray:
        return (np.arange(self.r_bins) + 0.5) * self.alpha_r_m

    def bin_of(self, range_m: np.ndarray, azimuth_deg: np.ndarray):
        """Bin indices and validity mask for (range, azimuth) arrays.

        The upper FOV edge is exclusive in both axes; the azimuth check
        is done on the symmetric edge values so that a detection exactly
        on the edge is dropped regardless of rounding in the bin width.
        """
        range_m = np.asarray(range_m, dtype=float)
        azimuth_deg = np.asarray(azimuth_deg, dtype=float)
        lo = self.azimuth_lo_deg
        a = np.floor((azimuth_deg - lo) / self.alpha_a_deg)
        r = np.floor(range_m / self.alpha_r_m)
        ok = (azimuth_deg >= lo) & (azimuth_deg < -lo) & (r >= 0) & (r < self.r_bins)
        a = np.clip(a, 0, self.a_bins - 1)
        r = np.clip(r, 0, self.r_bins - 1)
        return a.astype(int), r.astype(int), ok


# Grid geometry of the hand-crafted baseline.
GEOMETRIC_ISM_SPEC = PolarGridSpec(108, 200, 1.0, 0.5)
# Finer geometry used for learned measurement grids and labels.
DEEP_ISM_SPEC = PolarGridSpec(300, 350, 0.36, 0.2)


@dataclass(frozen=True)
class CartesianGridSpec:
    """Vehicle-anchored BEV raster; ``origin`` is the pose of the grid
    center in the frame the grid is expressed in."""

    w_cells: int
    h_cells: int
    alpha_x_m: float
    alpha_y_m: float
    origin: Pose2d = field(default_factory=Pose2d)

    def __post_init__(self) -> None:
        if self.w_cells <= 0 or self.h_cells <= 0:
            raise ValueError("cell counts must be positive")
        if self.alpha_x_m <= 0 or self.alpha_y_m <= 0:
            raise ValueError("cell sizes must be positive")

    def cell_centers(self) -> np.ndarray:
        """(W, H, 2) cell centers in the reference frame."""
        xs = (np.arange(self.w_cells) - (self.w_cells - 1) / 2) * self.alpha_x_m
        ys = (np.arange(self.h_cells) - (self.h_cells - 1) / 2) * self.alpha_y_m
        local = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        return self.origin.transform(local)

    def cell_of(self, points: np.ndarray):
        """Cell indices and validity mask for reference-frame points (..., 2)."""
        local = self.origin.inverse_transform(points)
        ix = np.floor(local[..., 0] / self.alpha_x_m + self.w_cells / 2)
        iy = np.floor(local[..., 1] / self.alpha_y_m + self.h_cells / 2)
        ok = (ix >= 0) & (ix < self.w_cells) & (iy >= 0) & (iy < self.h_cells)
        return ix.astype(int), iy.astype(int), ok

    def same_geometry(self, other: "CartesianGridSpec") -> bool:
        return (
            self.w_cells == other.w_cells
            and self.h_cells == other.h_cells
            and self.alpha_x_m == other.alpha_x_m
            and self.alpha_y_m == other.alpha_y_m
            and self.origin == other.origin
        )


CARTESIAN_SPEC = CartesianGridSpec(700, 700, 0.2, 0.2)


@dataclass(frozen=True)
class Detection:
    """One radar return in its sensor's frame."""

    range_m: float
    azimuth_deg: float
    doppler_mps: float  # raw radial velocity, positive = receding
    rcs_dbsm: float
    t_s: float
    sensor_id: str


@dataclass(frozen=True)
class EgoMotion:
    v_mps: float
    yaw_rate_dps: float
    t_s: float = 0.0


@dataclass(frozen=True)
class AggregationPolicy:
    """Multi-frame aggregation budget.

    Aggregating n frames at update period alpha_t against objects moving
    up to v_max smears a moving object over ``delta_l_m`` meters; the
    budget caps that at one average vehicle length.
    """

    n: int
    alpha_t_s: float
    v_max_mps: float

    @property
    def delta_l_m(self) -> float:
        return self.v_max_mps * self.n * self.alpha_t_s

    def validate(self) -> None:
        if self.delta_l_m > MAX_AGGREGATION_ERROR_M:
            raise AggregationBudgetError(
                f"aggregation error budget exceeded: delta_L = {self.delta_l_m:.2f} m "
                f"> {MAX_AGGREGATION_ERROR_M} m"
            )


@dataclass
class PolarGrid:
    """Evidential polar grid with a radial-velocity channel.

    ``masses`` has shape (A, R, 3); ``vr`` holds the absolute radial
    velocity where ``vr_valid`` is set and is meaningless elsewhere.
    """

    spec: PolarGridSpec
    masses: np.ndarray
    vr: np.ndarray
    vr_valid: np.ndarray

    @staticmethod
    def vacuous(spec: PolarGridSpec) -> "PolarGrid":
        masses = np.zeros((spec.a_bins, spec.r_bins, 3))
        masses[..., 2] = 1.0
        return PolarGrid(
            spec,
            masses,
            np.zeros((spec.a_bins, spec.r_bins)),
            np.zeros((spec.a_bins, spec.r_bins), dtype=bool),
        )

    def copy(self) -> "PolarGrid":
        return PolarGrid(
            self.spec, self.masses.copy(), self.vr.copy(), self.vr_valid.copy()
        )

    def validate(self, tol: float = 1e-9) -> None:
        if self.masses.shape != (self.spec.a_bins, self.spec.r_bins, 3):
            raise ValueError("mass plane shape does not match spec")
        if np.abs(self.masses.sum(axis=-1) - 1.0).max() > tol:
            raise ValueError("cell masses must sum to 1")
        if self.masses.min() < -tol or self.masses.max() > 1.0 + tol:
            raise ValueError("cell masses must lie in [0, 1]")
        if not np.isfinite(self.vr[self.vr_valid]).all():
            raise ValueError("vr must be finite where valid")


@dataclass
class CartesianGrid:
    """Evidential Cartesian grid with velocity channels.

    ``ray`` optionally carries the unit sensor-to-detection direction per
    cell (needed to interpret ``vr`` as a radial constraint); it is a
    runtime-only channel and is not serialized.
    """

    spec: CartesianGridSpec
    masses: np.ndarray
    vr: np.ndarray
    vr_valid: np.ndarray
    ray: np.ndarray | None = None

    @staticmethod
    def vacuous(spec: CartesianGridSpec) -> "CartesianGrid":
        masses = np.zeros((spec.w_cells, spec.h_cells, 3))
        masses[..., 2] = 1.0
        return CartesianGrid(
            spec,
            masses,
            np.zeros((spec.w_cells, spec.h_cells)),
            np.zeros((spec.w_cells, spec.h_cells), dtype=bool),
        )

    def copy(self) -> "CartesianGrid":
        return CartesianGrid(
            self.spec,
            self.masses.copy(),
            self.vr.copy(),
            self.vr_valid.copy(),
            None if self.ray is None else self.ray.copy(),
        )


def rasterize(detections: Sequence[Detection], spec: PolarGridSpec) -> np.ndarray:
    """Discretize detections into a binary (A, R) image.

    A bin is 1 iff at least one detection falls inside it; detections
    outside the field of view are silently dropped.
    """
    image = np.zeros((spec.a_bins, spec.r_bins), dtype=np.uint8)
    if not detections:
        return image
    rng = np.array([d.range_m for d in detections])
    az = np.array([d.azimuth_deg for d in detections])
    a, r, ok = spec.bin_of(rng, az)
    image[a[ok], r[ok]] = 1
    return image


def polar_to_cartesian(
    grid: PolarGrid, pose: Pose2d, cspec: CartesianGridSpec
) -> CartesianGrid:
    """Resample a sensor polar grid onto a Cartesian raster.

    ``pose`` is the sensor pose in the Cartesian grid's reference frame.
    Cells outside the field of view or beyond max range become vacuous.
    """
    centers = cspec.cell_centers()
    local = pose.inverse_transform(centers)
    r = np.hypot(local[..., 0], local[..., 1])
    az = np.degrees(np.arctan2(local[..., 1], local[..., 0]))
    a_idx, r_idx, ok = grid.spec.bin_of(r, az)

    out = CartesianGrid.vacuous(cspec)
    a_ok, r_ok = a_idx[ok], r_idx[ok]
    out.masses[ok] = grid.masses[a_ok, r_ok]
    out.vr[ok] = grid.vr[a_ok, r_ok]
    out.vr_valid[ok] = grid.vr_valid[a_ok, r_ok]
    # Ray direction per cell: unit vector from the sensor through the cell,
    # expressed in the grid frame.  Defined wherever the range is nonzero.
    with np.errstate(invalid="ignore", divide="ignore"):
        ray_local = local / r[..., None]
    ray = ray_local @ rot2(pose.yaw_deg).T
    ray[r == 0] = 0.0
    out.ray = ray
    return out


def cartesian_to_polar(
    cart: CartesianGrid, pose: Pose2d, spec: PolarGridSpec
) -> PolarGrid:
    """Resample a Cartesian grid into one sensor's polar raster.

    Bins whose centers fall outside the Cartesian grid become vacuous.
    """
    az = np.radians(spec.azimuth_centers_deg())
    r = spec.range_centers_m()
    local = np.stack(
        [
            np.cos(az)[:, None] * r[None, :],
            np.sin(az)[:, None] * r[None, :],
        ],
        axis=-1,
    )
    points = pose.transform(local)
    ix, iy, ok = cart.spec.cell_of(points)

    out = PolarGrid.vacuous(spec)
    out.masses[ok] = cart.masses[ix[ok], iy[ok]]
    out.vr[ok] = cart.vr[ix[ok], iy[ok]]
    out.vr_valid[ok] = cart.vr_valid[ix[ok], iy[ok]]
    return out


def sensor_velocity_vehicle(ego: EgoMotion, pose: Pose2d) -> np.ndarray:
    """Instantaneous sensor velocity in the vehicle frame.

    Forward speed plus the lever-arm term from the yaw rate acting on
    the mounting offset.
    """
    w = math.radians(ego.yaw_rate_dps)
    return np.array([ego.v_mps - w * pose.y, w * pose.x])


def compensate_doppler(d: Detection, ego: EgoMotion, pose: Pose2d) -> float:
    """Absolute radial velocity of a detection (ego motion removed).

    Adds back the projection of the sensor's own velocity onto the ray
    toward the detection; static world points come out at zero.
    """
    ray_sensor = np.array(
        [math.cos(math.radians(d.azimuth_deg)), math.sin(math.radians(d.azimuth_deg))]
    )
    ray_vehicle = rot2(pose.yaw_deg) @ ray_sensor
    return d.doppler_mps + float(sensor_velocity_vehicle(ego, pose) @ ray_vehicle)


def aggregate_frames(
    frames: Sequence[tuple[Sequence[Detection], Pose2d]],
    policy: AggregationPolicy,
    sensor_pose: Pose2d = Pose2d(),
) -> list[Detection]:
    """Merge consecutive detection frames into the newest sensor frame.

    ``frames`` are (detections, ego world pose) tuples in time order,
    exactly ``policy.n`` of them.  Older detections are rigidly moved
    using the relative ego poses; Doppler and RCS are carried through
    unchanged.  Raises :class:`AggregationBudgetError` when the policy's
    spatial error bound is violated.
    """
    policy.validate()
    if len(frames) != policy.n:
        raise ValueError(f"expected {policy.n} frames, got {len(frames)}")

    newest_sensor = frames[-1][1].compose(sensor_pose)
    out: list[Detection] = []
    for detections, ego_pose in frames[:-1]:
        rel = newest_sensor.inverse().compose(ego_pose.compose(sensor_pose))
        for d in detections:
            az = math.radians(d.azimuth_deg)
            p = rel.transform(np.array([d.range_m * math.cos(az), d.range_m * math.sin(az)]))
            out.append(
                replace(
                    d,
                    range_m=float(np.hypot(p[0], p[1])),
                    azimuth_deg=math.degrees(math.atan2(p[1], p[0])),
                )
            )
    out.extend(frames[-1][0])
    return out
