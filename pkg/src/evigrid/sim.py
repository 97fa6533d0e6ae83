"""Synthetic highway scenes and sensor models.

A scenario is a flat 2D world: guardrail polylines, box-shaped vehicles
on straight constant-velocity tracks, an ego vehicle on a constant-turn
trajectory, and a set of radar mounts plus one roof LiDAR.  The
simulator produces radar detections (with Doppler, RCS and Poisson
clutter), LiDAR scans and ground-truth occupancy, all deterministic
functions of (scenario, config, seed, time).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import ScenarioError, UnknownSensorError
from .grids import (
    CartesianGridSpec,
    Detection,
    EgoMotion,
    PolarGridSpec,
    Pose2d,
    rot2,
    sensor_velocity_vehicle,
)
from .labels import LabelImage, LidarScan, OrientedBox
from .evidential import CellClass

LIDAR_MAX_RANGE_M = 120.0
LIDAR_Z_M = 1.0
CLUTTER_DOPPLER_SPAN_MPS = 15.0
# Surface sampling pitch and the reference length normalising the
# per-object detection rate (one "target" worth of surface).
_SAMPLE_PITCH_M = 0.25
_REF_LENGTH_M = 4.5

# Independent seed streams per consumer.
_STREAM_RADAR = 1
_STREAM_CLUTTER = 2


@dataclass(frozen=True)
class RadarMount:
    sensor_id: str
    pose: Pose2d
    fov_deg: float
    max_range_m: float
    update_period_s: float


@dataclass(frozen=True)
class VehicleTrack:
    box: OrientedBox
    velocity: np.ndarray  # world-frame (vx, vy) m/s

    def box_at(self, t: float) -> OrientedBox:
        return replace(
            self.box,
            cx=self.box.cx + self.velocity[0] * t,
            cy=self.box.cy + self.velocity[1] * t,
        )


@dataclass(frozen=True)
class EgoState:
    pose: Pose2d
    motion: EgoMotion


@dataclass(frozen=True)
class Scenario:
    guardrails: tuple[np.ndarray, ...]  # each (N, 2) polyline, world frame
    vehicles: tuple[VehicleTrack, ...]
    ego_start: Pose2d
    ego_v_mps: float
    ego_yaw_rate_dps: float
    sensors: tuple[RadarMount, ...]
    duration_s: float
    seed: int

    def sensor(self, sensor_id: str) -> RadarMount:
        for s in self.sensors:
            if s.sensor_id == sensor_id:
                return s
        raise UnknownSensorError(f"unknown sensor id {sensor_id!r}")

    def ego_state(self, t: float) -> EgoState:
        """Constant-turn-rate ego trajectory, evaluated analytically."""
        w = math.radians(self.ego_yaw_rate_dps)
        yaw0 = math.radians(self.ego_start.yaw_deg)
        v = self.ego_v_mps
        if abs(w) < 1e-12:
            x = self.ego_start.x + v * t * math.cos(yaw0)
            y = self.ego_start.y + v * t * math.sin(yaw0)
            yaw = self.ego_start.yaw_deg
        else:
            x = self.ego_start.x + v / w * (math.sin(yaw0 + w * t) - math.sin(yaw0))
            y = self.ego_start.y - v / w * (math.cos(yaw0 + w * t) - math.cos(yaw0))
            yaw = self.ego_start.yaw_deg + self.ego_yaw_rate_dps * t
        return EgoState(
            Pose2d(x, y, yaw), EgoMotion(v, self.ego_yaw_rate_dps, t)
        )

    def segments_at(self, t: float) -> np.ndarray:
        """All surface segments in the world frame, shape (N, 2, 2)."""
        segs = []
        for rail in self.guardrails:
            segs.append(np.stack([rail[:-1], rail[1:]], axis=1))
        for veh in self.vehicles:
            segs.append(_box_edges(veh.box_at(t)))
        if not segs:
            return np.zeros((0, 2, 2))
        return np.concatenate(segs, axis=0)


@dataclass(frozen=True)
class SimConfig:
    radar_range_noise_m: float = 0.15
    radar_az_noise_deg: float = 0.3
    radar_doppler_noise_mps: float = 0.3
    detections_per_target_mean: float = 6.0
    detection_dropout: float = 0.1
    clutter_rate: float = 2.0
    rcs_target_range_dbsm: tuple[float, float] = (-5.0, 20.0)
    rcs_clutter_range_dbsm: tuple[float, float] = (-30.0, -10.0)
    lidar_az_res_deg: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.detection_dropout <= 1.0:
            raise ScenarioError("detection_dropout must be a probability")
        if self.clutter_rate < 0:
            raise ScenarioError("clutter_rate must be non-negative")


def _box_edges(box: OrientedBox) -> np.ndarray:
    h_l, h_w = box.length / 2, box.width / 2
    corners = np.array([[h_l, h_w], [-h_l, h_w], [-h_l, -h_w], [h_l, -h_w]])
    world = corners @ rot2(box.yaw_deg).T + [box.cx, box.cy]
    return np.stack([world, np.roll(world, -1, axis=0)], axis=1)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def first_hit_distances(
    origin: np.ndarray, dirs: np.ndarray, segments: np.ndarray
) -> np.ndarray:
    """Distance to the first segment hit per unit-direction ray (inf if none)."""
    if len(segments) == 0:
        return np.full(len(dirs), np.inf)
    p = segments[None, :, 0]
    pq = segments[None, :, 1] - p
    d = dirs[:, None]
    po = p - origin
    denom = _cross(d, pq)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(po, pq) / denom
        u = _cross(po, d) / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    return t.min(axis=1)


def _rng(scenario: Scenario, stream: int, sensor_index: int, t: float):
    # Frame key at millisecond resolution keeps calls at the same time
    # bit-reproducible regardless of call order.
    key = (stream, sensor_index, int(round(t * 1000)))
    return np.random.default_rng(np.random.SeedSequence(scenario.seed, spawn_key=key))


def _surface_samples(scenario: Scenario, t: float):
    """Candidate surface points: (points (N,2), velocities (N,2))."""
    pts, vels = [], []
    for rail in scenario.guardrails:
        deltas = np.diff(rail, axis=0)
        for start, delta in zip(rail[:-1], deltas):
            length = float(np.hypot(*delta))
            n = max(int(length / _SAMPLE_PITCH_M), 1)
            s = (np.arange(n) + 0.5) / n
            pts.append(start + s[:, None] * delta)
            vels.append(np.zeros((n, 2)))
    for veh in scenario.vehicles:
        edges = _box_edges(veh.box_at(t))
        for start, end in edges:
            delta = end - start
            length = float(np.hypot(*delta))
            n = max(int(length / _SAMPLE_PITCH_M), 1)
            s = (np.arange(n) + 0.5) / n
            pts.append(start + s[:, None] * delta)
            vels.append(np.tile(veh.velocity, (n, 1)))
    if not pts:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return np.concatenate(pts), np.concatenate(vels)


def simulate_radar(
    scenario: Scenario, cfg: SimConfig, sensor_id: str, t: float
) -> list[Detection]:
    """One radar frame: visible surface points plus Poisson clutter.

    Surface detections are Poisson-thinned samples of the visible object
    boundaries (expected count proportional to visible boundary length,
    ``detections_per_target_mean`` per 4.5 m), with Gaussian range,
    azimuth and Doppler noise.  Raw Doppler is the relative radial
    velocity (positive receding).  Deterministic given the scenario seed.
    """
    if not 0.0 <= t <= scenario.duration_s:
        raise ScenarioError(f"t={t} outside scenario duration")
    mount = scenario.sensor(sensor_id)
    sensor_index = [s.sensor_id for s in scenario.sensors].index(sensor_id)
    ego = scenario.ego_state(t)
    sensor_pose = ego.pose.compose(mount.pose)
    origin = np.array([sensor_pose.x, sensor_pose.y])
    segments = scenario.segments_at(t)

    v_sensor_world = rot2(ego.pose.yaw_deg) @ sensor_velocity_vehicle(
        ego.motion, mount.pose
    )

    rng = _rng(scenario, _STREAM_RADAR, sensor_index, t)
    pts, vels = _surface_samples(scenario, t)
    detections: list[Detection] = []
    if len(pts):
        rel = pts - origin
        r = np.hypot(rel[:, 0], rel[:, 1])
        az = np.degrees(np.arctan2(rel[:, 1], rel[:, 0])) - sensor_pose.yaw_deg
        az = (az + 180.0) % 360.0 - 180.0
        in_fov = (r > 0.5) & (r < mount.max_range_m) & (np.abs(az) < mount.fov_deg / 2)
        idx = np.flatnonzero(in_fov)
        if len(idx):
            # Occlusion: keep samples whose ray reaches them first.
            dirs = rel[idx] / r[idx, None]
            hits = first_hit_distances(origin, dirs, segments)
            idx = idx[r[idx] <= hits + 0.05]
        expected = cfg.detections_per_target_mean * len(idx) * _SAMPLE_PITCH_M / _REF_LENGTH_M
        count = min(rng.poisson(expected), len(idx)) if len(idx) else 0
        chosen = rng.choice(idx, size=count, replace=False) if count else []
        for i in chosen:
            if rng.uniform() < cfg.detection_dropout:
                continue
            ray = (pts[i] - origin) / r[i]
            doppler = float((vels[i] - v_sensor_world) @ ray)
            d_range = r[i] + rng.normal(0.0, cfg.radar_range_noise_m)
            d_az = az[i] + rng.normal(0.0, cfg.radar_az_noise_deg)
            d_doppler = doppler + rng.normal(0.0, cfg.radar_doppler_noise_mps)
            if not (0.0 < d_range < mount.max_range_m and abs(d_az) < mount.fov_deg / 2):
                continue
            detections.append(
                Detection(
                    float(d_range),
                    float(d_az),
                    float(d_doppler),
                    float(rng.uniform(*cfg.rcs_target_range_dbsm)),
                    t,
                    sensor_id,
                )
            )

    clutter_rng = _rng(scenario, _STREAM_CLUTTER, sensor_index, t)
    for _ in range(clutter_rng.poisson(cfg.clutter_rate)):
        detections.append(
            Detection(
                float(clutter_rng.uniform(1.0, mount.max_range_m)),
                float(clutter_rng.uniform(-mount.fov_deg / 2, mount.fov_deg / 2)),
                float(clutter_rng.uniform(-CLUTTER_DOPPLER_SPAN_MPS, CLUTTER_DOPPLER_SPAN_MPS)),
                float(clutter_rng.uniform(*cfg.rcs_clutter_range_dbsm)),
                t,
                sensor_id,
            )
        )
    return detections


def simulate_lidar(scenario: Scenario, cfg: SimConfig, t: float) -> LidarScan:
    """360-degree first-hit ray casting from the vehicle origin.

    Points come back in the vehicle frame at a fixed height inside the
    label generator's height band.
    """
    if not 0.0 <= t <= scenario.duration_s:
        raise ScenarioError(f"t={t} outside scenario duration")
    ego = scenario.ego_state(t)
    origin = np.array([ego.pose.x, ego.pose.y])
    n = int(round(360.0 / cfg.lidar_az_res_deg))
    theta = np.radians(ego.pose.yaw_deg) + np.arange(n) * 2 * np.pi / n
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    dist = first_hit_distances(origin, dirs, scenario.segments_at(t))
    hit = np.isfinite(dist) & (dist <= LIDAR_MAX_RANGE_M)
    world = origin + dirs[hit] * dist[hit, None]
    local = ego.pose.inverse_transform(world)
    points = np.column_stack([local, np.full(len(local), LIDAR_Z_M)])
    return LidarScan(points, t)


def ground_truth(
    scenario: Scenario,
    t: float,
    spec: PolarGridSpec | CartesianGridSpec,
    sensor_id: str | None = None,
    los_res_deg: float = 0.1,
) -> tuple[LabelImage, np.ndarray]:
    """Oracle occupancy and per-cell true velocity for metrics.

    Cells inside a vehicle box or within half a cell of a guardrail are
    occupied (carrying the object velocity, world frame); cells with an
    unobstructed line of sight from the viewer up to the first
    obstruction are free; the rest is unknown.  For a polar spec the
    viewer is the named sensor, for a Cartesian spec the named sensor or
    the vehicle origin with all-around visibility.
    """
    ego = scenario.ego_state(t)
    if isinstance(spec, PolarGridSpec):
        if sensor_id is None:
            raise UnknownSensorError("polar ground truth needs a sensor id")
        mount = scenario.sensor(sensor_id)
        viewer = ego.pose.compose(mount.pose)
        az = np.radians(spec.azimuth_centers_deg() + viewer.yaw_deg)
        r = spec.range_centers_m()
        centers = np.array([viewer.x, viewer.y]) + np.stack(
            [np.cos(az)[:, None] * r, np.sin(az)[:, None] * r], axis=-1
        )
        cell_r = np.broadcast_to(r[None, :], centers.shape[:2])
        half_cell = spec.alpha_r_m / 2
        in_coverage = np.ones(centers.shape[:2], dtype=bool)
    else:
        viewer = ego.pose.compose(scenario.sensor(sensor_id).pose) if sensor_id else ego.pose
        centers = spec.cell_centers()
        rel = centers - [viewer.x, viewer.y]
        cell_r = np.hypot(rel[..., 0], rel[..., 1])
        half_cell = max(spec.alpha_x_m, spec.alpha_y_m) / 2
        if sensor_id is not None:
            mount = scenario.sensor(sensor_id)
            cell_az = np.degrees(np.arctan2(rel[..., 1], rel[..., 0])) - viewer.yaw_deg
            cell_az = (cell_az + 180.0) % 360.0 - 180.0
            in_coverage = (np.abs(cell_az) < mount.fov_deg / 2) & (
                cell_r < mount.max_range_m
            )
        else:
            in_coverage = np.ones(centers.shape[:2], dtype=bool)

    segments = scenario.segments_at(t)
    classes = np.full(centers.shape[:2], CellClass.UNKNOWN, dtype=np.uint8)
    velocity = np.zeros(centers.shape[:2] + (2,))

    # Free space by line of sight: first obstruction per fine angular sector.
    n_sectors = int(round(360.0 / los_res_deg))
    theta = np.arange(n_sectors) * 2 * np.pi / n_sectors
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    first = first_hit_distances(np.array([viewer.x, viewer.y]), dirs, segments)
    rel = centers - [viewer.x, viewer.y]
    sector = (
        np.floor(np.degrees(np.arctan2(rel[..., 1], rel[..., 0])) / los_res_deg).astype(int)
        % n_sectors
    )
    free = in_coverage & (cell_r < first[sector]) & (cell_r > 0)
    classes[free] = CellClass.FREE

    # Occupied geometry wins over visibility.
    occupied = np.zeros(centers.shape[:2], dtype=bool)
    for rail in scenario.guardrails:
        near = _near_polyline(centers, rail, half_cell)
        occupied |= near
    for veh in scenario.vehicles:
        inside = veh.box_at(t).contains(centers)
        velocity[inside] = veh.velocity
        occupied |= inside
    occupied &= in_coverage
    classes[occupied] = CellClass.OCCUPIED
    return LabelImage(spec, classes), velocity


def _near_polyline(points: np.ndarray, polyline: np.ndarray, radius: float) -> np.ndarray:
    """Mask of points within ``radius`` of any polyline segment."""
    near = np.zeros(points.shape[:-1], dtype=bool)
    flat = points.reshape(-1, 2)
    acc = np.zeros(len(flat), dtype=bool)
    for p, q in zip(polyline[:-1], polyline[1:]):
        pq = q - p
        denom = float(pq @ pq)
        if denom < 1e-18:
            d = np.hypot(*(flat - p).T)
        else:
            u = np.clip((flat - p) @ pq / denom, 0.0, 1.0)
            closest = p + u[:, None] * pq
            d = np.hypot(*(flat - closest).T)
        acc |= d <= radius
    near |= acc.reshape(points.shape[:-1])
    return near


# --- scenario file ------------------------------------------------------------


def load_scenario(path) -> tuple[Scenario, SimConfig]:
    """Parse a scenario description file (YAML)."""
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ScenarioError(f"cannot parse scenario file: {e}") from e
    if not isinstance(doc, dict):
        raise ScenarioError("scenario file must hold a mapping")
    try:
        ego = doc.get("ego", {})
        sensors = tuple(
            RadarMount(
                str(s["id"]),
                Pose2d(*[float(v) for v in s["pose"]]),
                float(s.get("fov_deg", 108.0)),
                float(s.get("max_range_m", 64.0)),
                float(s.get("update_period_s", 0.05)),
            )
            for s in doc.get("sensors", [])
        )
        vehicles = tuple(
            VehicleTrack(
                OrientedBox(*[float(v) for v in veh["box"]]),
                np.asarray(veh.get("velocity", [0.0, 0.0]), dtype=float),
            )
            for veh in doc.get("vehicles", [])
        )
        guardrails = tuple(
            np.asarray(rail, dtype=float) for rail in doc.get("guardrails", [])
        )
        for rail in guardrails:
            if rail.ndim != 2 or rail.shape[1] != 2 or len(rail) < 2:
                raise ScenarioError("guardrail polylines need >= 2 [x, y] points")
        scenario = Scenario(
            guardrails=guardrails,
            vehicles=vehicles,
            ego_start=Pose2d(*[float(v) for v in ego.get("start", [0, 0, 0])]),
            ego_v_mps=float(ego.get("v_mps", 0.0)),
            ego_yaw_rate_dps=float(ego.get("yaw_rate_dps", 0.0)),
            sensors=sensors,
            duration_s=float(doc.get("duration_s", 1.0)),
            seed=int(doc.get("seed", 0)),
        )
        cfg = SimConfig(**{k: _cfg_value(k, v) for k, v in doc.get("sim", {}).items()})
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario file: {e}") from e
    if not scenario.sensors:
        raise ScenarioError("scenario declares no sensors")
    if scenario.duration_s <= 0:
        raise ScenarioError("duration must be positive")
    return scenario, cfg


def _cfg_value(key: str, value):
    if key.startswith("rcs_"):
        return tuple(float(v) for v in value)
    return float(value)


def ego_states(scenario: Scenario, times: Sequence[float]) -> list[EgoState]:
    return [scenario.ego_state(t) for t in times]


def write_ego_jsonl(path, states: Sequence[EgoState]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in states:
            f.write(
                json.dumps(
                    {
                        "t_s": s.motion.t_s,
                        "x_m": s.pose.x,
                        "y_m": s.pose.y,
                        "yaw_deg": s.pose.yaw_deg,
                        "v_mps": s.motion.v_mps,
                        "yaw_rate_dps": s.motion.yaw_rate_dps,
                    }
                )
                + "\n"
            )


def read_ego_jsonl(path) -> list[EgoState]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(
                EgoState(
                    Pose2d(row["x_m"], row["y_m"], row["yaw_deg"]),
                    EgoMotion(row["v_mps"], row["yaw_rate_dps"], row["t_s"]),
                )
            )
    return out
