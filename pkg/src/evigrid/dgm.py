"""Particle-based dynamic grid map on the {F, D, S} frame.

The map is a stateful accumulator over Cartesian measurement grids.
Cell masses live on the six admissible hypotheses; a particle population
carries the motion hypothesis.  The loop per frame is predict + update:

predict
    Particles are advected by their velocity plus Gaussian process
    noise; particles leaving the grid die.  Cell masses decay toward
    full ignorance by the persistence factor, except the dynamic mass,
    which is rebuilt from the particle weight arriving in each cell, so
    dynamic evidence moves with the particles.

update
    The measurement's occupancy mass is split into dynamic vs static by
    comparing the cell's speed evidence (injected radial velocity if
    present, otherwise the particle estimate) against a threshold; with
    no speed evidence at all it stays on the undecided {D, S}.  The
    split measurement is combined with the predicted masses by
    Dempster's rule.  Particle weights are rescaled by the measured
    occupancy support in their cell, then the population is rebuilt per
    cell by stratified resampling, with a newborn fraction whose
    velocities are seeded from the injected radial velocity when
    available and from a broad zero-mean prior otherwise.

Particles jointly represent the dynamic mass and a share of the
undecided {D, S} mass; at the next predict that share turns into moving
dynamic evidence unless the measurements keep refuting it.  This is the
mechanism that produces false dynamic cells on guardrails when Doppler
injection is disabled, and suppresses them when it is enabled.

None of the numeric defaults below comes from a published reference;
they are artifact tuning, exposed through :class:`DgmConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GridGeometryError
from .evidential import DgmCell, combine_dgm_planes, dgm_to_measurement_planes
from .grids import CartesianGrid, CartesianGridSpec, Detection, Pose2d

# Hypothesis plane indices.
_F, _D, _S, _FD, _DS, _FDS = range(6)


@dataclass(frozen=True)
class DgmConfig:
    particles_per_cell_max: int = 16
    birth_fraction: float = 0.1
    persistence: float = 0.98
    process_noise_pos_m: float = 0.1
    process_noise_vel_mps: float = 0.5
    static_speed_threshold_mps: float = 1.0
    doppler_inject_threshold: float = 0.196
    # Share of undecided {D, S} mass carried by the particle population.
    undecided_weight: float = 0.5
    # Additive floor so unsupported particles decay instead of dying at once.
    measurement_support_floor: float = 0.1
    # Newborn velocity model: broad prior without speed evidence, tight
    # radial seed (plus tangential spread) around an injected velocity.
    newborn_speed_prior_mps: float = 10.0
    newborn_radial_noise_mps: float = 0.5
    newborn_tangential_noise_mps: float = 2.0
    # Minimum per-cell particle weight for a usable speed estimate.
    min_cell_weight: float = 1e-3

    def __post_init__(self) -> None:
        if not 0.0 <= self.birth_fraction <= 1.0:
            raise ValueError("birth_fraction must be in [0, 1]")
        if not 0.0 < self.persistence <= 1.0:
            raise ValueError("persistence must be in (0, 1]")
        if self.particles_per_cell_max < 1:
            raise ValueError("particles_per_cell_max must be >= 1")
        if self.doppler_inject_threshold < 0:
            raise ValueError("doppler_inject_threshold must be >= 0")


class Dgm:
    """Dynamic grid map state; exactly one writer at a time."""

    def __init__(self, cspec: CartesianGridSpec, cfg: DgmConfig, seed: int = 0, t_s: float = 0.0):
        self.cspec = cspec
        self.cfg = cfg
        self.t_s = t_s
        shape = (cspec.w_cells, cspec.h_cells)
        self.masses = np.zeros(shape + (6,))
        self.masses[..., _FDS] = 1.0
        self.v_mean = np.zeros(shape + (2,))
        self.v_cov = np.zeros(shape + (2, 2))
        self.v_valid = np.zeros(shape, dtype=bool)
        self.pos = np.zeros((0, 2))
        self.vel = np.zeros((0, 2))
        self.weight = np.zeros(0)
        self.rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(77,)))

    @property
    def particle_count(self) -> int:
        return len(self.weight)

    def cell(self, ix: int, iy: int) -> DgmCell:
        m = self.masses[ix, iy]
        return DgmCell(
            *(float(v) for v in m),
            v_mean=self.v_mean[ix, iy].copy(),
            v_cov=self.v_cov[ix, iy].copy(),
            v_valid=bool(self.v_valid[ix, iy]),
        )

    def measurement_view(self) -> np.ndarray:
        """(W, H, 3) projection onto the {F, O} measurement frame."""
        return dgm_to_measurement_planes(self.masses)

    def _cell_indices(self):
        ix, iy, ok = self.cspec.cell_of(self.pos)
        return ix, iy, ok

    def _cell_weight_and_velocity(self):
        """Per-cell particle weight, mean velocity and covariance."""
        shape = (self.cspec.w_cells, self.cspec.h_cells)
        w_c = np.zeros(shape)
        v_sum = np.zeros(shape + (2,))
        if self.particle_count:
            ix, iy, ok = self._cell_indices()
            np.add.at(w_c, (ix[ok], iy[ok]), self.weight[ok])
            np.add.at(v_sum, (ix[ok], iy[ok]), self.weight[ok, None] * self.vel[ok])
        with np.errstate(invalid="ignore", divide="ignore"):
            v_mean = v_sum / w_c[..., None]
        v_mean[w_c <= 0] = 0.0
        return w_c, v_mean

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"Dgm({self.cspec.w_cells}x{self.cspec.h_cells}, "
            f"{self.particle_count} particles, t={self.t_s:.3f})"
        )


def predict(dgm: Dgm, dt: float, cfg: DgmConfig | None = None) -> Dgm:
    """Advance the map by ``dt`` seconds (in place)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = cfg or dgm.cfg
    p = cfg.persistence

    if dgm.particle_count:
        dgm.pos = dgm.pos + dgm.vel * dt
        if cfg.process_noise_pos_m > 0:
            dgm.pos += dgm.rng.normal(0.0, cfg.process_noise_pos_m, dgm.pos.shape)
        if cfg.process_noise_vel_mps > 0:
            dgm.vel = dgm.vel + dgm.rng.normal(
                0.0, cfg.process_noise_vel_mps, dgm.vel.shape
            )
        ix, iy, ok = dgm._cell_indices()
        dgm.pos, dgm.vel, dgm.weight = dgm.pos[ok], dgm.vel[ok], dgm.weight[ok] * p
        ix, iy = ix[ok], iy[ok]
    else:
        ix = iy = np.zeros(0, dtype=int)

    # Static-side masses decay in place; dynamic mass follows the
    # transported particle weight.
    masses = dgm.masses
    for plane in (_F, _S, _FD, _DS):
        masses[..., plane] *= p
    arrived = np.zeros(masses.shape[:2])
    if len(ix):
        np.add.at(arrived, (ix, iy), dgm.weight)
    headroom = 1.0 - (
        masses[..., _F] + masses[..., _S] + masses[..., _FD] + masses[..., _DS]
    )
    m_d = np.minimum(arrived, headroom)
    # Keep the per-cell particle weight consistent with the clipped mass.
    if len(ix):
        scale = np.ones_like(arrived)
        np.divide(m_d, arrived, out=scale, where=arrived > 0)
        dgm.weight = dgm.weight * scale[ix, iy]
    masses[..., _D] = m_d
    masses[..., _FDS] = np.clip(1.0 - masses[..., :5].sum(axis=-1), 0.0, 1.0)
    masses /= masses.sum(axis=-1, keepdims=True)

    dgm.t_s += dt
    return dgm


def update(
    dgm: Dgm, meas: CartesianGrid, cfg: DgmConfig | None = None, t_s: float | None = None
) -> Dgm:
    """Fuse one Cartesian measurement grid into the map (in place)."""
    cfg = cfg or dgm.cfg
    if not dgm.cspec.same_geometry(meas.spec):
        raise GridGeometryError("grid geometry mismatch")
    if t_s is not None:
        if t_s < dgm.t_s:
            raise ValueError("measurement is older than the map")
        dgm.t_s = t_s

    b_f = meas.masses[..., 0]
    b_o = meas.masses[..., 1]
    b_u = meas.masses[..., 2]

    # Split measured occupancy into dynamic/static/undecided.
    w_c, v_mean_c = dgm._cell_weight_and_velocity()
    particle_speed = np.hypot(v_mean_c[..., 0], v_mean_c[..., 1])
    speed = np.where(meas.vr_valid, np.abs(meas.vr), particle_speed)
    have_speed = meas.vr_valid | (w_c >= cfg.min_cell_weight)
    dynamic = have_speed & (speed >= cfg.static_speed_threshold_mps)
    static = have_speed & ~dynamic

    z = np.zeros_like(dgm.masses)
    z[..., _F] = b_f
    z[..., _D] = np.where(dynamic, b_o, 0.0)
    z[..., _S] = np.where(static, b_o, 0.0)
    z[..., _DS] = np.where(~have_speed, b_o, 0.0)
    z[..., _FDS] = b_u

    dgm.masses = combine_dgm_planes(dgm.masses, z)

    # Particle weights follow the measured occupancy support.
    if dgm.particle_count:
        ix, iy, _ = dgm._cell_indices()
        dgm.weight = dgm.weight * (cfg.measurement_support_floor + b_o[ix, iy])

    _resample_and_birth(dgm, meas, cfg)
    _refresh_velocity_stats(dgm)
    return dgm


def _resample_and_birth(dgm: Dgm, meas: CartesianGrid, cfg: DgmConfig) -> None:
    """Rebuild the per-cell particle population after a mass update."""
    support = dgm.masses[..., _D] + cfg.undecided_weight * dgm.masses[..., _DS]
    support = np.where(support > 1e-4, support, 0.0)
    target = np.minimum(
        np.ceil(support * cfg.particles_per_cell_max).astype(int),
        cfg.particles_per_cell_max,
    )
    cells = np.argwhere(target > 0)
    if len(cells) == 0:
        dgm.pos = np.zeros((0, 2))
        dgm.vel = np.zeros((0, 2))
        dgm.weight = np.zeros(0)
        return

    # Group survivors by cell.
    survivors: dict[tuple[int, int], np.ndarray] = {}
    if dgm.particle_count:
        ix, iy, ok = dgm._cell_indices()
        order = np.lexsort((iy, ix))
        ix, iy = ix[order], iy[order]
        keys = ix * dgm.cspec.h_cells + iy
        starts = np.flatnonzero(np.diff(keys, prepend=-1))
        for s, e in zip(starts, np.append(starts[1:], len(keys))):
            survivors[(int(ix[s]), int(iy[s]))] = order[s:e]

    b_o = meas.masses[..., 1]
    centers = dgm.cspec.cell_centers()
    rng = dgm.rng
    new_pos, new_vel, new_w = [], [], []
    for ix_c, iy_c in cells:
        n = int(target[ix_c, iy_c])
        key = (int(ix_c), int(iy_c))
        can_birth = b_o[ix_c, iy_c] > 0
        n_birth = int(round(cfg.birth_fraction * n)) if can_birth else 0
        idx = survivors.get(key)
        sw = dgm.weight[idx] if idx is not None else np.zeros(0)
        if idx is None or sw.sum() <= 0:
            if not can_birth:
                continue
            n_birth = n
        n_keep = n - n_birth

        cell_w = support[ix_c, iy_c] / n
        if n_keep > 0:
            picks = idx[_stratified_pick(sw, n_keep, rng)]
            new_pos.append(dgm.pos[picks])
            new_vel.append(dgm.vel[picks])
            new_w.append(np.full(n_keep, cell_w))
        if n_birth > 0:
            jitter = (rng.uniform(-0.5, 0.5, (n_birth, 2))) * [
                dgm.cspec.alpha_x_m,
                dgm.cspec.alpha_y_m,
            ]
            new_pos.append(centers[ix_c, iy_c] + jitter)
            new_vel.append(_newborn_velocities(meas, (ix_c, iy_c), n_birth, cfg, rng))
            new_w.append(np.full(n_birth, cell_w))

    if new_pos:
        dgm.pos = np.concatenate(new_pos)
        dgm.vel = np.concatenate(new_vel)
        dgm.weight = np.concatenate(new_w)
    else:
        dgm.pos = np.zeros((0, 2))
        dgm.vel = np.zeros((0, 2))
        dgm.weight = np.zeros(0)


def _newborn_velocities(meas, cell, n, cfg, rng) -> np.ndarray:
    ix, iy = cell
    if meas.vr_valid[ix, iy] and meas.ray is not None:
        ray = meas.ray[ix, iy]
        norm = np.hypot(ray[0], ray[1])
        if norm > 1e-9:
            ray = ray / norm
            tangent = np.array([-ray[1], ray[0]])
            radial = meas.vr[ix, iy] + rng.normal(
                0.0, cfg.newborn_radial_noise_mps, n
            )
            lateral = rng.normal(0.0, cfg.newborn_tangential_noise_mps, n)
            return radial[:, None] * ray + lateral[:, None] * tangent
    return rng.normal(0.0, cfg.newborn_speed_prior_mps, (n, 2))


def _stratified_pick(weights: np.ndarray, n: int, rng) -> np.ndarray:
    """Stratified resampling: n indices proportional to weights."""
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    u = (np.arange(n) + rng.uniform(0.0, 1.0, n)) / n
    return np.searchsorted(cdf, u)


def _refresh_velocity_stats(dgm: Dgm) -> None:
    shape = (dgm.cspec.w_cells, dgm.cspec.h_cells)
    w_c, v_mean = dgm._cell_weight_and_velocity()
    cov = np.zeros(shape + (2, 2))
    if dgm.particle_count:
        ix, iy, ok = dgm._cell_indices()
        dv = dgm.vel[ok] - v_mean[ix[ok], iy[ok]]
        outer = dv[:, :, None] * dv[:, None, :] * dgm.weight[ok, None, None]
        np.add.at(cov, (ix[ok], iy[ok]), outer)
    with np.errstate(invalid="ignore", divide="ignore"):
        cov /= w_c[..., None, None]
    cov[w_c <= 0] = 0.0
    dgm.v_mean = v_mean
    dgm.v_cov = cov
    dgm.v_valid = w_c > dgm.cfg.min_cell_weight


def inject_doppler(
    grid: CartesianGrid,
    detections: Sequence[Detection],
    velocities: Sequence[float],
    sensor_pose: Pose2d,
    cfg: DgmConfig,
) -> CartesianGrid:
    """Copy compensated radial velocities into sufficiently occupied cells.

    For each detection whose containing cell has occupancy mass at or
    above the injection threshold, the velocity and the sensor-to-target
    ray direction are written to that cell and its eight direct
    neighbors.  Belief masses are never modified.  Returns a new grid.
    """
    out = grid.copy()
    if out.ray is None:
        out.ray = np.zeros(out.masses.shape[:2] + (2,))
    if not detections:
        return out

    az = np.radians([d.azimuth_deg for d in detections])
    rng_m = np.array([d.range_m for d in detections])
    local = np.stack([rng_m * np.cos(az), rng_m * np.sin(az)], axis=-1)
    points = sensor_pose.transform(local)
    origin = np.array([sensor_pose.x, sensor_pose.y])
    ix, iy, ok = grid.spec.cell_of(points)

    w, h = grid.spec.w_cells, grid.spec.h_cells
    for i in np.flatnonzero(ok):
        if grid.masses[ix[i], iy[i], 1] < cfg.doppler_inject_threshold:
            continue
        ray = points[i] - origin
        norm = np.hypot(ray[0], ray[1])
        if norm < 1e-9:
            continue
        ray = ray / norm
        x_lo, x_hi = max(ix[i] - 1, 0), min(ix[i] + 2, w)
        y_lo, y_hi = max(iy[i] - 1, 0), min(iy[i] + 2, h)
        out.vr[x_lo:x_hi, y_lo:y_hi] = velocities[i]
        out.vr_valid[x_lo:x_hi, y_lo:y_hi] = True
        out.ray[x_lo:x_hi, y_lo:y_hi] = ray
    return out
