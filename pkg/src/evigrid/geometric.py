"""Hand-crafted geometric inverse sensor model.

Occupancy evidence is a mixture of 2D Gaussians, one per detection, in
the radial/angular directions; evidence from multiple detections joins
via the complementary product, which keeps masses bounded without
renormalisation.  Free mass appears only between the sensor and the
first return of an azimuth bin, so azimuth bins without any detection
never receive free evidence.  Detections below the RCS threshold are
dropped before anything else.  Masses are deliberately small: the model
must stay conservative against false positives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import (
    Detection,
    EgoMotion,
    PolarGrid,
    PolarGridSpec,
    Pose2d,
    compensate_doppler,
)

RCS_MIN_DBSM = -20.0


@dataclass(frozen=True)
class GeometricIsmParams:
    """Tunables; none of them come from a published reference."""

    sigma_r_m: float = 0.5
    sigma_phi_deg: float = 1.0
    lambda_o: float = 0.6
    lambda_f: float = 0.3
    rcs_min_dbsm: float = RCS_MIN_DBSM
    velocity_spread_radius: int = 1

    def __post_init__(self) -> None:
        if self.sigma_r_m <= 0 or self.sigma_phi_deg <= 0:
            raise ValueError("Gaussian widths must be positive")
        if not 0 < self.lambda_o < 1 or not 0 < self.lambda_f < 1:
            raise ValueError("evidence amplitudes must lie in (0, 1)")
        if self.velocity_spread_radius < 0:
            raise ValueError("velocity_spread_radius must be >= 0")


def geometric_ism(
    detections: Sequence[Detection],
    ego: EgoMotion,
    pose: Pose2d,
    params: GeometricIsmParams,
    spec: PolarGridSpec,
) -> PolarGrid:
    """Build one polar measurement grid from a radar frame.

    Steps: RCS pre-filter; Gaussian-mixture occupancy at every bin
    center; implicit free space up to the first return per azimuth bin,
    linearly tapered over the last two radial sigmas; occupancy clamped
    so b_F + b_O <= 1; ego-compensated Doppler written to each
    detection's bin and spread to its Chebyshev neighborhood, ties going
    to the detection with the larger occupancy contribution.
    """
    grid = PolarGrid.vacuous(spec)
    kept = [d for d in detections if d.rcs_dbsm >= params.rcs_min_dbsm]
    if not kept:
        return grid

    az_centers = spec.azimuth_centers_deg()
    r_centers = spec.range_centers_m()
    ranges = np.array([d.range_m for d in kept])
    azimuths = np.array([d.azimuth_deg for d in kept])

    # Occupancy: complementary product over per-detection Gaussians.
    not_occ = np.ones((spec.a_bins, spec.r_bins))
    contribs = np.empty((len(kept), spec.a_bins, spec.r_bins))
    for i in range(len(kept)):
        g_a = np.exp(-((az_centers - azimuths[i]) ** 2) / (2 * params.sigma_phi_deg**2))
        g_r = np.exp(-((r_centers - ranges[i]) ** 2) / (2 * params.sigma_r_m**2))
        contribs[i] = params.lambda_o * g_a[:, None] * g_r[None, :]
        not_occ *= 1.0 - contribs[i]
    b_o = 1.0 - not_occ

    # Free space strictly before the first return of each azimuth bin.
    b_f = np.zeros_like(b_o)
    a_idx, _, ok = spec.bin_of(ranges, azimuths)
    first = np.full(spec.a_bins, np.inf)
    np.minimum.at(first, a_idx[ok], ranges[ok])
    has = np.isfinite(first)
    ramp = (first[has, None] - r_centers[None, :]) / (2 * params.sigma_r_m)
    b_f[has] = params.lambda_f * np.clip(ramp, 0.0, 1.0)
    b_f[has] *= r_centers[None, :] < first[has, None]

    b_o = np.minimum(b_o, 1.0 - b_f)
    grid.masses = np.stack([b_f, b_o, 1.0 - b_f - b_o], axis=-1)

    # Velocity channel: compensated Doppler around each detection bin.
    radius = params.velocity_spread_radius
    best = np.zeros((spec.a_bins, spec.r_bins))
    r_idx = np.floor(ranges / spec.alpha_r_m).astype(int)
    for i in np.flatnonzero(ok):
        vr_abs = compensate_doppler(kept[i], ego, pose)
        a_lo, a_hi = max(a_idx[i] - radius, 0), min(a_idx[i] + radius + 1, spec.a_bins)
        r_lo, r_hi = max(r_idx[i] - radius, 0), min(r_idx[i] + radius + 1, spec.r_bins)
        window = contribs[i, a_lo:a_hi, r_lo:r_hi]
        wins = window > best[a_lo:a_hi, r_lo:r_hi]
        grid.vr[a_lo:a_hi, r_lo:r_hi][wins] = vr_abs
        grid.vr_valid[a_lo:a_hi, r_lo:r_hi][wins] = True
        best[a_lo:a_hi, r_lo:r_hi][wins] = window[wins]
    return grid
