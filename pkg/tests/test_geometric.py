"""Geometric ISM against an independent brute-force oracle."""

import math

import numpy as np
import pytest

from evigrid.geometric import GeometricIsmParams, geometric_ism
from evigrid.grids import (
    Detection,
    EgoMotion,
    PolarGridSpec,
    Pose2d,
    compensate_doppler,
)

SPEC = PolarGridSpec(40, 60, 2.7, 1.0)
PARAMS = GeometricIsmParams()
EGO = EgoMotion(0.0, 0.0)
POSE = Pose2d()


def det(r, az, doppler=0.0, rcs=5.0):
    return Detection(r, az, doppler, rcs, 0.0, "s")


def oracle_grid(detections, ego, pose, params, spec):
    """Brute-force reference: evaluates every rule cell by cell in loops."""
    kept = [d for d in detections if d.rcs_dbsm >= params.rcs_min_dbsm]
    a_bins, r_bins = spec.a_bins, spec.r_bins
    lo = -0.5 * spec.fov_deg
    b_f = np.zeros((a_bins, r_bins))
    b_o = np.zeros((a_bins, r_bins))
    vr = np.zeros((a_bins, r_bins))
    vr_valid = np.zeros((a_bins, r_bins), dtype=bool)

    first = {}
    for d in kept:
        a = math.floor((d.azimuth_deg - lo) / spec.alpha_a_deg)
        if lo <= d.azimuth_deg < -lo and 0 <= d.range_m < spec.max_range_m:
            first[a] = min(first.get(a, math.inf), d.range_m)

    for a in range(a_bins):
        az_c = lo + (a + 0.5) * spec.alpha_a_deg
        for r in range(r_bins):
            r_c = (r + 0.5) * spec.alpha_r_m
            prod = 1.0
            for d in kept:
                g = params.lambda_o * math.exp(
                    -((r_c - d.range_m) ** 2) / (2 * params.sigma_r_m**2)
                    - ((az_c - d.azimuth_deg) ** 2) / (2 * params.sigma_phi_deg**2)
                )
                prod *= 1.0 - g
            occ = 1.0 - prod
            free = 0.0
            if a in first and r_c < first[a]:
                free = params.lambda_f * min(
                    max((first[a] - r_c) / (2 * params.sigma_r_m), 0.0), 1.0
                )
            b_f[a, r] = free
            b_o[a, r] = min(occ, 1.0 - free)

    radius = params.velocity_spread_radius
    best = np.zeros((a_bins, r_bins))
    for d in kept:
        a = math.floor((d.azimuth_deg - lo) / spec.alpha_a_deg)
        rr = math.floor(d.range_m / spec.alpha_r_m)
        if not (lo <= d.azimuth_deg < -lo and 0 <= rr < r_bins):
            continue
        v = compensate_doppler(d, ego, pose)
        for da in range(-radius, radius + 1):
            for dr in range(-radius, radius + 1):
                aa, rrr = a + da, rr + dr
                if not (0 <= aa < a_bins and 0 <= rrr < r_bins):
                    continue
                az_c = lo + (aa + 0.5) * spec.alpha_a_deg
                r_c = (rrr + 0.5) * spec.alpha_r_m
                g = params.lambda_o * math.exp(
                    -((r_c - d.range_m) ** 2) / (2 * params.sigma_r_m**2)
                    - ((az_c - d.azimuth_deg) ** 2) / (2 * params.sigma_phi_deg**2)
                )
                if g > best[aa, rrr]:
                    best[aa, rrr] = g
                    vr[aa, rrr] = v
                    vr_valid[aa, rrr] = True
    return b_f, b_o, vr, vr_valid


def random_detections(rng, n):
    return [
        det(
            rng.uniform(1.0, 58.0),
            rng.uniform(-52.0, 52.0),
            rng.uniform(-20.0, 20.0),
            rng.uniform(-30.0, 10.0),
        )
        for _ in range(n)
    ]


class TestGeometricIsm:
    def test_no_detections_vacuous(self):
        grid = geometric_ism([], EGO, POSE, PARAMS, SPEC)
        assert (grid.masses[..., 2] == 1.0).all()
        assert not grid.vr_valid.any()

    def test_rcs_filtered_detection_vanishes(self):
        grid = geometric_ism([det(20.0, 0.0, rcs=-25.0)], EGO, POSE, PARAMS, SPEC)
        assert (grid.masses[..., 2] == 1.0).all()

    def test_rcs_threshold_is_strict_less_than(self):
        grid = geometric_ism([det(20.0, 0.0, rcs=-20.0)], EGO, POSE, PARAMS, SPEC)
        assert grid.masses[..., 1].max() > 0.1  # kept, unlike rcs < -20

    def test_single_detection_profile(self):
        d = det(20.5, 0.0)  # bin centers: range 20.5 -> bin 20, az 0 in bin 20
        grid = geometric_ism([d], EGO, POSE, PARAMS, SPEC)
        a, r, ok = SPEC.bin_of(np.array([20.5]), np.array([0.0]))
        assert ok.all()
        # peak bin azimuth center is 1.35 deg off the detection
        g_peak = PARAMS.lambda_o * math.exp(-(1.35**2) / 2.0)
        assert grid.masses[a[0], r[0], 1] == pytest.approx(g_peak, abs=1e-12)
        # free space before the return, vacuous beyond it in the same column
        col = grid.masses[a[0]]
        assert col[5, 0] == pytest.approx(PARAMS.lambda_f)
        assert col[-1, 0] == 0.0
        assert col[-1, 1] == pytest.approx(0.0, abs=1e-6)

    def test_free_taper_rule(self):
        d = det(30.5, 0.0)
        grid = geometric_ism([d], EGO, POSE, PARAMS, SPEC)
        a = SPEC.bin_of(np.array([30.5]), np.array([0.0]))[0][0]
        r_centers = SPEC.range_centers_m()
        col_bf = grid.masses[a, :, 0]
        for r, r_c in enumerate(r_centers):
            if r_c < 30.5 - 2 * PARAMS.sigma_r_m:
                assert col_bf[r] == pytest.approx(PARAMS.lambda_f)
            elif r_c >= 30.5:
                assert col_bf[r] == 0.0

    def test_oracle_agreement_on_random_sets(self):
        rng = np.random.default_rng(2024)
        ego = EgoMotion(12.0, 3.0)
        pose = Pose2d(3.2, -0.4, 17.0)
        for _ in range(20):
            ds = random_detections(rng, int(rng.integers(1, 12)))
            grid = geometric_ism(ds, ego, pose, PARAMS, SPEC)
            b_f, b_o, vr, vr_valid = oracle_grid(ds, ego, pose, PARAMS, SPEC)
            assert np.abs(grid.masses[..., 0] - b_f).max() < 1e-9
            assert np.abs(grid.masses[..., 1] - b_o).max() < 1e-9
            np.testing.assert_array_equal(grid.vr_valid, vr_valid)
            if vr_valid.any():
                assert np.abs(grid.vr[vr_valid] - vr[vr_valid]).max() < 1e-9

    def test_masses_valid_and_monotone(self):
        rng = np.random.default_rng(5)
        ds = random_detections(rng, 8)
        grid = geometric_ism(ds, EGO, POSE, PARAMS, SPEC)
        grid.validate()
        more = geometric_ism(ds + [det(25.0, 10.0)], EGO, POSE, PARAMS, SPEC)
        assert (more.masses[..., 1] >= grid.masses[..., 1] - 1e-12).all()

    def test_clamp_under_large_lambda(self):
        params = GeometricIsmParams(lambda_o=0.95, lambda_f=0.6)
        ds = [det(10.5, 0.0), det(10.6, 0.1), det(10.4, -0.1)]
        grid = geometric_ism(ds, EGO, POSE, params, SPEC)
        assert (grid.masses[..., 0] + grid.masses[..., 1] <= 1.0 + 1e-12).all()

    def test_velocity_conflict_keeps_stronger(self):
        # two detections in the same bin; the second sits closer to the
        # bin center so its contribution wins
        d1 = det(20.61, 0.05, doppler=3.0)
        d2 = det(20.5, 1.3, doppler=-4.0)
        grid = geometric_ism([d1, d2], EGO, POSE, PARAMS, SPEC)
        a, r, _ = SPEC.bin_of(np.array([20.5]), np.array([1.3]))
        assert grid.vr[a[0], r[0]] == pytest.approx(-4.0)

    def test_vacuous_outside_gaussian_reach(self):
        grid = geometric_ism([det(20.5, 0.0)], EGO, POSE, PARAMS, SPEC)
        far = grid.masses[0]  # azimuth -52.65 deg, > 50 sigma away
        assert (far[:, 2] == 1.0).all()
