import numpy as np
import pytest

from evigrid.grids import Pose2d
from evigrid.labels import OrientedBox
from evigrid.sim import RadarMount, Scenario, SimConfig, VehicleTrack


def make_scenario(
    guardrails=(),
    vehicles=(),
    ego_start=Pose2d(),
    ego_v=0.0,
    ego_yaw_rate=0.0,
    sensors=None,
    duration=2.0,
    seed=99,
):
    if sensors is None:
        sensors = (RadarMount("front_center", Pose2d(3.5, 0.0, 0.0), 108.0, 64.0, 0.05),)
    return Scenario(
        guardrails=tuple(np.asarray(g, dtype=float) for g in guardrails),
        vehicles=tuple(vehicles),
        ego_start=ego_start,
        ego_v_mps=ego_v,
        ego_yaw_rate_dps=ego_yaw_rate,
        sensors=tuple(sensors),
        duration_s=duration,
        seed=seed,
    )


@pytest.fixture
def straight_road():
    """Two parallel guardrails, one receding vehicle ahead."""
    return make_scenario(
        guardrails=[[[-20.0, -8.0], [150.0, -8.0]], [[-20.0, 8.0], [150.0, 8.0]]],
        vehicles=[
            VehicleTrack(OrientedBox(30.0, 1.8, 4.5, 2.0, 0.0), np.array([5.0, 0.0]))
        ],
        ego_v=0.0,
    )


@pytest.fixture
def quiet_cfg():
    return SimConfig(
        radar_range_noise_m=0.0,
        radar_az_noise_deg=0.0,
        radar_doppler_noise_mps=0.0,
        detections_per_target_mean=8.0,
        detection_dropout=0.0,
        clutter_rate=0.0,
    )
