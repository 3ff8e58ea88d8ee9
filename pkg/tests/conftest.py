"""Shared fixtures: the 10 t wheel loader and small scenarios built on it."""

import pytest

from powershift.models import VehicleParams


def wheel_loader(**overrides: float) -> VehicleParams:
    values = {
        "motor_inertia": 1.5,
        "vehicle_mass": 9450.0,
        "wheel_radius": 0.615,
        "vehicle_inertia": 3574.2,
        "drag_coeff": 0.8,
        "reference_area": 0.8,
        "air_density": 1.293,
        "ratio_gear1": 3.74,
        "ratio_gear2": 1.5,
        "ratio_final": 15.429,
        "final_drive_efficiency": 0.9,
        "motor_time_const": 0.08,
        "clutch_time_const": 0.04,
    }
    values.update(overrides)
    return VehicleParams(**values)


@pytest.fixture
def params() -> VehicleParams:
    return wheel_loader()
