"""Tests for the drivetrain equations."""

import numpy as np
import pytest

from powershift.drivetrain import (
    clutch_slip,
    drive_torque,
    dynamics_engaged,
    dynamics_free,
    engaged_clutch_demand,
    engaged_clutch_torque,
    engagement_holds,
    equivalent_inertia,
    primary_speed,
    reflected_inertia,
    sliding_torque,
    torque_drop_at_engagement,
)
from powershift.errors import DomainError
from powershift.models import DrivetrainState, GearId, VehicleParams


def _state(motor_speed: float, shaft_speed: float, gear: GearId = GearId.FIRST) -> DrivetrainState:
    return DrivetrainState(
        motor_speed=motor_speed,
        drive_shaft_speed=shaft_speed,
        motor_torque=0.0,
        clutch1_capacity=0.0,
        clutch2_capacity=0.0,
        engaged_clutch=None,
        active_gear=gear,
    )


@pytest.mark.parametrize(
    ("mass", "radius", "expected"),
    [(9450.0, 0.615, 3574.2), (1.0, 1.0, 1.0), (2000.0, 0.5, 500.0)],
)
def test_equivalent_inertia(mass: float, radius: float, expected: float) -> None:
    """Vehicle mass reflects to the drive shaft as m·r²."""
    assert equivalent_inertia(mass, radius) == pytest.approx(expected, rel=1e-3)


@pytest.mark.parametrize(("mass", "radius"), [(0.0, 0.615), (9450.0, -1.0)])
def test_equivalent_inertia_rejects_nonpositive(mass: float, radius: float) -> None:
    """Non-positive mass or radius is a domain error."""
    with pytest.raises(DomainError):
        equivalent_inertia(mass, radius)


def test_primary_speed(params: VehicleParams) -> None:
    """Gear-side plate speed is the shaft speed times the overall ratio."""
    assert primary_speed(0.0, GearId.FIRST, params) == 0.0
    assert primary_speed(1.0, GearId.FIRST, params) == pytest.approx(57.704, abs=1e-3)
    assert primary_speed(1.0, GearId.SECOND, params) == pytest.approx(23.144, abs=1e-3)


def test_clutch_slip(params: VehicleParams) -> None:
    """Slip is motor speed minus the plate speed of the chosen gear."""
    synchronous = primary_speed(1.0, GearId.FIRST, params)
    assert clutch_slip(_state(synchronous, 1.0), GearId.FIRST, params) == pytest.approx(0.0, abs=1e-12)
    assert clutch_slip(_state(60.0, 1.0), GearId.FIRST, params) == pytest.approx(2.296, abs=1e-3)
    second = primary_speed(1.0, GearId.SECOND, params)
    assert clutch_slip(_state(second, 1.0), GearId.SECOND, params) == pytest.approx(0.0, abs=1e-12)


def test_drive_torque_examples(params: VehicleParams) -> None:
    """Drive torque sums both clutches through their ratios and the final drive."""
    assert drive_torque(100.0, 0.0, params) == pytest.approx(5193.4, abs=0.1)
    assert drive_torque(0.0, 100.0, params) == pytest.approx(2082.9, abs=0.1)
    assert drive_torque(0.0, 0.0, params) == 0.0


def test_drive_torque_is_linear(params: VehicleParams) -> None:
    """Contributions of the two clutches superpose."""
    assert drive_torque(37.0, 0.0, params) + drive_torque(0.0, 81.0, params) == pytest.approx(
        drive_torque(37.0, 81.0, params), rel=1e-15
    )


def test_dynamics_free_examples(params: VehicleParams) -> None:
    """Free accelerations follow the motor and drive-shaft balances."""
    motor_accel, shaft_accel = dynamics_free(200.0, 0.0, 0.0, 0.0, params)
    assert motor_accel == pytest.approx(133.333, abs=1e-3)
    assert shaft_accel == 0.0

    motor_accel, shaft_accel = dynamics_free(0.0, 100.0, 0.0, 0.0, params)
    assert motor_accel == pytest.approx(-66.667, abs=1e-3)
    assert shaft_accel == pytest.approx(1.453, abs=1e-3)


def test_dynamics_free_equilibrium(params: VehicleParams) -> None:
    """Balanced motor and load torques leave both speeds constant."""
    resistance = drive_torque(60.0, 40.0, params)
    assert dynamics_free(100.0, 60.0, 40.0, resistance, params) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_dynamics_engaged_examples(params: VehicleParams) -> None:
    """Engaged acceleration uses the reflected inertia of the held gear."""
    assert dynamics_engaged(GearId.FIRST, 100.0, 0.0, params) == pytest.approx(0.6436, abs=1e-4)
    assert dynamics_engaged(GearId.FIRST, 0.0, 0.0, params) == 0.0
    assert dynamics_engaged(GearId.SECOND, 100.0, 0.0, params) == pytest.approx(0.4847, abs=1e-4)


def test_engaged_clutch_demand_examples(params: VehicleParams) -> None:
    """Demand is the motor torque left after accelerating the motor inertia."""
    assert engaged_clutch_demand(GearId.FIRST, 100.0, 0.6436, params) == pytest.approx(44.29, abs=0.01)
    assert engaged_clutch_demand(GearId.FIRST, 0.0, 0.0, params) == 0.0
    assert engaged_clutch_demand(GearId.SECOND, 100.0, 0.4847, params) == pytest.approx(83.17, abs=0.01)


@pytest.mark.parametrize("gear", list(GearId))
def test_demand_matches_closed_form(params: VehicleParams, gear: GearId) -> None:
    """Demand at the engaged acceleration reproduces the closed-form clutch torque over random loads."""
    rng = np.random.default_rng(7)
    for motor, resistance in zip(rng.uniform(-500.0, 1000.0, 1000), rng.uniform(-5000.0, 10000.0, 1000)):
        shaft_accel = dynamics_engaged(gear, motor, resistance, params)
        demand = engaged_clutch_demand(gear, motor, shaft_accel, params)
        expected = engaged_clutch_torque(gear, motor, resistance, params)
        assert demand == pytest.approx(expected, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("gear", list(GearId))
def test_free_dynamics_reduce_to_engaged(params: VehicleParams, gear: GearId) -> None:
    """Feeding the demand into the free equations keeps the clutch synchronous for random states."""
    rng = np.random.default_rng(11)
    for motor, resistance in zip(rng.uniform(-500.0, 1000.0, 1000), rng.uniform(-5000.0, 10000.0, 1000)):
        shaft_accel = dynamics_engaged(gear, motor, resistance, params)
        demand = engaged_clutch_demand(gear, motor, shaft_accel, params)
        torques = {gear: demand, gear.other(): 0.0}
        motor_accel, free_shaft_accel = dynamics_free(
            motor, torques[GearId.FIRST], torques[GearId.SECOND], resistance, params
        )
        assert free_shaft_accel == pytest.approx(shaft_accel, rel=1e-9, abs=1e-12)
        assert motor_accel == pytest.approx(shaft_accel * gear.overall_ratio(params), rel=1e-9, abs=1e-12)


def test_engaged_with_sliding_other_clutch_is_consistent(params: VehicleParams) -> None:
    """During a cross-shift the free equations agree with the engaged form given the other torque."""
    gear, other_torque = GearId.SECOND, 30.0
    motor, resistance = 150.0, 2000.0
    shaft_accel = dynamics_engaged(gear, motor, resistance, params, other_torque=other_torque)
    demand = engaged_clutch_demand(gear, motor, shaft_accel, params, other_torque=other_torque)
    motor_accel, free_shaft_accel = dynamics_free(motor, other_torque, demand, resistance, params)
    assert free_shaft_accel == pytest.approx(shaft_accel, rel=1e-9)
    assert motor_accel == pytest.approx(shaft_accel * gear.overall_ratio(params), rel=1e-9)


@pytest.mark.parametrize(
    ("capacity", "demand", "expected"),
    [(50.0, 44.29, True), (0.0, 0.0, True), (40.0, 44.29, False), (50.0, -44.29, True), (40.0, -44.29, False)],
)
def test_engagement_holds(capacity: float, demand: float, expected: bool) -> None:
    """A clutch holds while its capacity covers the magnitude of the demand."""
    assert engagement_holds(capacity, demand) is expected


def test_sliding_torque_sign() -> None:
    """A sliding clutch transmits its capacity in the slip direction."""
    assert sliding_torque(80.0, 3.0) == 80.0
    assert sliding_torque(80.0, -0.1) == -80.0
    assert sliding_torque(80.0, 0.0) == 0.0
    assert sliding_torque(80.0, 0.0, direction=-1) == -80.0


def test_torque_drop_examples(params: VehicleParams) -> None:
    """The lock-up step scales with the slip acceleration just before engagement."""
    assert torque_drop_at_engagement(0.0, GearId.SECOND, params) == 0.0
    assert torque_drop_at_engagement(1.0, GearId.SECOND, params) == pytest.approx(25.99, abs=0.01)
    ratio = GearId.FIRST.overall_ratio(params)
    expected = -2.0 * ratio * 0.9 * 1.5 * 3574.2 / reflected_inertia(GearId.FIRST, params)
    assert torque_drop_at_engagement(-2.0, GearId.FIRST, params) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(-69.0, abs=0.1)


def test_torque_drop_is_linear(params: VehicleParams) -> None:
    """Doubling the slip acceleration doubles the step."""
    single = torque_drop_at_engagement(1.7, GearId.FIRST, params)
    assert torque_drop_at_engagement(3.4, GearId.FIRST, params) == pytest.approx(2 * single, rel=1e-12)


@pytest.mark.parametrize("gear", list(GearId))
@pytest.mark.parametrize("direction", [1, -1])
def test_torque_drop_matches_lockup_jump(params: VehicleParams, gear: GearId, direction: int) -> None:
    """The closed form equals the drive-torque jump from sliding to engaged at the same instant."""
    motor, resistance, capacity = 120.0, 900.0, 70.0
    sliding = direction * capacity
    torques = {gear: sliding, gear.other(): 0.0}
    motor_accel, shaft_accel = dynamics_free(motor, torques[GearId.FIRST], torques[GearId.SECOND], resistance, params)
    slip_accel = motor_accel - gear.overall_ratio(params) * shaft_accel

    demand = engaged_clutch_torque(gear, motor, resistance, params)
    locked = {gear: demand, gear.other(): 0.0}
    jump = drive_torque(locked[GearId.FIRST], locked[GearId.SECOND], params) - drive_torque(
        torques[GearId.FIRST], torques[GearId.SECOND], params
    )
    assert torque_drop_at_engagement(slip_accel, gear, params) == pytest.approx(jump, rel=1e-9)
