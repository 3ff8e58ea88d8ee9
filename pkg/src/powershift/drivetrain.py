"""Drivetrain dynamics: kinematics, free and engaged equations of motion.

All functions are pure. Torques in N·m, speeds in rad/s. The free system has
two degrees of freedom (motor and drive shaft); with a clutch engaged the
motor is tied to the drive shaft and a single degree of freedom remains.
Efficiency is applied on the final drive output regardless of power-flow
direction.
"""

import math

from powershift.errors import DomainError
from powershift.models import DrivetrainState, GearId, VehicleParams


def equivalent_inertia(vehicle_mass: float, wheel_radius: float) -> float:
    """Vehicle mass reflected to the drive shaft, m_v·r²."""
    if not vehicle_mass > 0:
        raise DomainError(f"vehicle_mass must be positive, got {vehicle_mass!r}", field="vehicle_mass")
    if not wheel_radius > 0:
        raise DomainError(f"wheel_radius must be positive, got {wheel_radius!r}", field="wheel_radius")
    return vehicle_mass * wheel_radius**2


def primary_speed(drive_shaft_speed: float, gear: GearId, params: VehicleParams) -> float:
    """Speed of the clutch's gear-side plate, ω_v·i_final·i_gear."""
    return drive_shaft_speed * gear.overall_ratio(params)


def clutch_slip(state: DrivetrainState, gear: GearId, params: VehicleParams) -> float:
    """Slip speed ω_s of the clutch serving ``gear``."""
    return state.motor_speed - primary_speed(state.drive_shaft_speed, gear, params)


def drive_torque(clutch1_torque: float, clutch2_torque: float, params: VehicleParams) -> float:
    """Drive-shaft torque from the torques the clutches actually transmit."""
    return (
        (clutch1_torque * params.ratio_gear1 + clutch2_torque * params.ratio_gear2)
        * params.ratio_final
        * params.final_drive_efficiency
    )


def dynamics_free(
    motor_torque: float,
    clutch1_torque: float,
    clutch2_torque: float,
    resistance: float,
    params: VehicleParams,
) -> tuple[float, float]:
    """Accelerations (ω̇_m, ω̇_v) with neither clutch engaged.

    The clutch torques are the transmitted values, already signed by the
    slip direction of each sliding clutch.
    """
    motor_accel = (motor_torque - clutch1_torque - clutch2_torque) / params.motor_inertia
    shaft_accel = (drive_torque(clutch1_torque, clutch2_torque, params) - resistance) / params.vehicle_inertia
    return motor_accel, shaft_accel


def reflected_inertia(gear: GearId, params: VehicleParams) -> float:
    """J_v + J_m·(i_gear·i_final)²·η, the inertia seen by the drive shaft when engaged."""
    ratio = gear.overall_ratio(params)
    return params.vehicle_inertia + params.motor_inertia * ratio**2 * params.final_drive_efficiency


def dynamics_engaged(
    gear: GearId,
    motor_torque: float,
    resistance: float,
    params: VehicleParams,
    *,
    other_torque: float = 0.0,
) -> float:
    """Drive-shaft acceleration with the clutch of ``gear`` engaged.

    ``other_torque`` is the torque transmitted by the other, sliding clutch
    (zero outside a cross-shift).
    """
    eta = params.final_drive_efficiency
    ratio = gear.overall_ratio(params)
    other_ratio = gear.other().overall_ratio(params)
    driving = (motor_torque - other_torque) * ratio * eta + other_torque * other_ratio * eta
    return (driving - resistance) / reflected_inertia(gear, params)


def engaged_clutch_demand(
    gear: GearId,
    motor_torque: float,
    shaft_accel: float,
    params: VehicleParams,
    *,
    other_torque: float = 0.0,
) -> float:
    """Torque the engaged clutch must transmit to keep zero slip (motor-side balance)."""
    return motor_torque - other_torque - params.motor_inertia * shaft_accel * gear.overall_ratio(params)


def engaged_clutch_torque(gear: GearId, motor_torque: float, resistance: float, params: VehicleParams) -> float:
    """Closed form of the engaged-clutch torque for given motor torque and resistance.

    Equals ``engaged_clutch_demand`` evaluated at ``dynamics_engaged``.
    """
    ratio = gear.overall_ratio(params)
    numerator = motor_torque * params.vehicle_inertia + params.motor_inertia * resistance * ratio
    return numerator / reflected_inertia(gear, params)


def engagement_holds(capacity: float, demand: float) -> bool:
    """True while the clutch can transmit what engagement requires."""
    return capacity >= abs(demand)


def sliding_torque(capacity: float, slip: float, direction: int = 0) -> float:
    """Torque transmitted by a sliding clutch, sign(ω_s)·capacity.

    ``direction`` resolves the sign at exactly zero slip.
    """
    sign = math.copysign(1.0, slip) if slip != 0 else float(direction)
    return sign * capacity


def torque_drop_at_engagement(slip_accel_pre: float, gear_target: GearId, params: VehicleParams) -> float:
    """Drive-torque step T_d(t⁺) − T_d(t⁻) when the target clutch locks.

    Proportional to the slip acceleration just before engagement; zero when
    the slip arrives with zero acceleration.
    """
    ratio = gear_target.overall_ratio(params)
    gain = ratio * params.final_drive_efficiency / reflected_inertia(gear_target, params)
    return gain * slip_accel_pre * params.motor_inertia * params.vehicle_inertia
