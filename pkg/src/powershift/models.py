"""Data models for the drivetrain, controller and scenarios."""

import math
from dataclasses import dataclass, field
from enum import IntEnum

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

import numpy as np

from powershift.errors import DomainError


def _require_positive(owner: object, *names: str) -> None:
    for name in names:
        value = getattr(owner, name)
        if not (math.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be positive, got {value!r}", field=name)


def _require_nonnegative(owner: object, *names: str) -> None:
    for name in names:
        value = getattr(owner, name)
        if not (math.isfinite(value) and value >= 0):
            raise DomainError(f"{name} must be nonnegative, got {value!r}", field=name)


class GearId(IntEnum):
    """One of the two forward gears; clutch k serves gear k."""

    FIRST = 1
    SECOND = 2

    def ratio(self, params: "VehicleParams") -> float:
        """Gear ratio i₁ or i₂."""
        return params.ratio_gear1 if self is GearId.FIRST else params.ratio_gear2

    def overall_ratio(self, params: "VehicleParams") -> float:
        """Ratio from drive shaft to the clutch's gear-side plate, i_gear·i_final."""
        return self.ratio(params) * params.ratio_final

    def other(self) -> "GearId":
        return GearId.SECOND if self is GearId.FIRST else GearId.FIRST


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the plant.

    Inertias in kg·m², mass in kg, radius in m, time constants in s.
    The clutch time constant is shared unless a per-clutch override is set.
    """

    motor_inertia: float
    vehicle_mass: float
    wheel_radius: float
    vehicle_inertia: float
    drag_coeff: float
    reference_area: float
    air_density: float
    ratio_gear1: float
    ratio_gear2: float
    ratio_final: float
    final_drive_efficiency: float
    motor_time_const: float
    clutch_time_const: float
    clutch1_time_const: float | None = None
    clutch2_time_const: float | None = None

    def __post_init__(self) -> None:
        _require_positive(
            self,
            "motor_inertia",
            "vehicle_mass",
            "wheel_radius",
            "vehicle_inertia",
            "reference_area",
            "air_density",
            "ratio_gear1",
            "ratio_gear2",
            "ratio_final",
            "motor_time_const",
            "clutch_time_const",
        )
        _require_nonnegative(self, "drag_coeff")
        for name in ("clutch1_time_const", "clutch2_time_const"):
            if getattr(self, name) is not None:
                _require_positive(self, name)
        eta = self.final_drive_efficiency
        if not (0 < eta <= 1):
            raise DomainError(
                f"final_drive_efficiency must satisfy 0 < eta <= 1, got {eta!r}",
                field="final_drive_efficiency",
            )
        if not self.ratio_gear1 > self.ratio_gear2:
            raise DomainError(
                f"ratio_gear1 ({self.ratio_gear1}) must exceed ratio_gear2 ({self.ratio_gear2})",
                field="ratio_gear1",
            )

    def clutch_time_constant(self, gear: GearId) -> float:
        override = self.clutch1_time_const if gear is GearId.FIRST else self.clutch2_time_const
        return override if override is not None else self.clutch_time_const

    @property
    def min_time_constant(self) -> float:
        return min(
            self.motor_time_const,
            self.clutch_time_constant(GearId.FIRST),
            self.clutch_time_constant(GearId.SECOND),
        )


@dataclass(frozen=True)
class DrivetrainState:
    """Instantaneous state of the plant.

    Clutch capacities are the realized actuator outputs (μ·F_N). When a clutch
    is engaged the motor speed is tied to the drive shaft through that gear.
    """

    motor_speed: float
    drive_shaft_speed: float
    motor_torque: float
    clutch1_capacity: float
    clutch2_capacity: float
    engaged_clutch: GearId | None
    active_gear: GearId
    time: float = 0.0

    def __post_init__(self) -> None:
        _require_nonnegative(self, "clutch1_capacity", "clutch2_capacity")

    def capacity(self, gear: GearId) -> float:
        return self.clutch1_capacity if gear is GearId.FIRST else self.clutch2_capacity


@dataclass(frozen=True)
class ControlCommand:
    """Commanded torques T_m′, T_c1′, T_c2′ sent to the actuators."""

    motor: float
    clutch1: float
    clutch2: float

    def __post_init__(self) -> None:
        _require_nonnegative(self, "clutch1", "clutch2")

    def clutch(self, gear: GearId) -> float:
        return self.clutch1 if gear is GearId.FIRST else self.clutch2

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.motor, self.clutch1, self.clutch2)


@dataclass(frozen=True)
class ControllerConfig:
    """Calibration of the powershift controller.

    Slip accelerations (gamma_*) and the engagement window omega_2 are
    magnitudes; the controller applies the sign for the shift direction.
    """

    gamma_2_1: float = 10.0  # rad/s², arrival at the first engagement window
    gamma_2_2: float = 1.0  # rad/s², arrival at final engagement
    gamma_fast: float = 50.0  # rad/s², fast phases
    dds_set: float = 5.0  # rad/s³, torque-phase slip jerk
    omega_2: float = 30.0  # rad/s
    handover_s: float = 0.3
    eps_slip: float = 1e-3
    est_tau: float = 0.005
    safety_factor: float = 1.2
    release_tol: float = 0.5  # N·m
    rate_limit: float = 2e4  # N·m/s per channel

    def __post_init__(self) -> None:
        _require_positive(
            self,
            "gamma_2_1",
            "gamma_2_2",
            "gamma_fast",
            "handover_s",
            "eps_slip",
            "est_tau",
            "release_tol",
            "rate_limit",
        )
        _require_nonnegative(self, "dds_set", "omega_2")
        if self.gamma_2_2 > self.gamma_2_1:
            raise DomainError(
                f"gamma_2_2 ({self.gamma_2_2}) must not exceed gamma_2_1 ({self.gamma_2_1})",
                field="gamma_2_2",
            )
        if self.gamma_2_1 > self.gamma_fast:
            raise DomainError(
                f"gamma_2_1 ({self.gamma_2_1}) must not exceed gamma_fast ({self.gamma_fast})",
                field="gamma_2_1",
            )
        if self.safety_factor < 1:
            raise DomainError(
                f"safety_factor must be at least 1, got {self.safety_factor}",
                field="safety_factor",
            )


@dataclass(frozen=True)
class ActuatorLimits:
    """Output limits: motor in [-motor_torque_max, motor_torque_max], clutches in [0, clutch_capacity_max]."""

    motor_torque_max: float = 1000.0
    clutch_capacity_max: float = 2000.0

    def __post_init__(self) -> None:
        _require_positive(self, "motor_torque_max", "clutch_capacity_max")


class ShiftDirection(StrEnum):
    UP = "up"
    DOWN = "down"


class ShiftMode(StrEnum):
    """Outcome of the shift-management policy for a request."""

    POWERSHIFT = "powershift"
    SEQUENTIAL = "sequential"
    DENY = "deny"


@dataclass(frozen=True)
class ShiftPolicy:
    """Powershift only uphill below ``max_velocity``; otherwise sequential (or deny)."""

    max_velocity: float = 2.0  # m/s
    allow_sequential: bool = True

    def __post_init__(self) -> None:
        _require_positive(self, "max_velocity")


@dataclass(frozen=True)
class ShiftEvent:
    """A scheduled shift request."""

    time: float
    direction: ShiftDirection

    def __post_init__(self) -> None:
        _require_nonnegative(self, "time")


@dataclass(frozen=True)
class TorqueProfile:
    """Drive-torque target as piecewise-linear breakpoints, held constant beyond the ends."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.breakpoints:
            raise DomainError("torque profile needs at least one breakpoint", field="breakpoints")
        times = [t for t, _ in self.breakpoints]
        if any(b < a for a, b in zip(times, times[1:])):
            raise DomainError("torque profile times must be nondecreasing", field="breakpoints")

    @classmethod
    def constant(cls, value: float) -> "TorqueProfile":
        return cls(breakpoints=((0.0, float(value)),))

    def __call__(self, t: float) -> float:
        times, values = zip(*self.breakpoints)
        return float(np.interp(t, times, values))


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one closed-loop simulation run."""

    params: VehicleParams
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)
    policy: ShiftPolicy = field(default_factory=ShiftPolicy)
    td_target: TorqueProfile = field(default_factory=lambda: TorqueProfile.constant(0.0))
    shifts: tuple[ShiftEvent, ...] = ()
    initial_gear: GearId = GearId.FIRST
    initial_velocity: float = 0.0  # m/s
    grade: float = 0.0  # rad
    load: float = 0.0  # N·m at the drive shaft
    dt: float = 1e-3
    duration: float = 1.0
    name: str = "scenario"

    def __post_init__(self) -> None:
        _require_positive(self, "dt")
        _require_nonnegative(self, "duration", "initial_velocity")
        guard = self.params.min_time_constant / 4
        if self.dt > guard:
            raise DomainError(
                f"dt ({self.dt}) must not exceed a quarter of the smallest time constant ({guard})",
                field="dt",
            )

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))
