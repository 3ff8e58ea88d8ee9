"""First-order lag models for the motor and clutch torque actuators."""

import math
from dataclasses import dataclass

from powershift.errors import DomainError
from powershift.models import ActuatorLimits, ControlCommand, GearId, VehicleParams


def exact_output(start: float, command: float, time_constant: float, elapsed: float) -> float:
    """Lag output after ``elapsed`` seconds of a constant command, T′ + (T − T′)·e^(−t/θ)."""
    return command + (start - command) * math.exp(-elapsed / time_constant)


@dataclass
class FirstOrderActuator:
    """θ·Ṫ = T′ − T with the output kept inside [lower, upper]."""

    time_constant: float
    output: float = 0.0
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self) -> None:
        if not self.time_constant > 0:
            raise DomainError(
                f"time_constant must be positive, got {self.time_constant!r}", field="time_constant"
            )
        if self.lower > self.upper:
            raise DomainError(f"lower limit {self.lower} exceeds upper limit {self.upper}", field="lower")
        self.output = self.clamp(self.output)

    def clamp(self, value: float) -> float:
        return min(max(value, self.lower), self.upper)

    def output_after(self, command: float, elapsed: float) -> float:
        """Output ``elapsed`` seconds ahead under ``command``, without advancing."""
        return self.clamp(exact_output(self.output, self.clamp(command), self.time_constant, elapsed))

    def step(self, command: float, dt: float) -> float:
        """Advance by ``dt`` under a constant command and return the new output."""
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt!r}", field="dt")
        self.output = self.output_after(command, dt)
        return self.output

    def invert(self, desired_rate: float) -> float:
        """Command whose instantaneous output rate equals ``desired_rate``, T + θ·rate."""
        return self.clamp(self.output + self.time_constant * desired_rate)

    def rate(self, command: float) -> float:
        """Instantaneous output rate under ``command``."""
        return (self.clamp(command) - self.output) / self.time_constant


@dataclass
class ActuatorBank:
    """Motor torque actuator and the two clutch capacity actuators."""

    motor: FirstOrderActuator
    clutch1: FirstOrderActuator
    clutch2: FirstOrderActuator

    def __post_init__(self) -> None:
        for name in ("clutch1", "clutch2"):
            if getattr(self, name).lower != 0.0:
                raise DomainError(f"{name} actuator must have lower limit 0", field=name)

    @classmethod
    def from_params(
        cls,
        params: VehicleParams,
        limits: ActuatorLimits,
        outputs: tuple[float, float, float] = (0.0, 0.0, 0.0),
    ) -> "ActuatorBank":
        motor, clutch1, clutch2 = outputs
        return cls(
            motor=FirstOrderActuator(
                params.motor_time_const, motor, -limits.motor_torque_max, limits.motor_torque_max
            ),
            clutch1=FirstOrderActuator(
                params.clutch_time_constant(GearId.FIRST), clutch1, 0.0, limits.clutch_capacity_max
            ),
            clutch2=FirstOrderActuator(
                params.clutch_time_constant(GearId.SECOND), clutch2, 0.0, limits.clutch_capacity_max
            ),
        )

    def clutch(self, gear: GearId) -> FirstOrderActuator:
        return self.clutch1 if gear is GearId.FIRST else self.clutch2

    @property
    def outputs(self) -> tuple[float, float, float]:
        return (self.motor.output, self.clutch1.output, self.clutch2.output)

    def outputs_after(self, command: ControlCommand, elapsed: float) -> tuple[float, float, float]:
        """Exact outputs ``elapsed`` seconds into a step under ``command``."""
        return (
            self.motor.output_after(command.motor, elapsed),
            self.clutch1.output_after(command.clutch1, elapsed),
            self.clutch2.output_after(command.clutch2, elapsed),
        )

    def step(self, command: ControlCommand, dt: float) -> tuple[float, float, float]:
        self.motor.step(command.motor, dt)
        self.clutch1.step(command.clutch1, dt)
        self.clutch2.step(command.clutch2, dt)
        return self.outputs

    def clamp(self, command: ControlCommand) -> tuple[ControlCommand, bool]:
        """Limit a command to the actuator ranges; the flag is False if anything was clipped."""
        clamped = ControlCommand(
            motor=self.motor.clamp(command.motor),
            clutch1=self.clutch1.clamp(command.clutch1),
            clutch2=self.clutch2.clamp(command.clutch2),
        )
        return clamped, clamped == command
