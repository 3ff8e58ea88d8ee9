"""Powershift controller: phase selector and torque generator.

An upshift runs a torque phase (load handed from clutch 1 to clutch 2 at
unchanged gear-1 synchronism) and then an inertia phase that pulls the motor
down to gear-2 synchronism. A downshift has no torque phase; its inertia
phase is split into P0..P4 with a cross-shift in the middle.

Slip is always measured against the on-coming gear. Inertia sub-phases shape
the slip through the motor torque: fast phases hold a constant slip
acceleration, smooth phases follow a critically damped glide that reaches its
target with a prescribed slip acceleration.
"""

import math
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

from powershift.actuators import ActuatorBank
from powershift.drivetrain import (
    clutch_slip,
    engaged_clutch_demand,
    engagement_holds,
    sliding_torque,
)
from powershift.errors import PowershiftError
from powershift.logging import logger
from powershift.models import (
    ControlCommand,
    ControllerConfig,
    DrivetrainState,
    GearId,
    Scenario,
    ShiftDirection,
    ShiftMode,
    ShiftPolicy,
    VehicleParams,
)

# Fraction of the off-going share withheld to start the off-going clutch sliding
BREAKAWAY_MARGIN = 0.02


class ShiftPhase(StrEnum):
    STEADY_1 = "Steady1"
    STEADY_2 = "Steady2"
    UPSHIFT_TORQUE = "UpshiftTorquePhase"
    UPSHIFT_FAST = "UpshiftInertiaFast"
    UPSHIFT_SMOOTH = "UpshiftInertiaSmooth"
    UPSHIFT_FORCED = "UpshiftForced"
    DOWNSHIFT_FAST_1 = "DownshiftFast1"  # P0
    DOWNSHIFT_SMOOTH_1 = "DownshiftSmooth1"  # P1
    DOWNSHIFT_FAST_2 = "DownshiftFast2"  # P2, cross-shift
    DOWNSHIFT_SMOOTH_2 = "DownshiftSmooth2"  # P3
    DOWNSHIFT_FORCED = "DownshiftForced"  # P4

    @classmethod
    def steady(cls, gear: GearId) -> "ShiftPhase":
        return cls.STEADY_1 if gear is GearId.FIRST else cls.STEADY_2

    @property
    def is_steady(self) -> bool:
        return self in (ShiftPhase.STEADY_1, ShiftPhase.STEADY_2)

    @property
    def is_forced(self) -> bool:
        return self in (ShiftPhase.UPSHIFT_FORCED, ShiftPhase.DOWNSHIFT_FORCED)

    @property
    def is_upshift(self) -> bool:
        return self in _UPSHIFT_PHASES

    @property
    def target_gear(self) -> GearId:
        """Gear the phase is heading for (the held gear when steady)."""
        if self is ShiftPhase.STEADY_1:
            return GearId.FIRST
        if self is ShiftPhase.STEADY_2 or self.is_upshift:
            return GearId.SECOND
        return GearId.FIRST


_UPSHIFT_PHASES = frozenset(
    {
        ShiftPhase.UPSHIFT_TORQUE,
        ShiftPhase.UPSHIFT_FAST,
        ShiftPhase.UPSHIFT_SMOOTH,
        ShiftPhase.UPSHIFT_FORCED,
    }
)

LEGAL_TRANSITIONS: dict[ShiftPhase, frozenset[ShiftPhase]] = {
    # A sequential upshift has nothing to hand over and skips the torque phase
    ShiftPhase.STEADY_1: frozenset({ShiftPhase.UPSHIFT_TORQUE, ShiftPhase.UPSHIFT_FAST}),
    ShiftPhase.UPSHIFT_TORQUE: frozenset({ShiftPhase.UPSHIFT_FAST}),
    ShiftPhase.UPSHIFT_FAST: frozenset({ShiftPhase.UPSHIFT_SMOOTH}),
    ShiftPhase.UPSHIFT_SMOOTH: frozenset({ShiftPhase.UPSHIFT_FORCED}),
    ShiftPhase.UPSHIFT_FORCED: frozenset({ShiftPhase.STEADY_2}),
    ShiftPhase.STEADY_2: frozenset({ShiftPhase.DOWNSHIFT_FAST_1}),
    ShiftPhase.DOWNSHIFT_FAST_1: frozenset({ShiftPhase.DOWNSHIFT_SMOOTH_1}),
    ShiftPhase.DOWNSHIFT_SMOOTH_1: frozenset({ShiftPhase.DOWNSHIFT_FAST_2}),
    ShiftPhase.DOWNSHIFT_FAST_2: frozenset({ShiftPhase.DOWNSHIFT_SMOOTH_2}),
    ShiftPhase.DOWNSHIFT_SMOOTH_2: frozenset({ShiftPhase.DOWNSHIFT_FORCED}),
    ShiftPhase.DOWNSHIFT_FORCED: frozenset({ShiftPhase.STEADY_1}),
}


@dataclass(frozen=True)
class ControllerInputs:
    """What the controller sees on one tick.

    ``state`` carries the measured speeds and the realized actuator outputs.
    The accelerations are estimates built from speed samples only.
    """

    time: float
    td_target: float
    state: DrivetrainState
    request: ShiftDirection | None = None
    mode: ShiftMode = ShiftMode.POWERSHIFT
    slip_accel: float | None = None  # ω̇_s of the on-coming clutch
    shaft_accel: float = 0.0  # ω̇_v
    shaft_jerk: float = 0.0  # ω̈_v
    handover_fraction: float = 0.0


class SlipRateEstimator:
    """Filtered finite-difference rate estimate from a stream of samples.

    The first difference seeds the estimate; later differences pass through a
    first-order low-pass with time constant ``tau``.
    """

    def __init__(self, tau: float) -> None:
        self.tau = tau
        self._samples: deque[tuple[float, float]] = deque(maxlen=2)
        self._estimate: float | None = None

    @property
    def estimate(self) -> float | None:
        return self._estimate

    def prime(self, t: float, value: float, rate: float) -> None:
        """Start from a known sample and rate."""
        self._samples.clear()
        self._samples.append((t, value))
        self._estimate = rate

    def update(self, t: float, value: float) -> float | None:
        if self._samples:
            t_prev, value_prev = self._samples[-1]
            step = t - t_prev
            if step <= 0:
                return self._estimate
            raw = (value - value_prev) / step
            if self._estimate is None:
                self._estimate = raw
            else:
                self._estimate += (1.0 - math.exp(-step / self.tau)) * (raw - self._estimate)
        self._samples.append((t, value))
        return self._estimate


def estimate_slip_acceleration(samples: Iterable[tuple[float, float]], tau: float) -> float | None:
    """Rate estimate from ``(t, ω_s)`` samples; None with fewer than two samples."""
    estimator = SlipRateEstimator(tau)
    for t, value in samples:
        estimator.update(t, value)
    return estimator.estimate


def trigger_threshold(slip_accel_est: float, omega_target: float, gamma: float, theta_m: float) -> float:
    """Slip Ω₁ at which a critically damped glide reaches ``omega_target`` with slip acceleration ``gamma``."""
    return omega_target + 2.0 * theta_m * (gamma - slip_accel_est)


def smooth_trigger(
    omega_s: float,
    slip_accel_est: float,
    omega_target: float,
    gamma: float,
    theta_m: float,
) -> bool:
    """True once the slip has reached Ω₁ on its way toward ``omega_target``.

    ``gamma`` is signed: negative when the slip approaches the target from above.
    """
    threshold = trigger_threshold(slip_accel_est, omega_target, gamma, theta_m)
    heading = math.copysign(1.0, omega_target - omega_s) if omega_s != omega_target else 0.0
    return (omega_s - threshold) * heading >= 0.0


def smooth_slip_jerk(omega_s: float, omega_target: float, gamma: float, theta_m: float) -> float:
    """Critically damped slip law u = −λ²·(ω_s − Ω_target − γ/λ), λ = 1/(2θ_m)."""
    lam = 1.0 / (2.0 * theta_m)
    return -(lam**2) * (omega_s - omega_target - gamma / lam)


def shift_permitted(
    grade: float,
    velocity: float,
    request: ShiftDirection | None,
    policy: ShiftPolicy,
) -> ShiftMode:
    """Powershift only uphill at low speed; elsewhere a torque interruption is acceptable."""
    if request is None:
        return ShiftMode.DENY
    if grade > 0 and velocity < policy.max_velocity:
        return ShiftMode.POWERSHIFT
    return ShiftMode.SEQUENTIAL if policy.allow_sequential else ShiftMode.DENY


def select_phase(
    phase: ShiftPhase,
    inputs: ControllerInputs,
    cfg: ControllerConfig,
    params: VehicleParams,
) -> ShiftPhase:
    """Next controller phase; illegal requests leave the phase unchanged."""
    state = inputs.state
    theta_m = params.motor_time_const

    if phase.is_steady:
        if inputs.request is None or inputs.mode is ShiftMode.DENY:
            return phase
        if inputs.request is ShiftDirection.UP and phase is ShiftPhase.STEADY_1:
            if inputs.mode is ShiftMode.POWERSHIFT:
                return ShiftPhase.UPSHIFT_TORQUE
            return ShiftPhase.UPSHIFT_FAST
        if inputs.request is ShiftDirection.DOWN and phase is ShiftPhase.STEADY_2:
            return ShiftPhase.DOWNSHIFT_FAST_1
        return phase

    target = phase.target_gear
    slip = clutch_slip(state, target, params)
    slip_accel = inputs.slip_accel

    next_phase = phase
    match phase:
        case ShiftPhase.UPSHIFT_TORQUE:
            released = state.capacity(GearId.FIRST) < cfg.release_tol
            if inputs.handover_fraction >= 1.0 and released:
                next_phase = ShiftPhase.UPSHIFT_FAST
        case ShiftPhase.UPSHIFT_FAST:
            if slip_accel is not None and smooth_trigger(slip, slip_accel, 0.0, -cfg.gamma_2_2, theta_m):
                next_phase = ShiftPhase.UPSHIFT_SMOOTH
        case ShiftPhase.DOWNSHIFT_FAST_1:
            if slip_accel is not None and smooth_trigger(
                slip, slip_accel, cfg.omega_2, cfg.gamma_2_1, theta_m
            ):
                next_phase = ShiftPhase.DOWNSHIFT_SMOOTH_1
        case ShiftPhase.DOWNSHIFT_SMOOTH_1:
            if slip >= cfg.omega_2:
                next_phase = ShiftPhase.DOWNSHIFT_FAST_2
        case ShiftPhase.DOWNSHIFT_FAST_2:
            if (
                inputs.handover_fraction >= 1.0
                and slip_accel is not None
                and smooth_trigger(slip, slip_accel, 0.0, -cfg.gamma_2_2, theta_m)
            ):
                next_phase = ShiftPhase.DOWNSHIFT_SMOOTH_2
        case ShiftPhase.UPSHIFT_SMOOTH:
            if slip <= cfg.eps_slip:
                next_phase = ShiftPhase.UPSHIFT_FORCED
        case ShiftPhase.DOWNSHIFT_SMOOTH_2:
            if slip <= cfg.eps_slip:
                next_phase = ShiftPhase.DOWNSHIFT_FORCED
        case ShiftPhase.UPSHIFT_FORCED | ShiftPhase.DOWNSHIFT_FORCED:
            if state.engaged_clutch is target:
                demand = engaged_clutch_demand(target, state.motor_torque, inputs.shaft_accel, params)
                if engagement_holds(state.capacity(target), demand):
                    next_phase = ShiftPhase.steady(target)

    if next_phase is not phase and next_phase not in LEGAL_TRANSITIONS[phase]:
        raise PowershiftError(f"illegal phase transition {phase} -> {next_phase}")
    return next_phase


def _share(td_target: float, gear: GearId, params: VehicleParams) -> float:
    """Clutch torque that carries ``td_target`` through ``gear`` alone."""
    return td_target / (gear.overall_ratio(params) * params.final_drive_efficiency)


def _fill(td_target: float, offgoing: GearId, offgoing_torque: float, params: VehicleParams) -> float:
    """On-coming clutch torque making the pair deliver ``td_target``."""
    oncoming = offgoing.other()
    carried = td_target / (params.ratio_final * params.final_drive_efficiency)
    return max(0.0, (carried - offgoing_torque * offgoing.ratio(params)) / oncoming.ratio(params))


def _command(gear_torques: dict[GearId, float], motor: float) -> ControlCommand:
    return ControlCommand(
        motor=motor,
        clutch1=max(0.0, gear_torques.get(GearId.FIRST, 0.0)),
        clutch2=max(0.0, gear_torques.get(GearId.SECOND, 0.0)),
    )


def _clutch_torques(inputs: ControllerInputs, params: VehicleParams) -> dict[GearId, float]:
    """Transmitted clutch torques implied by the fed-back capacities and measured slips."""
    state = inputs.state
    torques = {
        gear: sliding_torque(state.capacity(gear), clutch_slip(state, gear, params))
        for gear in GearId
        if gear is not state.engaged_clutch
    }
    if state.engaged_clutch is not None:
        gear = state.engaged_clutch
        demand = engaged_clutch_demand(
            gear,
            state.motor_torque,
            inputs.shaft_accel,
            params,
            other_torque=torques[gear.other()],
        )
        capacity = state.capacity(gear)
        torques[gear] = min(max(demand, -capacity), capacity)
    return torques


def _clutch_rates(
    inputs: ControllerInputs, clutch_commands: dict[GearId, float], params: VehicleParams
) -> dict[GearId, float]:
    """Rates of the transmitted torques of sliding clutches under the new commands."""
    state = inputs.state
    rates = {}
    for gear in GearId:
        slip = clutch_slip(state, gear, params)
        if gear is state.engaged_clutch or slip == 0:
            rates[gear] = 0.0
            continue
        capacity_rate = (clutch_commands[gear] - state.capacity(gear)) / params.clutch_time_constant(gear)
        rates[gear] = math.copysign(1.0, slip) * capacity_rate
    return rates


def _slip_motor_command(
    inputs: ControllerInputs,
    target: GearId,
    slip_jerk: float,
    clutch_commands: dict[GearId, float],
    params: VehicleParams,
) -> float:
    """Motor command giving ω̈_s + ω̇_s/θ_m = ``slip_jerk`` through the motor lag."""
    ratio = target.overall_ratio(params)
    j_m = params.motor_inertia
    torque = sum(_clutch_torques(inputs, params).values())
    rate = sum(_clutch_rates(inputs, clutch_commands, params).values())
    return (
        torque
        + j_m * ratio * inputs.shaft_accel
        + params.motor_time_const * (rate + j_m * (slip_jerk + ratio * inputs.shaft_jerk))
    )


def steady_command(
    inputs: ControllerInputs, gear: GearId, cfg: ControllerConfig, params: VehicleParams
) -> ControlCommand:
    """Hold ``gear`` engaged while delivering the target drive torque."""
    share = _share(inputs.td_target, gear, params)
    motor = share + params.motor_inertia * gear.overall_ratio(params) * inputs.shaft_accel
    demand = engaged_clutch_demand(gear, inputs.state.motor_torque, inputs.shaft_accel, params)
    return _command({gear: cfg.safety_factor * max(abs(share), abs(demand))}, motor)


def torque_phase_command(
    inputs: ControllerInputs,
    elapsed: float | None,
    cfg: ControllerConfig,
    params: VehicleParams,
    *,
    entry_capacity: float | None = None,
) -> ControlCommand:
    """Upshift torque phase: hand the drive torque from clutch 1 to clutch 2.

    ``elapsed`` is the time since the handover ramp started, or None while
    clutch 1 is still being brought to slide. The off-going command ramps
    linearly from ``entry_capacity`` (its share by default) to zero and the
    on-coming command fills in so the pair delivers the target.
    """
    state = inputs.state
    share = max(0.0, _share(inputs.td_target, GearId.FIRST, params))
    a_1 = GearId.FIRST.overall_ratio(params)

    if elapsed is None:
        motor = share + params.motor_inertia * a_1 * inputs.shaft_accel
        clutch1 = share * (1.0 - BREAKAWAY_MARGIN) - cfg.release_tol
        return _command({GearId.FIRST: clutch1}, motor)

    start = share if entry_capacity is None else entry_capacity
    fraction = min(max(elapsed / cfg.handover_s, 0.0), 1.0)
    clutch1 = start * (1.0 - fraction)
    clutch2 = _fill(inputs.td_target, GearId.FIRST, clutch1, params)

    theta_m = params.motor_time_const
    j_m = params.motor_inertia
    motor = (
        state.motor_torque
        + theta_m / params.clutch_time_constant(GearId.FIRST) * (clutch1 - state.clutch1_capacity)
        + theta_m / params.clutch_time_constant(GearId.SECOND) * (clutch2 - state.clutch2_capacity)
        + theta_m * j_m * a_1 * inputs.shaft_jerk
        + cfg.dds_set * theta_m * j_m
    )
    return _command({GearId.FIRST: clutch1, GearId.SECOND: clutch2}, motor)


def inertia_phase_command(
    inputs: ControllerInputs,
    phase: ShiftPhase,
    cfg: ControllerConfig,
    params: VehicleParams,
) -> ControlCommand:
    """Fast and smooth inertia sub-phases of both shift directions."""
    target = phase.target_gear
    offgoing = target.other()
    td = inputs.td_target
    theta_m = params.motor_time_const
    slip = clutch_slip(inputs.state, target, params)

    if phase in (ShiftPhase.DOWNSHIFT_FAST_1, ShiftPhase.DOWNSHIFT_SMOOTH_1):
        clutches = {target: 0.0, offgoing: max(0.0, _share(td, offgoing, params))}
    elif phase is ShiftPhase.DOWNSHIFT_FAST_2:
        remaining = max(0.0, _share(td, offgoing, params)) * (1.0 - min(inputs.handover_fraction, 1.0))
        clutches = {offgoing: remaining, target: _fill(td, offgoing, remaining, params)}
    else:
        clutches = {target: max(0.0, _share(td, target, params)), offgoing: 0.0}

    match phase:
        case ShiftPhase.UPSHIFT_FAST | ShiftPhase.DOWNSHIFT_FAST_2:
            slip_jerk = -cfg.gamma_fast / theta_m
        case ShiftPhase.DOWNSHIFT_FAST_1:
            slip_jerk = cfg.gamma_fast / theta_m
        case ShiftPhase.DOWNSHIFT_SMOOTH_1:
            slip_jerk = smooth_slip_jerk(slip, cfg.omega_2, cfg.gamma_2_1, theta_m)
        case ShiftPhase.UPSHIFT_SMOOTH | ShiftPhase.DOWNSHIFT_SMOOTH_2:
            slip_jerk = smooth_slip_jerk(slip, 0.0, -cfg.gamma_2_2, theta_m)
        case _:
            raise ValueError(f"{phase} is not an inertia sub-phase")

    motor = _slip_motor_command(inputs, target, slip_jerk, clutches, params)
    return _command(clutches, motor)


def forced_engage_command(
    inputs: ControllerInputs,
    cfg: ControllerConfig,
    params: VehicleParams,
    gear: GearId,
) -> ControlCommand:
    """Lock ``gear`` and hold it with the safety margin.

    While the slip is still gliding in, the smooth law of the preceding phase
    stays in charge so the clutch locks with the slip acceleration it was
    calibrated for. Once the clutch is engaged, or the slip has passed zero
    without locking, its capacity is raised above the engaged-state demand
    by the safety factor and the motor returns to the steady command.
    """
    state = inputs.state
    gliding = clutch_slip(state, gear, params) >= -cfg.eps_slip
    if state.engaged_clutch is not gear and gliding:
        smooth = ShiftPhase.UPSHIFT_SMOOTH if gear is GearId.SECOND else ShiftPhase.DOWNSHIFT_SMOOTH_2
        return inertia_phase_command(inputs, smooth, cfg, params)

    offgoing = gear.other()
    offgoing_torque = sliding_torque(state.capacity(offgoing), clutch_slip(state, offgoing, params))
    demand = engaged_clutch_demand(
        gear, state.motor_torque, inputs.shaft_accel, params, other_torque=offgoing_torque
    )
    # Slid through: keep some capacity so the slip is pulled back to zero
    floor = 0.0 if state.engaged_clutch is gear else cfg.release_tol
    share = _share(inputs.td_target, gear, params)
    motor = share + params.motor_inertia * gear.overall_ratio(params) * inputs.shaft_accel
    return _command({gear: cfg.safety_factor * abs(demand) + floor, offgoing: 0.0}, motor)


@dataclass
class ShiftRecord:
    """One accepted shift request and when it completed."""

    direction: ShiftDirection
    mode: ShiftMode
    requested_at: float
    target_gear: GearId
    completed_at: float | None = None

    @property
    def duration(self) -> float | None:
        return None if self.completed_at is None else self.completed_at - self.requested_at


class PowershiftController:
    """Deterministic single-owner state machine ticked once per simulation step."""

    def __init__(
        self,
        scenario: Scenario,
        state: DrivetrainState,
        *,
        motor_accel: float = 0.0,
        shaft_accel: float = 0.0,
    ) -> None:
        self.scenario = scenario
        self.params = scenario.params
        self.cfg = scenario.controller
        self.phase = ShiftPhase.steady(state.active_gear)
        self.mode = ShiftMode.POWERSHIFT
        self.shifts: list[ShiftRecord] = []
        self.feasible = True
        self.last_command: ControlCommand | None = None

        self._limits = ActuatorBank.from_params(self.params, scenario.limits)
        self._phase_entered_at = state.time
        self._handover_started_at: float | None = None
        self._handover_entry_capacity: float | None = None

        self._slip_estimators = {gear: SlipRateEstimator(self.cfg.est_tau) for gear in GearId}
        for gear, estimator in self._slip_estimators.items():
            ratio = gear.overall_ratio(self.params)
            estimator.prime(state.time, clutch_slip(state, gear, self.params), motor_accel - ratio * shaft_accel)
        self._shaft_estimator = SlipRateEstimator(self.cfg.est_tau)
        self._shaft_estimator.prime(state.time, state.drive_shaft_speed, shaft_accel)
        self._shaft_accel = shaft_accel
        self._last_time = state.time

    def _observe(self, state: DrivetrainState) -> tuple[float, float]:
        """Update the estimators; returns (ω̇_v, ω̈_v) estimates."""
        for gear, estimator in self._slip_estimators.items():
            estimator.update(state.time, clutch_slip(state, gear, self.params))
        previous = self._shaft_accel
        estimate = self._shaft_estimator.update(state.time, state.drive_shaft_speed)
        shaft_accel = previous if estimate is None else estimate
        step = state.time - self._last_time
        jerk = (shaft_accel - previous) / step if step > 0 else 0.0
        self._shaft_accel = shaft_accel
        self._last_time = state.time
        return shaft_accel, jerk

    def _handover_fraction(self, t: float) -> float:
        if self._handover_started_at is None:
            return 0.0
        return min((t - self._handover_started_at) / self.cfg.handover_s, 1.0)

    def _enter(self, phase: ShiftPhase, t: float) -> None:
        logger.debug(f"t={t:.3f}s phase {self.phase} -> {phase}")
        self.phase = phase
        self._phase_entered_at = t
        self._handover_started_at = t if phase is ShiftPhase.DOWNSHIFT_FAST_2 else None
        self._handover_entry_capacity = None
        if phase.is_steady and self.shifts and self.shifts[-1].completed_at is None:
            record = self.shifts[-1]
            record.completed_at = t
            logger.info(f"t={t:.3f}s {record.direction}shift to gear {int(record.target_gear)} complete")

    def _accept_request(self, state: DrivetrainState, request: ShiftDirection | None) -> ShiftMode:
        if request is None:
            return self.mode
        if not self.phase.is_steady:
            logger.warning(f"t={state.time:.3f}s {request}shift request ignored during {self.phase}")
            return self.mode
        velocity = state.drive_shaft_speed * self.params.wheel_radius
        mode = shift_permitted(self.scenario.grade, velocity, request, self.scenario.policy)
        if mode is ShiftMode.DENY:
            logger.warning(f"t={state.time:.3f}s {request}shift request denied by shift policy")
        return mode

    def tick(
        self,
        state: DrivetrainState,
        td_target: float,
        request: ShiftDirection | None = None,
    ) -> ControlCommand:
        """Compute the actuator commands for this step."""
        t = state.time
        shaft_accel, shaft_jerk = self._observe(state)
        mode = self._accept_request(state, request)

        if self.phase is ShiftPhase.UPSHIFT_TORQUE and self._handover_started_at is None:
            slipping = clutch_slip(state, GearId.FIRST, self.params) > self.cfg.eps_slip
            if slipping or t - self._phase_entered_at >= self.cfg.handover_s:
                self._handover_started_at = t
                if self.last_command is not None:
                    self._handover_entry_capacity = self.last_command.clutch1

        def inputs_for(phase: ShiftPhase) -> ControllerInputs:
            sequential = self.mode is ShiftMode.SEQUENTIAL and not phase.is_steady
            return ControllerInputs(
                time=t,
                td_target=0.0 if sequential else td_target,
                state=state,
                request=request if self.phase.is_steady else None,
                mode=mode,
                slip_accel=self._slip_estimators[phase.target_gear].estimate,
                shaft_accel=shaft_accel,
                shaft_jerk=shaft_jerk,
                handover_fraction=self._handover_fraction(t),
            )

        previous_phase = self.phase
        next_phase = select_phase(self.phase, inputs_for(self.phase), self.cfg, self.params)
        if next_phase is not previous_phase:
            if previous_phase.is_steady:
                self.mode = mode
                direction = ShiftDirection.UP if next_phase.is_upshift else ShiftDirection.DOWN
                self.shifts.append(ShiftRecord(direction, mode, t, next_phase.target_gear))
                logger.info(f"t={t:.3f}s {direction}shift started ({mode})")
            self._enter(next_phase, t)
        elif request is not None and previous_phase.is_steady and mode is not ShiftMode.DENY:
            logger.warning(f"t={t:.3f}s {request}shift request rejected in {previous_phase}")

        command = self._rate_limited(self._command_for(inputs_for(self.phase)))
        command, within_limits = self._limits.clamp(command)
        if not within_limits and self.feasible:
            logger.warning(f"t={t:.3f}s command saturated in {self.phase}; run marked infeasible")
            self.feasible = False
        self.last_command = command
        return command

    def _command_for(self, inputs: ControllerInputs) -> ControlCommand:
        phase = self.phase
        if phase.is_steady:
            return steady_command(inputs, phase.target_gear, self.cfg, self.params)
        if phase is ShiftPhase.UPSHIFT_TORQUE:
            elapsed = None if self._handover_started_at is None else inputs.time - self._handover_started_at
            return torque_phase_command(
                inputs, elapsed, self.cfg, self.params, entry_capacity=self._handover_entry_capacity
            )
        if phase.is_forced:
            return forced_engage_command(inputs, self.cfg, self.params, phase.target_gear)
        return inertia_phase_command(inputs, phase, self.cfg, self.params)

    def _rate_limited(self, command: ControlCommand) -> ControlCommand:
        if self.last_command is None:
            return command
        step = self.cfg.rate_limit * self.scenario.dt

        def limit(new: float, old: float) -> float:
            return old + min(max(new - old, -step), step)

        previous = self.last_command
        return ControlCommand(
            motor=limit(command.motor, previous.motor),
            clutch1=limit(command.clutch1, previous.clutch1),
            clutch2=limit(command.clutch2, previous.clutch2),
        )
