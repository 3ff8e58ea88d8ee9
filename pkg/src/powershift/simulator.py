"""Fixed-step closed-loop simulation with clutch stick/slip events.

Each step advances the actuators along their exact first-order trajectories
and integrates the active regime with classical RK4. A sliding clutch whose
slip crosses zero is located by bisection; it locks if its capacity covers
the engaged-state demand and otherwise slides through. An engaged clutch
breaks away when the demand exceeds its capacity.
"""

import math
from collections import deque
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from powershift.actuators import ActuatorBank
from powershift.controller import PowershiftController, ShiftPhase, ShiftRecord
from powershift.drivetrain import (
    clutch_slip,
    drive_torque,
    dynamics_engaged,
    dynamics_free,
    engaged_clutch_demand,
    engagement_holds,
    primary_speed,
    sliding_torque,
    torque_drop_at_engagement,
)
from powershift.errors import DomainError, SimulationFault
from powershift.logging import logger
from powershift.models import ControlCommand, DrivetrainState, GearId, Scenario

GRAVITY = 9.81
SLIP_TOL = 1e-6  # rad/s
MAX_BISECTIONS = 200
MAX_SEGMENTS = 16

TRACE_COLUMNS = (
    "t",
    "omega_m",
    "omega_v",
    "omega_s1",
    "omega_s2",
    "T_m",
    "T_c1",
    "T_c2",
    "Tp_m",
    "Tp_c1",
    "Tp_c2",
    "T_d",
    "T_d_target",
    "phase",
)


def resistance_torque(omega_v: float, scenario: Scenario) -> float:
    """Aerodynamic drag, grade and constant load reflected to the drive shaft."""
    params = scenario.params
    speed = omega_v * params.wheel_radius
    drag = 0.5 * params.air_density * params.drag_coeff * params.reference_area * speed**2
    if omega_v < 0:
        drag = -drag
    grade = params.vehicle_mass * GRAVITY * math.sin(scenario.grade)
    return (drag + grade) * params.wheel_radius + scenario.load


@dataclass(frozen=True)
class EngagementEvent:
    """A clutch locking up ("lock") or breaking away ("release") inside a step."""

    time: float
    gear: GearId
    kind: str
    drive_torque_before: float
    drive_torque_after: float
    slip_accel_before: float = 0.0
    predicted_step: float | None = None

    @property
    def torque_step(self) -> float:
        return self.drive_torque_after - self.drive_torque_before


@dataclass(frozen=True)
class PlantRates:
    """Accelerations and transmitted torques of the plant at one instant."""

    motor_accel: float
    shaft_accel: float
    clutch_torques: dict[GearId, float]
    resistance: float


@dataclass(frozen=True)
class PowerBalance:
    """Instantaneous power flows in W; ``residual`` is zero for a consistent plant."""

    motor: float
    drive: float
    friction: float
    final_drive_loss: float
    kinetic_rate: float

    @property
    def residual(self) -> float:
        return self.motor - self.drive - self.friction - self.final_drive_loss - self.kinetic_rate


def _sign(value: float) -> int:
    return (value > 0) - (value < 0)


def _slip_direction(slip: float) -> int:
    """Sign of a slip outside the zero band; 0 inside it."""
    return _sign(slip) if abs(slip) > SLIP_TOL else 0


def _rk4(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Step:
    """Plant equations for one step under a fixed command; time is measured from the step start."""

    def __init__(self, state: DrivetrainState, command: ControlCommand, scenario: Scenario) -> None:
        self.scenario = scenario
        self.params = scenario.params
        self.t0 = state.time
        self.bank = ActuatorBank.from_params(
            self.params,
            scenario.limits,
            (state.motor_torque, state.clutch1_capacity, state.clutch2_capacity),
        )
        self.command, _ = self.bank.clamp(command)
        self.ratio = {gear: gear.overall_ratio(self.params) for gear in GearId}

    def actuators(self, tau: float) -> tuple[float, dict[GearId, float]]:
        motor, clutch1, clutch2 = self.bank.outputs_after(self.command, tau)
        return motor, {GearId.FIRST: clutch1, GearId.SECOND: clutch2}

    def slip(self, y: np.ndarray, gear: GearId) -> float:
        return float(y[0] - self.ratio[gear] * y[1])

    # Free regime, y = (ω_m, ω_v)
    def free_torques(self, tau: float, directions: dict[GearId, int]) -> tuple[float, dict[GearId, float]]:
        motor, capacity = self.actuators(tau)
        return motor, {gear: directions[gear] * capacity[gear] for gear in GearId}

    def free_rates(self, directions: dict[GearId, int]) -> Callable[[float, np.ndarray], np.ndarray]:
        def rates(tau: float, y: np.ndarray) -> np.ndarray:
            motor, torques = self.free_torques(tau, directions)
            resistance = resistance_torque(float(y[1]), self.scenario)
            return np.array(
                dynamics_free(motor, torques[GearId.FIRST], torques[GearId.SECOND], resistance, self.params)
            )

        return rates

    # Engaged regime, y = (ω_v,)
    def other_torque(self, tau: float, omega_v: float, gear: GearId) -> float:
        _, capacity = self.actuators(tau)
        other = gear.other()
        slip = (self.ratio[gear] - self.ratio[other]) * omega_v
        return sliding_torque(capacity[other], slip)

    def engaged_rates(self, gear: GearId) -> Callable[[float, np.ndarray], np.ndarray]:
        def rates(tau: float, y: np.ndarray) -> np.ndarray:
            motor, _ = self.actuators(tau)
            omega_v = float(y[0])
            resistance = resistance_torque(omega_v, self.scenario)
            other = self.other_torque(tau, omega_v, gear)
            return np.array([dynamics_engaged(gear, motor, resistance, self.params, other_torque=other)])

        return rates

    def engaged_demand(self, tau: float, omega_v: float, gear: GearId, other_torque: float | None = None) -> float:
        motor, _ = self.actuators(tau)
        if other_torque is None:
            other_torque = self.other_torque(tau, omega_v, gear)
        resistance = resistance_torque(omega_v, self.scenario)
        shaft_accel = dynamics_engaged(gear, motor, resistance, self.params, other_torque=other_torque)
        return engaged_clutch_demand(gear, motor, shaft_accel, self.params, other_torque=other_torque)

    def margin(self, tau: float, omega_v: float, gear: GearId) -> float:
        _, capacity = self.actuators(tau)
        return capacity[gear] - abs(self.engaged_demand(tau, omega_v, gear))

    def fault(self, message: str, tau: float, **record: object) -> SimulationFault:
        return SimulationFault(message, time=self.t0 + tau, record={"command": asdict(self.command), **record})


def integrate_step(
    state: DrivetrainState,
    command: ControlCommand,
    scenario: Scenario,
    *,
    events: list[EngagementEvent] | None = None,
) -> DrivetrainState:
    """Advance the plant by one ``scenario.dt`` under ``command``.

    Lock-up and break-away events found inside the step are appended to
    ``events`` when a list is given.
    """
    step = _Step(state, command, scenario)
    params = scenario.params
    dt = scenario.dt
    tau = 0.0
    engaged = state.engaged_clutch
    y = np.array([state.motor_speed, state.drive_shaft_speed])
    directions = {gear: _slip_direction(clutch_slip(state, gear, params)) for gear in GearId}
    released: set[GearId] = set()

    def emit(event: EngagementEvent) -> None:
        logger.debug(
            f"t={event.time:.4f}s clutch {int(event.gear)} {event.kind} "
            f"(drive torque step {event.torque_step:+.2f} N·m)"
        )
        if events is not None:
            events.append(event)

    for _ in range(MAX_SEGMENTS):
        remaining = dt - tau
        if remaining <= 1e-15:
            break

        if engaged is None:
            engaged = _resolve_zero_slip(step, tau, y, directions, released, emit)

        if engaged is not None:
            gear = engaged
            omega_v = float(y[1])
            if step.margin(tau, omega_v, gear) < 0:
                hit, end = 0.0, np.array([omega_v])
            else:
                rates = step.engaged_rates(gear)
                end = _rk4(rates, tau, np.array([omega_v]), remaining)
                if step.margin(tau + remaining, float(end[0]), gear) >= 0:
                    y = np.array([primary_speed(float(end[0]), gear, params), float(end[0])])
                    tau = dt
                    break
                hit, end = _bisect_release(step, rates, tau, omega_v, remaining, gear)
            tau += hit
            omega_v = float(end[0])
            demand = step.engaged_demand(tau, omega_v, gear)
            _, capacity = step.actuators(tau)
            other = gear.other()
            other_torque = step.other_torque(tau, omega_v, gear)
            direction = _sign(demand) or 1
            before = {gear: demand, other: other_torque}
            after = {gear: direction * capacity[gear], other: other_torque}
            emit(
                EngagementEvent(
                    time=state.time + tau,
                    gear=gear,
                    kind="release",
                    drive_torque_before=drive_torque(before[GearId.FIRST], before[GearId.SECOND], params),
                    drive_torque_after=drive_torque(after[GearId.FIRST], after[GearId.SECOND], params),
                )
            )
            directions[gear] = direction
            directions[other] = _sign(other_torque) or directions[other]
            released.add(gear)
            engaged = None
            y = np.array([primary_speed(omega_v, gear, params), omega_v])
            continue

        rates = step.free_rates(dict(directions))
        end = _rk4(rates, tau, y, remaining)
        crossings = [
            gear
            for gear in GearId
            if directions[gear] != 0 and step.slip(end, gear) * directions[gear] < -SLIP_TOL
        ]
        if not crossings:
            y = end
            tau = dt
            break
        hit, y = min(
            (_bisect_crossing(step, rates, tau, y, remaining, gear, directions[gear]) for gear in crossings),
            key=lambda found: found[0],
        )
        tau += hit
    else:
        raise step.fault("too many stick/slip events in one step", tau, engaged=str(engaged))

    # A slip that ends the step inside the zero band locks now, not on the next tick
    if engaged is None and np.all(np.isfinite(y)):
        engaged = _resolve_zero_slip(step, dt, y, directions, released, emit)
        if engaged is not None:
            y = np.array([primary_speed(float(y[1]), engaged, params), float(y[1])])

    if not np.all(np.isfinite(y)):
        raise step.fault("non-finite plant state", tau, motor_speed=float(y[0]), drive_shaft_speed=float(y[1]))

    motor, clutch1, clutch2 = step.bank.outputs_after(step.command, dt)
    return DrivetrainState(
        motor_speed=float(y[0]),
        drive_shaft_speed=float(y[1]),
        motor_torque=motor,
        clutch1_capacity=clutch1,
        clutch2_capacity=clutch2,
        engaged_clutch=engaged,
        active_gear=engaged if engaged is not None else state.active_gear,
        time=state.time + dt,
    )


def _resolve_zero_slip(
    step: _Step,
    tau: float,
    y: np.ndarray,
    directions: dict[GearId, int],
    released: set[GearId],
    emit: Callable[[EngagementEvent], None],
) -> GearId | None:
    """Lock a clutch sitting at zero slip if it can hold, else pick its slip direction."""
    params = step.params
    for gear in GearId:
        if abs(step.slip(y, gear)) > SLIP_TOL or gear in released:
            continue
        other = gear.other()
        omega_v = float(y[1])
        motor, capacity = step.actuators(tau)
        other_slip = (step.ratio[gear] - step.ratio[other]) * omega_v
        other_torque = sliding_torque(capacity[other], other_slip, directions[other])
        demand = step.engaged_demand(tau, omega_v, gear, other_torque)
        if engagement_holds(capacity[gear], demand):
            # Without a known approach the clutch was sliding through toward its demand
            approach = directions[gear] or _sign(demand) or 1
            pre = {gear: approach * capacity[gear], other: other_torque}
            resistance = resistance_torque(omega_v, step.scenario)
            motor_accel, shaft_accel = dynamics_free(
                motor, pre[GearId.FIRST], pre[GearId.SECOND], resistance, params
            )
            after = {gear: demand, other: other_torque}
            slip_accel = motor_accel - step.ratio[gear] * shaft_accel
            emit(
                EngagementEvent(
                    time=step.t0 + tau,
                    gear=gear,
                    kind="lock",
                    drive_torque_before=drive_torque(pre[GearId.FIRST], pre[GearId.SECOND], params),
                    drive_torque_after=drive_torque(after[GearId.FIRST], after[GearId.SECOND], params),
                    slip_accel_before=slip_accel,
                    predicted_step=torque_drop_at_engagement(slip_accel, gear, params),
                )
            )
            return gear
        directions[gear] = _sign(demand) or directions[gear]
    return None


def _bisect_crossing(
    step: _Step,
    rates: Callable[[float, np.ndarray], np.ndarray],
    tau: float,
    y: np.ndarray,
    span: float,
    gear: GearId,
    direction: int,
) -> tuple[float, np.ndarray]:
    """Sub-step length at which the slip of ``gear`` reaches zero within SLIP_TOL."""
    lo, hi = 0.0, span
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        y_mid = _rk4(rates, tau, y, mid)
        signed = step.slip(y_mid, gear) * direction
        if abs(signed) <= SLIP_TOL or hi - lo < 1e-15:
            return mid, y_mid
        if signed > 0:
            lo = mid
        else:
            hi = mid
    raise step.fault("slip zero crossing did not converge", tau, gear=int(gear))


def _bisect_release(
    step: _Step,
    rates: Callable[[float, np.ndarray], np.ndarray],
    tau: float,
    omega_v: float,
    span: float,
    gear: GearId,
) -> tuple[float, np.ndarray]:
    """Sub-step length at which the engaged clutch's demand first exceeds its capacity."""
    lo, hi = 0.0, span
    y0 = np.array([omega_v])
    y_hi = _rk4(rates, tau, y0, hi)
    for _ in range(MAX_BISECTIONS):
        if hi - lo < 1e-12:
            break
        mid = 0.5 * (lo + hi)
        y_mid = _rk4(rates, tau, y0, mid)
        if step.margin(tau + mid, float(y_mid[0]), gear) >= 0:
            lo = mid
        else:
            hi, y_hi = mid, y_mid
    return hi, y_hi


def plant_rates(state: DrivetrainState, scenario: Scenario) -> PlantRates:
    """Accelerations and transmitted clutch torques of ``state``."""
    params = scenario.params
    resistance = resistance_torque(state.drive_shaft_speed, scenario)
    motor = state.motor_torque
    torques: dict[GearId, float] = {}
    engaged = state.engaged_clutch
    for gear in GearId:
        if gear is not engaged:
            torques[gear] = sliding_torque(state.capacity(gear), clutch_slip(state, gear, params))
    if engaged is None:
        # Inside the zero band a sliding clutch transmits toward its engaged demand
        for gear in GearId:
            if abs(clutch_slip(state, gear, params)) <= SLIP_TOL:
                other_torque = torques[gear.other()]
                shaft_accel = dynamics_engaged(gear, motor, resistance, params, other_torque=other_torque)
                demand = engaged_clutch_demand(gear, motor, shaft_accel, params, other_torque=other_torque)
                torques[gear] = sliding_torque(state.capacity(gear), 0.0, _sign(demand))
    if engaged is not None:
        other_torque = torques[engaged.other()]
        shaft_accel = dynamics_engaged(engaged, motor, resistance, params, other_torque=other_torque)
        torques[engaged] = engaged_clutch_demand(engaged, motor, shaft_accel, params, other_torque=other_torque)
        motor_accel = engaged.overall_ratio(params) * shaft_accel
    else:
        motor_accel, shaft_accel = dynamics_free(
            motor, torques[GearId.FIRST], torques[GearId.SECOND], resistance, params
        )
    return PlantRates(motor_accel, shaft_accel, torques, resistance)


def transmitted_torques(state: DrivetrainState, scenario: Scenario) -> tuple[dict[GearId, float], float]:
    """Torque each clutch actually transmits and the resulting drive torque T_d."""
    torques = plant_rates(state, scenario).clutch_torques
    return torques, drive_torque(torques[GearId.FIRST], torques[GearId.SECOND], scenario.params)


def power_balance(state: DrivetrainState, scenario: Scenario) -> PowerBalance:
    """Motor power split into load, clutch friction, final-drive loss and kinetic energy rate."""
    params = scenario.params
    rates = plant_rates(state, scenario)
    eta = params.final_drive_efficiency
    friction = sum(rates.clutch_torques[gear] * clutch_slip(state, gear, params) for gear in GearId)
    transmitted = sum(
        rates.clutch_torques[gear] * gear.overall_ratio(params) * state.drive_shaft_speed for gear in GearId
    )
    return PowerBalance(
        motor=state.motor_torque * state.motor_speed,
        drive=rates.resistance * state.drive_shaft_speed,
        friction=friction,
        final_drive_loss=(1.0 - eta) * transmitted,
        kinetic_rate=params.motor_inertia * state.motor_speed * rates.motor_accel
        + params.vehicle_inertia * state.drive_shaft_speed * rates.shaft_accel,
    )


def initial_state(scenario: Scenario) -> tuple[DrivetrainState, PlantRates]:
    """Engaged steady operating point delivering the initial drive-torque target."""
    params = scenario.params
    gear = scenario.initial_gear
    ratio = gear.overall_ratio(params)
    omega_v = scenario.initial_velocity / params.wheel_radius
    resistance = resistance_torque(omega_v, scenario)
    share = scenario.td_target(0.0) / (ratio * params.final_drive_efficiency)
    reflected = params.vehicle_inertia + params.motor_inertia * ratio**2 * params.final_drive_efficiency
    motor = (share * reflected - params.motor_inertia * ratio * resistance) / params.vehicle_inertia
    capacity = scenario.controller.safety_factor * abs(share)
    if abs(motor) > scenario.limits.motor_torque_max or capacity > scenario.limits.clutch_capacity_max:
        raise DomainError(
            f"initial operating point (motor {motor:.1f} N·m, clutch {capacity:.1f} N·m) exceeds actuator limits",
            field="td_target",
        )
    state = DrivetrainState(
        motor_speed=primary_speed(omega_v, gear, params),
        drive_shaft_speed=omega_v,
        motor_torque=motor,
        clutch1_capacity=capacity if gear is GearId.FIRST else 0.0,
        clutch2_capacity=capacity if gear is GearId.SECOND else 0.0,
        engaged_clutch=gear,
        active_gear=gear,
    )
    return state, plant_rates(state, scenario)


@dataclass(frozen=True)
class TraceRecord:
    """One row of the trace; field names are the CSV column names."""

    t: float
    omega_m: float
    omega_v: float
    omega_s1: float
    omega_s2: float
    T_m: float
    T_c1: float
    T_c2: float
    Tp_m: float
    Tp_c1: float
    Tp_c2: float
    T_d: float
    T_d_target: float
    phase: str


@dataclass
class Trace:
    """Time series of a run plus its engagement events and shift records."""

    scenario_name: str
    dt: float
    records: list[TraceRecord] = field(default_factory=list)
    events: list[EngagementEvent] = field(default_factory=list)
    shifts: list[ShiftRecord] = field(default_factory=list)
    feasible: bool = True

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise KeyError(name)
        values = [getattr(record, name) for record in self.records]
        return np.array(values, dtype=object if name == "phase" else float)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(record) for record in self.records], columns=list(TRACE_COLUMNS))

    def shift_window(self, index: int = 0) -> tuple[float, float] | None:
        """Request time to completion (or trace end) of the ``index``-th shift."""
        if index >= len(self.shifts) or not self.records:
            return None
        shift = self.shifts[index]
        end = shift.completed_at if shift.completed_at is not None else self.records[-1].t
        return shift.requested_at, end


def _record(
    state: DrivetrainState,
    command: ControlCommand,
    td_target: float,
    phase: ShiftPhase,
    scenario: Scenario,
) -> TraceRecord:
    params = scenario.params
    _, drive = transmitted_torques(state, scenario)
    return TraceRecord(
        t=state.time,
        omega_m=state.motor_speed,
        omega_v=state.drive_shaft_speed,
        omega_s1=clutch_slip(state, GearId.FIRST, params),
        omega_s2=clutch_slip(state, GearId.SECOND, params),
        T_m=state.motor_torque,
        T_c1=state.clutch1_capacity,
        T_c2=state.clutch2_capacity,
        Tp_m=command.motor,
        Tp_c1=command.clutch1,
        Tp_c2=command.clutch2,
        T_d=drive,
        T_d_target=td_target,
        phase=str(phase),
    )


def run(scenario: Scenario) -> Trace:
    """Simulate ``scenario`` for its full duration; identical scenarios give identical traces."""
    if scenario.steps == 0:
        raise DomainError(
            f"duration ({scenario.duration:g}s) is shorter than one step of {scenario.dt:g}s", field="duration"
        )
    with logger.contextualize(scenario=scenario.name):
        state, rates = initial_state(scenario)
        controller = PowershiftController(
            scenario, state, motor_accel=rates.motor_accel, shaft_accel=rates.shaft_accel
        )
        pending = deque(sorted(scenario.shifts, key=lambda event: event.time))
        trace = Trace(scenario_name=scenario.name, dt=scenario.dt)
        logger.info(f"Simulating {scenario.duration:g}s at dt={scenario.dt:g}s ({scenario.steps} steps)")

        for k in range(scenario.steps):
            t = k * scenario.dt
            state = replace(state, time=t)
            request = None
            if pending and pending[0].time <= t + 0.5 * scenario.dt:
                request = pending.popleft().direction
            td_target = scenario.td_target(t)
            command = controller.tick(state, td_target, request)
            trace.records.append(_record(state, command, td_target, controller.phase, scenario))
            try:
                state = integrate_step(state, command, scenario, events=trace.events)
            except SimulationFault as fault:
                trace.shifts = controller.shifts
                trace.feasible = controller.feasible
                fault.record.setdefault("phase", str(controller.phase))
                fault.trace = trace
                logger.error(f"Simulation fault: {fault}")
                raise

        trace.shifts = controller.shifts
        trace.feasible = controller.feasible
        logger.info(f"Finished with {len(trace.events)} engagement events, phase {controller.phase}")
        return trace
