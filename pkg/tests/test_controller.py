"""Tests for the phase selector, command laws and controller state machine."""

import math
from dataclasses import replace

import pytest

from powershift.controller import (
    BREAKAWAY_MARGIN,
    LEGAL_TRANSITIONS,
    ControllerInputs,
    PowershiftController,
    ShiftPhase,
    SlipRateEstimator,
    estimate_slip_acceleration,
    forced_engage_command,
    inertia_phase_command,
    select_phase,
    shift_permitted,
    smooth_slip_jerk,
    smooth_trigger,
    steady_command,
    torque_phase_command,
    trigger_threshold,
)
from powershift.drivetrain import drive_torque, engaged_clutch_demand
from powershift.errors import PowershiftError
from powershift.models import (
    ActuatorLimits,
    ControllerConfig,
    DrivetrainState,
    GearId,
    Scenario,
    ShiftDirection,
    ShiftMode,
    ShiftPolicy,
    TorqueProfile,
    VehicleParams,
)
from powershift.simulator import initial_state

CFG = ControllerConfig()


def _state(
    params: VehicleParams,
    *,
    slip: float = 0.0,
    gear: GearId = GearId.FIRST,
    shaft_speed: float = 2.0,
    motor_torque: float = 0.0,
    capacities: tuple[float, float] = (0.0, 0.0),
    engaged: GearId | None = None,
    active: GearId = GearId.FIRST,
) -> DrivetrainState:
    """State whose slip against ``gear`` is ``slip``."""
    return DrivetrainState(
        motor_speed=gear.overall_ratio(params) * shaft_speed + slip,
        drive_shaft_speed=shaft_speed,
        motor_torque=motor_torque,
        clutch1_capacity=capacities[0],
        clutch2_capacity=capacities[1],
        engaged_clutch=engaged,
        active_gear=active,
    )


def _inputs(state: DrivetrainState, **kwargs: object) -> ControllerInputs:
    values: dict = {"time": 1.0, "td_target": 2600.0, "state": state}
    values.update(kwargs)
    return ControllerInputs(**values)


# Trigger and smooth law


def test_trigger_threshold_example() -> None:
    """Ω₁ shifts away from the target by 2θ_m times the slip-acceleration surplus."""
    assert trigger_threshold(-30.0, 5.0, -10.0, 0.08) == pytest.approx(8.2)


def test_trigger_fires_at_target_when_already_at_arrival_rate() -> None:
    """With the estimate equal to γ the trigger coincides with the target."""
    assert smooth_trigger(5.0, -10.0, 5.0, -10.0, 0.08)
    assert not smooth_trigger(5.1, -10.0, 5.0, -10.0, 0.08)


def test_trigger_boundary_case_fires() -> None:
    """A slip sitting exactly on Ω₁ fires."""
    theta_m, target, gamma, slip = 0.125, 4.0, -10.0, 12.0
    estimate = gamma - (slip - target) / (2 * theta_m)
    assert smooth_trigger(slip, estimate, target, gamma, theta_m)


def test_trigger_from_below() -> None:
    """A rising slip fires once it passes Ω₁ below the target."""
    threshold = trigger_threshold(50.0, 30.0, 10.0, 0.08)
    assert threshold == pytest.approx(30.0 - 6.4)
    assert not smooth_trigger(threshold - 0.5, 50.0, 30.0, 10.0, 0.08)
    assert smooth_trigger(threshold + 0.5, 50.0, 30.0, 10.0, 0.08)


def test_smooth_slip_jerk_examples() -> None:
    """The smooth law is zero at its null and scales with λ² = 1/(4θ_m²)."""
    lam = 1 / (2 * 0.08)
    assert smooth_slip_jerk(0.0 + -1.0 / lam, 0.0, -1.0, 0.08) == pytest.approx(0.0, abs=1e-12)
    assert smooth_slip_jerk(1.0 - 1.0 / lam, 0.0, -1.0, 0.08) == pytest.approx(-39.0625)


def test_smooth_glide_arrives_with_prescribed_slip_acceleration() -> None:
    """Started on Ω₁, the critically damped glide reaches the target at slip acceleration γ."""
    theta_m, target, gamma, fast = 0.08, 0.0, -1.0, -50.0
    slip, rate = trigger_threshold(fast, target, gamma, theta_m), fast
    h = 1e-4

    def accel(x: float, v: float) -> float:
        return smooth_slip_jerk(x, target, gamma, theta_m) - v / theta_m

    for _ in range(20000):
        k1x, k1v = rate, accel(slip, rate)
        k2x, k2v = rate + h / 2 * k1v, accel(slip + h / 2 * k1x, rate + h / 2 * k1v)
        k3x, k3v = rate + h / 2 * k2v, accel(slip + h / 2 * k2x, rate + h / 2 * k2v)
        k4x, k4v = rate + h * k3v, accel(slip + h * k3x, rate + h * k3v)
        next_slip = slip + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        next_rate = rate + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        assert next_rate <= 0.0
        if next_slip <= target:
            break
        slip, rate = next_slip, next_rate
    else:
        pytest.fail("glide never reached the target")
    assert rate == pytest.approx(gamma, rel=0.01)


# Estimator


def test_estimator_constant_signal() -> None:
    """A constant slip has zero slip acceleration."""
    samples = [(k * 1e-3, 4.2) for k in range(20)]
    assert estimate_slip_acceleration(samples, 0.005) == pytest.approx(0.0, abs=1e-12)


def test_estimator_ramp() -> None:
    """A linear slip is differentiated to its slope."""
    samples = [(k * 1e-3, 3.0 * k * 1e-3 + 1.0) for k in range(40)]
    assert estimate_slip_acceleration(samples, 0.005) == pytest.approx(3.0, rel=0.02)


def test_estimator_sine_within_lag_bound() -> None:
    """A slow sine is differentiated up to the filter's phase lag."""
    omega, tau, dt = 2.0, 0.005, 1e-3
    samples = [(k * dt, math.sin(omega * k * dt)) for k in range(2001)]
    t_end = samples[-1][0]
    assert estimate_slip_acceleration(samples, tau) == pytest.approx(
        omega * math.cos(omega * (t_end - tau)), abs=omega**2 * dt
    )


def test_estimator_needs_two_samples() -> None:
    """A single sample gives no estimate."""
    assert estimate_slip_acceleration([(0.0, 1.0)], 0.005) is None
    estimator = SlipRateEstimator(0.005)
    assert estimator.update(0.0, 1.0) is None
    assert estimator.update(0.001, 1.002) == pytest.approx(2.0)


def test_estimator_prime_seeds_rate() -> None:
    """Priming supplies the rate before any difference is available."""
    estimator = SlipRateEstimator(0.005)
    estimator.prime(0.0, 1.0, -7.0)
    assert estimator.estimate == -7.0


# Shift management


@pytest.mark.parametrize(
    ("grade", "velocity", "expected"),
    [(0.05, 1.0, ShiftMode.POWERSHIFT), (0.0, 5.0, ShiftMode.SEQUENTIAL), (0.05, 2.0, ShiftMode.SEQUENTIAL)],
)
def test_shift_permitted(grade: float, velocity: float, expected: ShiftMode) -> None:
    """Powershifts are reserved for slow uphill driving."""
    assert shift_permitted(grade, velocity, ShiftDirection.UP, ShiftPolicy(max_velocity=2.0)) is expected


def test_shift_permitted_denies_without_sequential() -> None:
    """A policy without sequential shifts denies what it cannot powershift."""
    policy = ShiftPolicy(allow_sequential=False)
    assert shift_permitted(0.0, 1.0, ShiftDirection.DOWN, policy) is ShiftMode.DENY
    assert shift_permitted(0.05, 1.0, None, policy) is ShiftMode.DENY


# Phase selector


def test_select_phase_up_request(params: VehicleParams) -> None:
    """An up request leaves Steady1 for the torque phase, or straight for the inertia phase when sequential."""
    state = _state(params, engaged=GearId.FIRST)
    up = _inputs(state, request=ShiftDirection.UP)
    assert select_phase(ShiftPhase.STEADY_1, up, CFG, params) is ShiftPhase.UPSHIFT_TORQUE
    sequential = replace(up, mode=ShiftMode.SEQUENTIAL)
    assert select_phase(ShiftPhase.STEADY_1, sequential, CFG, params) is ShiftPhase.UPSHIFT_FAST
    denied = replace(up, mode=ShiftMode.DENY)
    assert select_phase(ShiftPhase.STEADY_1, denied, CFG, params) is ShiftPhase.STEADY_1


def test_select_phase_rejects_illegal_request(params: VehicleParams) -> None:
    """A down request in first gear leaves the phase unchanged."""
    state = _state(params, engaged=GearId.FIRST)
    down = _inputs(state, request=ShiftDirection.DOWN)
    assert select_phase(ShiftPhase.STEADY_1, down, CFG, params) is ShiftPhase.STEADY_1


def test_select_phase_cross_shift_starts_at_window(params: VehicleParams) -> None:
    """The cross-shift begins when the slip first reaches Ω₂."""
    below = _inputs(_state(params, slip=29.5, capacities=(0.0, 120.0)), slip_accel=10.0)
    assert select_phase(ShiftPhase.DOWNSHIFT_SMOOTH_1, below, CFG, params) is ShiftPhase.DOWNSHIFT_SMOOTH_1
    reached = _inputs(_state(params, slip=30.5, capacities=(0.0, 120.0)), slip_accel=10.0)
    assert select_phase(ShiftPhase.DOWNSHIFT_SMOOTH_1, reached, CFG, params) is ShiftPhase.DOWNSHIFT_FAST_2


def test_select_phase_second_smooth_waits_for_handover(params: VehicleParams) -> None:
    """The final glide starts only after the cross-shift handover is complete."""
    state = _state(params, slip=0.5, capacities=(100.0, 0.0))
    pending = _inputs(state, slip_accel=-50.0, handover_fraction=0.5)
    assert select_phase(ShiftPhase.DOWNSHIFT_FAST_2, pending, CFG, params) is ShiftPhase.DOWNSHIFT_FAST_2
    done = replace(pending, handover_fraction=1.0)
    assert select_phase(ShiftPhase.DOWNSHIFT_FAST_2, done, CFG, params) is ShiftPhase.DOWNSHIFT_SMOOTH_2


def test_select_phase_torque_phase_exit(params: VehicleParams) -> None:
    """The torque phase ends once the handover is done and clutch 1 is released."""
    held = _inputs(_state(params, slip=0.2, capacities=(10.0, 190.0)), handover_fraction=1.0)
    assert select_phase(ShiftPhase.UPSHIFT_TORQUE, held, CFG, params) is ShiftPhase.UPSHIFT_TORQUE
    released = _inputs(_state(params, slip=0.2, capacities=(0.3, 190.0)), handover_fraction=1.0)
    assert select_phase(ShiftPhase.UPSHIFT_TORQUE, released, CFG, params) is ShiftPhase.UPSHIFT_FAST


def test_select_phase_smooth_to_forced(params: VehicleParams) -> None:
    """Slip within ε_slip of zero hands over to forced engagement."""
    inputs = _inputs(_state(params, gear=GearId.SECOND, slip=5e-4), slip_accel=-1.0)
    assert select_phase(ShiftPhase.UPSHIFT_SMOOTH, inputs, CFG, params) is ShiftPhase.UPSHIFT_FORCED


def test_select_phase_transition_outside_graph_raises(params: VehicleParams, monkeypatch: pytest.MonkeyPatch) -> None:
    """A transition missing from the legal graph raises the package error type."""
    monkeypatch.setitem(LEGAL_TRANSITIONS, ShiftPhase.UPSHIFT_SMOOTH, frozenset())
    inputs = _inputs(_state(params, gear=GearId.SECOND, slip=5e-4), slip_accel=-1.0)
    with pytest.raises(PowershiftError, match="illegal phase transition"):
        select_phase(ShiftPhase.UPSHIFT_SMOOTH, inputs, CFG, params)


def test_select_phase_forced_to_steady(params: VehicleParams) -> None:
    """Forced engagement ends in Steady2 once clutch 2 holds."""
    state = _state(params, gear=GearId.SECOND, motor_torque=100.0, capacities=(0.0, 150.0), engaged=GearId.SECOND)
    inputs = _inputs(state, shaft_accel=0.4847)
    assert select_phase(ShiftPhase.UPSHIFT_FORCED, inputs, CFG, params) is ShiftPhase.STEADY_2
    sliding = replace(inputs, state=replace(state, engaged_clutch=None))
    assert select_phase(ShiftPhase.UPSHIFT_FORCED, sliding, CFG, params) is ShiftPhase.UPSHIFT_FORCED


def test_legal_transitions_end_in_steady() -> None:
    """Following the legal graph from either steady phase returns to the other steady phase."""
    for start, end in ((ShiftPhase.STEADY_1, ShiftPhase.STEADY_2), (ShiftPhase.STEADY_2, ShiftPhase.STEADY_1)):
        phase, seen = start, set()
        while phase is not end:
            assert phase not in seen
            seen.add(phase)
            phase = sorted(LEGAL_TRANSITIONS[phase])[-1]
        assert phase.target_gear is end.target_gear


# Command laws


def test_torque_phase_ramp(params: VehicleParams) -> None:
    """Clutch 1 ramps to zero while clutch 2 fills in the target drive torque."""
    td = 2082.9
    state = _state(params, slip=0.5, capacities=(30.0, 20.0))
    share1 = td / (GearId.FIRST.overall_ratio(params) * 0.9)

    start = torque_phase_command(_inputs(state, td_target=td), 0.0, CFG, params)
    assert start.clutch1 == pytest.approx(share1)
    assert start.clutch2 == pytest.approx(0.0, abs=1e-9)

    end = torque_phase_command(_inputs(state, td_target=td), CFG.handover_s, CFG, params)
    assert end.clutch1 == 0.0
    assert end.clutch2 == pytest.approx(100.0, abs=1e-3)

    mid = torque_phase_command(_inputs(state, td_target=td), CFG.handover_s / 2, CFG, params)
    assert mid.clutch1 == pytest.approx(share1 / 2)
    assert drive_torque(mid.clutch1, mid.clutch2, params) == pytest.approx(td)


def test_torque_phase_motor_command(params: VehicleParams) -> None:
    """The motor command pre-compensates both clutch lags and adds the safety slip jerk."""
    td = 4000.0
    state = _state(params, slip=0.5, motor_torque=90.0, capacities=(60.0, 20.0))
    inputs = _inputs(state, td_target=td, shaft_jerk=0.3)
    command = torque_phase_command(inputs, 0.1, CFG, params, entry_capacity=75.0)
    ratio = GearId.FIRST.overall_ratio(params)
    expected = (
        90.0
        + 0.08 / 0.04 * (command.clutch1 - 60.0)
        + 0.08 / 0.04 * (command.clutch2 - 20.0)
        + 0.08 * 1.5 * ratio * 0.3
        + 5.0 * 0.08 * 1.5
    )
    assert command.clutch1 == pytest.approx(75.0 * (1 - 0.1 / 0.3))
    assert command.motor == pytest.approx(expected)


def test_torque_phase_breakaway_stage(params: VehicleParams) -> None:
    """Before the ramp clock starts, clutch 1 is commanded just below its share."""
    td = 4000.0
    share = td / (GearId.FIRST.overall_ratio(params) * 0.9)
    state = _state(params, capacities=(1.2 * share, 0.0), engaged=GearId.FIRST)
    command = torque_phase_command(_inputs(state, td_target=td), None, CFG, params)
    assert command.clutch1 == pytest.approx(share * (1 - BREAKAWAY_MARGIN) - CFG.release_tol)
    assert command.clutch2 == 0.0
    assert command.motor == pytest.approx(share)


def test_inertia_clutch_allocation(params: VehicleParams) -> None:
    """Inertia phases route the drive torque through the right clutch."""
    td = 2600.0
    share1 = td / (GearId.FIRST.overall_ratio(params) * 0.9)
    share2 = td / (GearId.SECOND.overall_ratio(params) * 0.9)
    state = _state(params, slip=-40.0, capacities=(0.0, share2))

    p0 = inertia_phase_command(_inputs(state, slip_accel=10.0), ShiftPhase.DOWNSHIFT_FAST_1, CFG, params)
    assert p0.clutch1 == 0.0
    assert p0.clutch2 == pytest.approx(share2)

    p2 = inertia_phase_command(
        _inputs(state, slip_accel=10.0, handover_fraction=0.25), ShiftPhase.DOWNSHIFT_FAST_2, CFG, params
    )
    assert p2.clutch2 == pytest.approx(0.75 * share2)
    assert drive_torque(p2.clutch1, p2.clutch2, params) == pytest.approx(td)

    p3 = inertia_phase_command(_inputs(state, slip_accel=-1.0), ShiftPhase.DOWNSHIFT_SMOOTH_2, CFG, params)
    assert p3.clutch1 == pytest.approx(share1)
    assert p3.clutch2 == 0.0


def test_fast_phase_motor_command(params: VehicleParams) -> None:
    """With settled clutches and a steady shaft the fast phase lowers the motor by J_m·Γ_fast."""
    td = 4000.0
    share2 = td / (GearId.SECOND.overall_ratio(params) * 0.9)
    state = _state(params, gear=GearId.SECOND, slip=80.0, capacities=(0.0, share2))
    command = inertia_phase_command(
        _inputs(state, td_target=td, slip_accel=-50.0), ShiftPhase.UPSHIFT_FAST, CFG, params
    )
    assert command.clutch2 == pytest.approx(share2)
    assert command.motor == pytest.approx(share2 - 1.5 * 50.0)


def test_inertia_command_rejects_other_phases(params: VehicleParams) -> None:
    """Only inertia sub-phases have an inertia command."""
    with pytest.raises(ValueError):
        inertia_phase_command(_inputs(_state(params)), ShiftPhase.STEADY_1, CFG, params)


def test_forced_engage_examples(params: VehicleParams) -> None:
    """The target clutch is commanded to the engaged demand times the safety factor."""
    engaged = _state(params, motor_torque=100.0, engaged=GearId.FIRST)
    command = forced_engage_command(_inputs(engaged, shaft_accel=0.6436), CFG, params, GearId.FIRST)
    assert command.clutch1 == pytest.approx(53.15, abs=0.01)
    assert command.clutch2 == 0.0

    idle = _state(params, engaged=GearId.FIRST)
    assert forced_engage_command(_inputs(idle), CFG, params, GearId.FIRST).clutch1 == 0.0


@pytest.mark.parametrize(
    ("gear", "smooth"),
    [(GearId.FIRST, ShiftPhase.DOWNSHIFT_SMOOTH_2), (GearId.SECOND, ShiftPhase.UPSHIFT_SMOOTH)],
)
def test_forced_engage_keeps_smooth_law_until_lock(params: VehicleParams, gear: GearId, smooth: ShiftPhase) -> None:
    """While the slip is still gliding in, the forced phase issues the smooth-phase command."""
    share = 2600.0 / (gear.overall_ratio(params) * 0.9)
    capacities = (share, 0.0) if gear is GearId.FIRST else (0.0, share)
    sliding = _state(params, gear=gear, slip=5e-4, motor_torque=60.0, capacities=capacities)
    inputs = _inputs(sliding, slip_accel=-1.0, shaft_accel=0.2)
    assert forced_engage_command(inputs, CFG, params, gear) == inertia_phase_command(inputs, smooth, CFG, params)


def test_forced_engage_pulls_back_a_slid_through_clutch(params: VehicleParams) -> None:
    """A slip that passed zero without locking gets the margin plus a capacity floor."""
    slid = _state(params, slip=-5e-3, motor_torque=40.0)
    command = forced_engage_command(_inputs(slid), CFG, params, GearId.FIRST)
    demand = engaged_clutch_demand(GearId.FIRST, 40.0, 0.0, params)
    assert command.clutch1 == pytest.approx(1.2 * abs(demand) + CFG.release_tol)
    assert command.clutch2 == 0.0


def test_steady_command_holds_gear(params: VehicleParams) -> None:
    """Steady commands carry the target through one clutch with the safety margin."""
    state = _state(params, gear=GearId.SECOND, motor_torque=120.0, engaged=GearId.SECOND, active=GearId.SECOND)
    inputs = _inputs(state, shaft_accel=0.1)
    command = steady_command(inputs, GearId.SECOND, CFG, params)
    share = 2600.0 / (GearId.SECOND.overall_ratio(params) * 0.9)
    demand = engaged_clutch_demand(GearId.SECOND, 120.0, 0.1, params)
    assert command.motor == pytest.approx(share + 1.5 * GearId.SECOND.overall_ratio(params) * 0.1)
    assert command.clutch2 == pytest.approx(1.2 * max(share, demand))
    assert command.clutch1 == 0.0


# Controller state machine


def _scenario(params: VehicleParams, **overrides: object) -> Scenario:
    values: dict = {
        "params": params,
        "td_target": TorqueProfile.constant(4000.0),
        "grade": 0.05,
        "initial_velocity": 1.2,
        "duration": 1.0,
    }
    values.update(overrides)
    return Scenario(**values)


def _controller(scenario: Scenario) -> tuple[PowershiftController, DrivetrainState]:
    state, rates = initial_state(scenario)
    controller = PowershiftController(
        scenario, state, motor_accel=rates.motor_accel, shaft_accel=rates.shaft_accel
    )
    return controller, state


def test_controller_holds_steady_without_request(params: VehicleParams) -> None:
    """Without a request the controller keeps the initial gear."""
    controller, state = _controller(_scenario(params))
    command = controller.tick(state, 4000.0)
    assert controller.phase is ShiftPhase.STEADY_1
    assert command.clutch1 == pytest.approx(state.clutch1_capacity, rel=1e-6)
    assert command.clutch2 == 0.0
    assert controller.shifts == []


def test_controller_starts_powershift_uphill(params: VehicleParams) -> None:
    """An uphill up request at walking pace starts a powershift and records it."""
    controller, state = _controller(_scenario(params))
    controller.tick(state, 4000.0, ShiftDirection.UP)
    assert controller.phase is ShiftPhase.UPSHIFT_TORQUE
    assert controller.mode is ShiftMode.POWERSHIFT
    record = controller.shifts[0]
    assert (record.direction, record.target_gear, record.requested_at) == (ShiftDirection.UP, GearId.SECOND, 0.0)
    assert record.completed_at is None


def test_controller_sequential_on_level_ground(params: VehicleParams) -> None:
    """On level ground the upshift is sequential and skips the torque phase."""
    controller, state = _controller(_scenario(params, grade=0.0, td_target=TorqueProfile.constant(500.0)))
    command = controller.tick(state, 500.0, ShiftDirection.UP)
    assert controller.phase is ShiftPhase.UPSHIFT_FAST
    assert controller.mode is ShiftMode.SEQUENTIAL
    assert command.clutch1 == 0.0
    assert command.clutch2 == 0.0


def test_controller_ignores_illegal_request(params: VehicleParams) -> None:
    """A down request in first gear is rejected without starting a shift."""
    controller, state = _controller(_scenario(params))
    controller.tick(state, 4000.0, ShiftDirection.DOWN)
    assert controller.phase is ShiftPhase.STEADY_1
    assert controller.shifts == []


def test_controller_rate_limits_commands(params: VehicleParams) -> None:
    """Consecutive commands differ by at most rate_limit·dt per channel."""
    scenario = _scenario(params, controller=ControllerConfig(rate_limit=1000.0))
    controller, state = _controller(scenario)
    first = controller.tick(state, 4000.0)
    second = controller.tick(replace(state, time=0.001), 9000.0)
    step = 1000.0 * scenario.dt
    for before, after in zip(first.as_tuple(), second.as_tuple()):
        assert abs(after - before) <= step + 1e-9


def test_controller_flags_saturation(params: VehicleParams) -> None:
    """A clipped command marks the run infeasible."""
    scenario = _scenario(params, limits=ActuatorLimits(motor_torque_max=1000.0, clutch_capacity_max=100.0))
    controller, state = _controller(scenario)
    assert controller.feasible
    command = controller.tick(state, 9000.0)
    assert not controller.feasible
    assert command.clutch1 == 100.0
