"""Shift-quality metrics computed from a simulation trace."""

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from powershift.errors import DomainError
from powershift.simulator import Trace

COMMAND_CHANNELS = ("Tp_m", "Tp_c1", "Tp_c2")


def _tick_step(t: np.ndarray, drive: np.ndarray, time: float, dt: float) -> float | None:
    """T_d at the first tick at or after ``time`` minus T_d at the tick before it."""
    after = int(np.searchsorted(t, time - 1e-6 * dt))
    if after == 0 or after >= t.size:
        return None
    return float(drive[after] - drive[after - 1])


@dataclass(frozen=True)
class ShiftMetrics:
    """Scalars describing one shift window.

    ``engagement_torque_step`` is the signed drive-torque change between the
    last recorded tick before the target clutch locks and the first tick
    after; ``predicted_torque_step`` is the value implied by the slip
    acceleration just before lock. Both are None when no lock-up happened
    inside the window.
    """

    window_start: float
    window_end: float
    tracking_error_integral: float
    shift_duration: float
    clutch_friction_energy: float
    max_command_rate: dict[str, float] = field(default_factory=dict)
    engagement_torque_step: float | None = None
    predicted_torque_step: float | None = None
    slip_accel_before_lock: float | None = None
    normalized_rms_error: float | None = None
    completed: bool = False
    feasible: bool = True

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready mapping with unit-suffixed keys."""
        return {
            "tracking_error_integral": self.tracking_error_integral,
            "shift_duration_s": self.shift_duration,
            "engagement_step_Nm": self.engagement_torque_step,
            "friction_energy_J": self.clutch_friction_energy,
            "max_command_rate": dict(self.max_command_rate),
            "predicted_step_Nm": self.predicted_torque_step,
            "slip_accel_before_lock": self.slip_accel_before_lock,
            "normalized_rms_error": self.normalized_rms_error,
            "window_s": [self.window_start, self.window_end],
            "completed": self.completed,
            "feasible": self.feasible,
        }


def metrics(
    trace: Trace,
    window: tuple[float, float] | None = None,
) -> ShiftMetrics:
    """Evaluate ``trace`` over ``window`` (the first shift by default, else the whole run).

    Sums are rectangle rules over the ticks with start ≤ t < end, so a
    constant error e over a window W integrates to e²·W.
    """
    if not trace.records:
        raise DomainError("cannot compute metrics of an empty trace", field="trace")
    dt = trace.dt
    completed = bool(trace.shifts) and trace.shifts[0].completed_at is not None
    if window is None:
        window = trace.shift_window(0) or (trace.records[0].t, trace.records[-1].t + dt)
    start, end = window

    t = trace.column("t")
    mask = (t >= start - 0.5 * dt) & (t < end - 0.5 * dt)
    if not mask.any():
        raise DomainError(f"metric window [{start}, {end}] contains no samples", field="window")

    error = trace.column("T_d")[mask] - trace.column("T_d_target")[mask]
    tracking = float(np.sum(error**2) * dt)
    friction = float(
        np.sum(
            np.abs(trace.column("T_c1")[mask] * trace.column("omega_s1")[mask])
            + np.abs(trace.column("T_c2")[mask] * trace.column("omega_s2")[mask])
        )
        * dt
    )

    rates = {}
    for channel in COMMAND_CHANNELS:
        values = trace.column(channel)[mask]
        rates[channel] = float(np.max(np.abs(np.diff(values))) / dt) if values.size > 1 else 0.0

    width = float(np.count_nonzero(mask)) * dt
    mean_target = float(np.mean(np.abs(trace.column("T_d_target")[mask])))
    normalized = float(np.sqrt(tracking / width) / mean_target) if mean_target > 0 else None

    drive = trace.column("T_d")
    step = predicted = slip_accel = None
    target = trace.shifts[0].target_gear if trace.shifts else None
    for event in trace.events:
        in_window = start - 0.5 * dt <= event.time <= end + 0.5 * dt
        if event.kind == "lock" and in_window and (target is None or event.gear is target):
            step = _tick_step(t, drive, event.time, dt)
            slip_accel = event.slip_accel_before
            predicted = event.predicted_step
            break

    return ShiftMetrics(
        window_start=start,
        window_end=end,
        tracking_error_integral=tracking,
        shift_duration=end - start,
        clutch_friction_energy=friction,
        max_command_rate=rates,
        engagement_torque_step=step,
        predicted_torque_step=predicted,
        slip_accel_before_lock=slip_accel,
        normalized_rms_error=normalized,
        completed=completed,
        feasible=trace.feasible,
    )
