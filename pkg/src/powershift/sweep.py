"""Calibration sweep over the engagement slip accelerations.

Every grid point is an independent closed-loop run sharing only the
immutable base scenario, so points execute on a thread pool and rows are
placed back by grid index.
"""

import itertools
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from powershift.errors import DomainError, SimulationFault
from powershift.logging import logger
from powershift.metrics import ShiftMetrics, metrics
from powershift.models import Scenario
from powershift.simulator import run

# Grid axes as ControllerConfig field names
SWEEP_AXES = ("gamma_2_1", "gamma_2_2", "omega_2")


@dataclass(frozen=True)
class SweepWeights:
    """Objective weights for shift duration, |engagement step| and tracking integral."""

    duration: float = 1.0
    step: float = 1.0
    tracking: float = 0.0

    def __post_init__(self) -> None:
        for name in ("duration", "step", "tracking"):
            value = getattr(self, name)
            if not value >= 0:
                raise DomainError(f"weight {name} must be nonnegative, got {value!r}", field=name)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of controller calibrations; an empty ``omega_2`` keeps the base value."""

    gamma_2_1: tuple[float, ...]
    gamma_2_2: tuple[float, ...]
    omega_2: tuple[float, ...] = ()
    weights: SweepWeights = field(default_factory=SweepWeights)

    def __post_init__(self) -> None:
        for name in ("gamma_2_1", "gamma_2_2"):
            if not getattr(self, name):
                raise DomainError(f"sweep grid {name} must not be empty", field=name)

    def points(self, base: Scenario) -> list[dict[str, float]]:
        """Grid points in deterministic order (last axis varies fastest)."""
        omega_2 = self.omega_2 or (base.controller.omega_2,)
        return [
            dict(zip(SWEEP_AXES, values))
            for values in itertools.product(self.gamma_2_1, self.gamma_2_2, omega_2)
        ]

    def __len__(self) -> int:
        return len(self.gamma_2_1) * len(self.gamma_2_2) * max(len(self.omega_2), 1)


@dataclass
class SweepRow:
    """Outcome of one grid point."""

    index: int
    point: dict[str, float]
    status: str = "ok"
    metrics: ShiftMetrics | None = None
    error: str = ""
    objective: float | None = None
    pareto: bool = False

    def to_dict(self) -> dict[str, Any]:
        row: dict[str, Any] = {"index": self.index, **self.point, "status": self.status}
        m = self.metrics
        row.update(
            shift_duration_s=m.shift_duration if m else None,
            engagement_step_Nm=m.engagement_torque_step if m else None,
            predicted_step_Nm=m.predicted_torque_step if m else None,
            tracking_error_integral=m.tracking_error_integral if m else None,
            friction_energy_J=m.clutch_friction_energy if m else None,
            completed=m.completed if m else False,
            feasible=m.feasible if m else False,
            objective=self.objective,
            pareto=self.pareto,
            error=self.error,
        )
        return row


def objective(shift: ShiftMetrics, weights: SweepWeights) -> float:
    """Weighted sum to minimise; a missing engagement step counts as zero."""
    step = abs(shift.engagement_torque_step or 0.0)
    return (
        weights.duration * shift.shift_duration
        + weights.step * step
        + weights.tracking * shift.tracking_error_integral
    )


def pareto_front(costs: np.ndarray) -> np.ndarray:
    """Mask of rows not dominated by any other row (all columns minimised)."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        return np.zeros(0, dtype=bool)
    no_worse = np.all(costs[None, :, :] <= costs[:, None, :], axis=2)
    better = np.any(costs[None, :, :] < costs[:, None, :], axis=2)
    dominated = np.any(no_worse & better, axis=1)
    return ~dominated


def run_point(base: Scenario, index: int, point: dict[str, float], weights: SweepWeights) -> SweepRow:
    """Simulate one grid point; faults and invalid calibrations become ``fault`` rows."""
    label = ",".join(f"{key}={value:g}" for key, value in point.items())
    with logger.contextualize(point=label):
        try:
            scenario = replace(base, controller=replace(base.controller, **point))
            shift = metrics(run(scenario))
        except (SimulationFault, DomainError) as e:
            logger.warning(f"Point {index} failed: {e}")
            return SweepRow(index=index, point=point, status="fault", error=str(e))
    return SweepRow(index=index, point=point, metrics=shift, objective=objective(shift, weights))


def run_sweep(
    base: Scenario,
    spec: SweepSpec,
    jobs: int = 1,
    progress_callback: Callable[[SweepRow], None] | None = None,
) -> list[SweepRow]:
    """Run every grid point and flag the Pareto front of (duration, |engagement step|).

    Rows come back in grid order regardless of completion order.
    """
    points = spec.points(base)
    rows: list[SweepRow | None] = [None] * len(points)
    logger.info(f"Sweeping {len(points)} points with {jobs} worker(s)")

    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        future_to_index = {
            executor.submit(run_point, base, index, point, spec.weights): index
            for index, point in enumerate(points)
        }
        for future in as_completed(future_to_index):
            index = future_to_index[future]
            try:
                row = future.result()
            except Exception as e:
                row = SweepRow(index=index, point=points[index], status="fault", error=f"Unexpected error: {e}")
            rows[index] = row
            if progress_callback:
                progress_callback(row)

    finished = [row for row in rows if row is not None]
    candidates = [
        row
        for row in finished
        if row.metrics is not None and row.metrics.engagement_torque_step is not None
    ]
    if candidates:
        costs = np.array(
            [[row.metrics.shift_duration, abs(row.metrics.engagement_torque_step)] for row in candidates]
        )
        for row, on_front in zip(candidates, pareto_front(costs)):
            row.pareto = bool(on_front)
    return finished
