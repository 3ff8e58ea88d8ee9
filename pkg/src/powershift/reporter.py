"""Output files and terminal summaries for runs and sweeps."""

import json
from collections.abc import Iterable
from pathlib import Path
from typing import Any

import pandas as pd
from rich.console import Console
from rich.table import Table

from powershift.errors import SimulationFault
from powershift.metrics import ShiftMetrics
from powershift.simulator import Trace
from powershift.sweep import SweepRow

TRACE_FILE = "trace.csv"
METRICS_FILE = "metrics.json"
FAULT_FILE = "fault.json"
SWEEP_FILE = "sweep.csv"


def write_trace(trace: Trace, out_dir: Path) -> Path:
    """Write the trace CSV with the fixed column order."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / TRACE_FILE
    trace.to_frame().to_csv(path, index=False, float_format="%.9g")
    return path


def write_metrics(shift: ShiftMetrics, out_dir: Path, *, scenario: str | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / METRICS_FILE
    data: dict[str, Any] = {"scenario": scenario} if scenario else {}
    data.update(shift.to_dict())
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def write_fault(fault: SimulationFault, out_dir: Path) -> Path:
    """Write the diagnostic record of a fault next to the partial trace."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / FAULT_FILE
    record = {"message": str(fault), "time": fault.time, **fault.record}
    path.write_text(json.dumps(record, indent=2, default=str) + "\n")
    return path


def sweep_frame(rows: Iterable[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows])


def write_sweep(rows: list[SweepRow], out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / SWEEP_FILE
    sweep_frame(rows).to_csv(path, index=False, float_format="%.9g")
    return path


def _fmt(value: float | None, spec: str = ".3f") -> str:
    return "[dim]-[/dim]" if value is None else format(value, spec)


def print_metrics(shift: ShiftMetrics, console: Console | None = None, *, title: str = "Shift metrics") -> None:
    """Print a rich table of one run's metrics."""
    if console is None:
        console = Console()

    table = Table(title=title, title_style="bold", box=None, padding=(0, 2))
    table.add_column("Metric", style="cyan", no_wrap=True)
    table.add_column("Value", justify="right")

    status = "[green]complete[/green]" if shift.completed else "[yellow]incomplete[/yellow]"
    table.add_row("Shift", status)
    table.add_row("Window", f"{shift.window_start:.3f} s - {shift.window_end:.3f} s")
    table.add_row("Duration", f"{shift.shift_duration:.3f} s")
    table.add_row("Engagement step", f"{_fmt(shift.engagement_torque_step, '.2f')} N·m")
    table.add_row("Predicted step", f"{_fmt(shift.predicted_torque_step, '.2f')} N·m")
    table.add_row("Tracking integral", f"{shift.tracking_error_integral:.4g} N²m²s")
    if shift.normalized_rms_error is not None:
        table.add_row("Normalized RMS", f"{shift.normalized_rms_error * 100:.2f} %")
    table.add_row("Friction energy", f"{shift.clutch_friction_energy:.1f} J")
    for channel, rate in shift.max_command_rate.items():
        table.add_row(f"Max rate {channel}", f"{rate:.4g} N·m/s")
    feasible = "[green]yes[/green]" if shift.feasible else "[red]no (saturated)[/red]"
    table.add_row("Feasible", feasible)

    console.print()
    console.print(table)
    console.print()


def print_sweep(rows: list[SweepRow], console: Console | None = None) -> None:
    """Print the Pareto rows of a sweep and a count of faulted points."""
    if console is None:
        console = Console()

    table = Table(title="Pareto front", title_style="bold", box=None, padding=(0, 2))
    table.add_column("#", justify="right")
    table.add_column("Point", style="cyan")
    table.add_column("Duration", justify="right")
    table.add_column("Step", justify="right")
    table.add_column("Objective", justify="right")

    front = sorted((row for row in rows if row.pareto), key=lambda row: row.objective or 0.0)
    for row in front:
        assert row.metrics is not None
        point = ", ".join(f"{key}={value:g}" for key, value in row.point.items())
        table.add_row(
            str(row.index),
            point,
            f"{row.metrics.shift_duration:.3f} s",
            f"{_fmt(row.metrics.engagement_torque_step, '.2f')} N·m",
            _fmt(row.objective, ".4g"),
        )

    console.print()
    console.print(table)
    faults = sum(row.status == "fault" for row in rows)
    if faults:
        console.print(f"[red]{faults}/{len(rows)} points faulted[/red]")
    console.print()
