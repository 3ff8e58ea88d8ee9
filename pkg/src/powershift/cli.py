"""CLI entry point for powershift."""

from dataclasses import replace
from pathlib import Path
from typing import Optional

import typer

from powershift import __version__
from powershift.errors import ConfigError, DomainError, SimulationFault
from powershift.logging import logger
from powershift.models import Scenario

app = typer.Typer(help="Simulate and calibrate powershifts of a hydrostatic dual-clutch drivetrain.")

EXIT_VALIDATION = 1
EXIT_FAULT = 2


def _fail(error: Exception, code: int) -> typer.Exit:
    """Report ``error`` on stderr and build the exit to raise.

    Args:
        error: The error to show after an ``Error:`` prefix.
        code: Process exit code, EXIT_VALIDATION or EXIT_FAULT.

    Returns:
        A typer.Exit carrying ``code``, for the caller to raise.
    """
    typer.echo(f"Error: {error}", err=True)
    return typer.Exit(code)


def _load_scenario(config: str, dt: float | None = None) -> Scenario:
    """Load a scenario config, or exit with the validation code.

    Args:
        config: Path to a YAML config or the name of a bundled scenario.
        dt: Optional override of the integration step in seconds.

    Returns:
        The validated scenario.

    Raises:
        typer.Exit: If the config cannot be parsed or a value is out of range.
    """
    from powershift.config import load_config

    try:
        scenario = load_config(config)
        if dt is not None:
            scenario = replace(scenario, dt=dt)
    except (ConfigError, DomainError) as e:
        raise _fail(e, EXIT_VALIDATION)
    return scenario


def version_callback(value: bool) -> None:
    """Print the installed version for ``--version``.

    Raises:
        typer.Exit: Always when ``value`` is set, so no command runs.
    """
    if value:
        typer.echo(f"powershift {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(
        False, "--version", callback=version_callback, is_eager=True, help="Show version and exit"
    ),
) -> None:
    """Powershift simulator and calibration tool."""


@app.command()
def run(
    config: str = typer.Option(..., "--config", "-c", help="Config file or bundled scenario name"),
    out: Path = typer.Option(..., "--out", "-o", help="Output directory"),
    dt: Optional[float] = typer.Option(None, "--dt", help="Override the integration step (s)"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log phase transitions and clutch events"),
) -> None:
    """Simulate one scenario and write trace.csv and metrics.json."""
    from powershift.logging import set_level
    from powershift.metrics import metrics
    from powershift.reporter import print_metrics, write_fault, write_metrics, write_trace
    from powershift.simulator import Trace
    from powershift.simulator import run as simulate

    if verbose:
        set_level("DEBUG")

    scenario = _load_scenario(config, dt)
    if scenario.steps == 0:
        write_trace(Trace(scenario_name=scenario.name, dt=scenario.dt), out)
        raise _fail(DomainError("scenario duration is shorter than one step; trace is empty"), EXIT_VALIDATION)

    try:
        trace = simulate(scenario)
    except SimulationFault as fault:
        if fault.trace is not None:
            write_trace(fault.trace, out)
        write_fault(fault, out)
        raise _fail(fault, EXIT_FAULT)
    except DomainError as e:
        raise _fail(e, EXIT_VALIDATION)

    trace_path = write_trace(trace, out)
    try:
        shift = metrics(trace)
    except DomainError as e:
        raise _fail(e, EXIT_VALIDATION)
    metrics_path = write_metrics(shift, out, scenario=scenario.name)

    print_metrics(shift, title=f"Shift metrics: {scenario.name}")
    logger.success(f"Wrote {trace_path} and {metrics_path}")


@app.command()
def sweep(
    config: str = typer.Option(..., "--config", "-c", help="Base config file or bundled scenario name"),
    sweep_spec: str = typer.Option(..., "--sweep", "-s", help="Sweep spec file or bundled sweep name"),
    out: Path = typer.Option(..., "--out", "-o", help="Output directory"),
    jobs: int = typer.Option(1, "--jobs", "-j", min=1, help="Number of parallel workers"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show per-point progress"),
) -> None:
    """Run a calibration grid and write sweep.csv with Pareto flags."""
    from powershift.config import load_sweep_spec
    from powershift.logging import set_level
    from powershift.reporter import print_sweep, write_sweep
    from powershift.sweep import SweepRow, run_sweep

    if verbose:
        set_level("DEBUG")

    scenario = _load_scenario(config)
    try:
        spec = load_sweep_spec(sweep_spec)
    except (ConfigError, DomainError) as e:
        raise _fail(e, EXIT_VALIDATION)

    total = len(spec)
    completed = 0

    def on_complete(row: SweepRow) -> None:
        nonlocal completed
        completed += 1
        icon = "✓" if row.status == "ok" else "✗"
        logger.info(f"[{completed}/{total}] point {row.index} {icon}")

    rows = run_sweep(scenario, spec, jobs=jobs, progress_callback=on_complete)
    path = write_sweep(rows, out)
    print_sweep(rows)
    logger.success(f"Wrote {path}")


@app.command()
def validate(
    config: str = typer.Option(..., "--config", "-c", help="Config file or bundled scenario name"),
) -> None:
    """Check a config file without simulating."""
    scenario = _load_scenario(config)
    typer.echo(
        f"OK: {scenario.name} ({scenario.steps} steps of {scenario.dt:g} s, {len(scenario.shifts)} shift(s))"
    )


@app.command()
def scenarios() -> None:
    """List the bundled reference scenarios."""
    from powershift.config import bundled_scenarios, bundled_sweeps

    for name in bundled_scenarios():
        typer.echo(name)
    for name in bundled_sweeps():
        typer.echo(f"{name} (sweep)")


if __name__ == "__main__":
    app()
