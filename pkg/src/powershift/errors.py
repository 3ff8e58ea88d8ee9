"""Exception types raised by powershift."""

from typing import Any


class PowershiftError(Exception):
    """Base class for all powershift errors."""


class DomainError(PowershiftError, ValueError):
    """An operation or type was given values outside its domain.

    Attributes:
        field: Name of the offending field or argument, if there is one.
    """

    def __init__(self, message: str, *, field: str | None = None) -> None:
        self.field = field
        super().__init__(message)


class ConfigError(PowershiftError, ValueError):
    """A configuration file could not be parsed or failed validation.

    Attributes:
        key: Dotted path of the offending key (e.g. ``vehicle.eta``), if known.
        line: 1-based line in the source file, if known.
    """

    def __init__(self, message: str, *, key: str | None = None, line: int | None = None) -> None:
        self.key = key
        self.line = line
        prefix = f"{key}: " if key else ""
        if line is not None:
            prefix = f"line {line}: {prefix}"
        super().__init__(f"{prefix}{message}")


class SimulationFault(PowershiftError, RuntimeError):
    """The plant produced a non-finite state or an event could not be resolved.

    Attributes:
        time: Simulated time at which the fault occurred.
        record: Diagnostic snapshot (state and commands at the failing step).
        trace: Partial trace recorded up to the fault, attached by ``run``.
    """

    def __init__(self, message: str, *, time: float, record: dict[str, Any] | None = None) -> None:
        self.time = time
        self.record = record or {}
        self.trace: Any = None
        super().__init__(f"t={time:.6f}s: {message}")
