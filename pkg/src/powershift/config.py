"""YAML configuration files for scenarios and calibration sweeps.

A config file has the sections ``vehicle``, ``controller``, ``scenario`` and
``limits`` plus an optional ``name``. Keys use the physical symbols (``J_m``,
``Gamma_2_1``, ``T_c_max``...) and every value is in SI units. Omitted keys
fall back to the 10 t wheel-loader defaults; ``J_v`` defaults to m_v·r².
"""

from dataclasses import fields
from importlib import resources
try:
    from importlib.resources.abc import Traversable
except ImportError:  # Python < 3.11
    from importlib.abc import Traversable
from pathlib import Path
from typing import Any, TypeVar

import yaml

from powershift.drivetrain import equivalent_inertia
from powershift.errors import ConfigError, DomainError
from powershift.models import (
    ActuatorLimits,
    ControllerConfig,
    GearId,
    Scenario,
    ShiftDirection,
    ShiftEvent,
    ShiftPolicy,
    TorqueProfile,
    VehicleParams,
)
from powershift.sweep import SweepSpec, SweepWeights

VEHICLE_KEYS = {
    "J_m": "motor_inertia",
    "m_v": "vehicle_mass",
    "r_rad": "wheel_radius",
    "J_v": "vehicle_inertia",
    "c_w": "drag_coeff",
    "A_v": "reference_area",
    "rho_air": "air_density",
    "i_1": "ratio_gear1",
    "i_2": "ratio_gear2",
    "i_final": "ratio_final",
    "eta": "final_drive_efficiency",
    "theta_m": "motor_time_const",
    "theta_c": "clutch_time_const",
    "theta_c1": "clutch1_time_const",
    "theta_c2": "clutch2_time_const",
}

CONTROLLER_KEYS = {
    "Gamma_2_1": "gamma_2_1",
    "Gamma_2_2": "gamma_2_2",
    "Gamma_fast": "gamma_fast",
    "Omega_2": "omega_2",
    "dds_set": "dds_set",
    "handover_s": "handover_s",
    "eps_slip": "eps_slip",
    "est_tau": "est_tau",
    "safety_factor": "safety_factor",
    "release_tol": "release_tol",
    "rate_limit": "rate_limit",
}

LIMIT_KEYS = {
    "T_m_max": "motor_torque_max",
    "T_c_max": "clutch_capacity_max",
}

SCENARIO_KEYS = {
    "dt": "dt",
    "duration": "duration",
    "grade": "grade",
    "load": "load",
    "td_target": "td_target",
    "shifts": "shifts",
    "initial_gear": "initial_gear",
    "initial_velocity": "initial_velocity",
    "powershift_max_velocity": "max_velocity",
    "allow_sequential": "allow_sequential",
}

SECTIONS = ("name", "vehicle", "controller", "scenario", "limits")

# 10 t wheel loader
DEFAULT_VEHICLE: dict[str, float] = {
    "J_m": 1.5,
    "m_v": 9450.0,
    "r_rad": 0.615,
    "c_w": 0.8,
    "A_v": 0.8,
    "rho_air": 1.293,
    "i_1": 3.74,
    "i_2": 1.5,
    "i_final": 15.429,
    "eta": 0.9,
    "theta_m": 0.08,
    "theta_c": 0.04,
}

T = TypeVar("T")

SCENARIO_PACKAGE = "powershift"
SCENARIO_DIR = "scenarios"


def _section(data: dict[str, Any], section: str, allowed: dict[str, str]) -> dict[str, Any]:
    values = data.get(section) or {}
    if not isinstance(values, dict):
        raise ConfigError("section must be a mapping", key=section)
    for key in values:
        if key not in allowed:
            raise ConfigError("unknown key", key=f"{section}.{key}")
    return values


def _number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise ConfigError(f"expected a number, got {value!r}", key=key)
    return float(value)


def _reverse(mapping: dict[str, str], attribute: str | None) -> str | None:
    for key, name in mapping.items():
        if name == attribute:
            return key
    return attribute


def _build(factory: type[T], section: str, mapping: dict[str, str], kwargs: dict[str, Any]) -> T:
    """Construct a model object, reporting domain violations against the config key."""
    try:
        return factory(**kwargs)
    except DomainError as e:
        raise ConfigError(str(e), key=f"{section}.{_reverse(mapping, e.field)}") from e


def _vehicle(data: dict[str, Any]) -> VehicleParams:
    values = {**DEFAULT_VEHICLE, **_section(data, "vehicle", VEHICLE_KEYS)}
    kwargs = {VEHICLE_KEYS[key]: _number(value, f"vehicle.{key}") for key, value in values.items()}
    if "vehicle_inertia" not in kwargs:
        try:
            kwargs["vehicle_inertia"] = equivalent_inertia(kwargs["vehicle_mass"], kwargs["wheel_radius"])
        except DomainError as e:
            raise ConfigError(str(e), key=f"vehicle.{_reverse(VEHICLE_KEYS, e.field)}") from e
    return _build(VehicleParams, "vehicle", VEHICLE_KEYS, kwargs)


def _td_target(value: Any) -> TorqueProfile:
    key = "scenario.td_target"
    if not isinstance(value, list):
        return TorqueProfile.constant(_number(value, key))
    breakpoints = []
    for item in value:
        if not isinstance(item, list | tuple) or len(item) != 2:
            raise ConfigError(f"breakpoints must be [t, value] pairs, got {item!r}", key=key)
        breakpoints.append((_number(item[0], key), _number(item[1], key)))
    try:
        return TorqueProfile(tuple(breakpoints))
    except DomainError as e:
        raise ConfigError(str(e), key=key) from e


def _shifts(value: Any) -> tuple[ShiftEvent, ...]:
    key = "scenario.shifts"
    if not isinstance(value, list):
        raise ConfigError("expected a list of {t, direction} entries", key=key)
    events = []
    for item in value:
        if not isinstance(item, dict) or set(item) != {"t", "direction"}:
            raise ConfigError(f"each shift needs exactly t and direction, got {item!r}", key=key)
        try:
            direction = ShiftDirection(item["direction"])
        except ValueError as e:
            raise ConfigError(f"direction must be 'up' or 'down', got {item['direction']!r}", key=key) from e
        events.append(_build(ShiftEvent, "scenario", {"shifts": "time"}, {
            "time": _number(item["t"], key),
            "direction": direction,
        }))
    return tuple(events)


def scenario_from_mapping(data: dict[str, Any] | None, *, name: str = "scenario") -> Scenario:
    """Build a validated Scenario from a parsed config mapping."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError("unknown section", key=str(key))

    params = _vehicle(data)
    controller_values = _section(data, "controller", CONTROLLER_KEYS)
    controller = _build(ControllerConfig, "controller", CONTROLLER_KEYS, {
        CONTROLLER_KEYS[key]: _number(value, f"controller.{key}") for key, value in controller_values.items()
    })
    limit_values = _section(data, "limits", LIMIT_KEYS)
    limits = _build(ActuatorLimits, "limits", LIMIT_KEYS, {
        LIMIT_KEYS[key]: _number(value, f"limits.{key}") for key, value in limit_values.items()
    })

    values = dict(_section(data, "scenario", SCENARIO_KEYS))
    policy_kwargs: dict[str, Any] = {}
    if "powershift_max_velocity" in values:
        policy_kwargs["max_velocity"] = _number(values.pop("powershift_max_velocity"), "scenario.powershift_max_velocity")
    if "allow_sequential" in values:
        allow = values.pop("allow_sequential")
        if not isinstance(allow, bool):
            raise ConfigError(f"expected true or false, got {allow!r}", key="scenario.allow_sequential")
        policy_kwargs["allow_sequential"] = allow
    policy = _build(ShiftPolicy, "scenario", SCENARIO_KEYS, policy_kwargs)

    kwargs: dict[str, Any] = {}
    if "td_target" in values:
        kwargs["td_target"] = _td_target(values.pop("td_target"))
    if "shifts" in values:
        kwargs["shifts"] = _shifts(values.pop("shifts"))
    if "initial_gear" in values:
        gear = values.pop("initial_gear")
        if gear not in (1, 2) or isinstance(gear, bool):
            raise ConfigError(f"must be 1 or 2, got {gear!r}", key="scenario.initial_gear")
        kwargs["initial_gear"] = GearId(gear)
    for key, value in values.items():
        kwargs[SCENARIO_KEYS[key]] = _number(value, f"scenario.{key}")

    scenario_name = data.get("name", name)
    if not isinstance(scenario_name, str):
        raise ConfigError(f"expected a string, got {scenario_name!r}", key="name")
    return _build(Scenario, "scenario", SCENARIO_KEYS, {
        "params": params,
        "controller": controller,
        "limits": limits,
        "policy": policy,
        "name": scenario_name,
        **kwargs,
    })


def parse_config(text: str, *, name: str = "scenario") -> Scenario:
    """Parse YAML text into a Scenario; syntax errors carry the 1-based line."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {e}", line=mark.line + 1 if mark else None) from e
    return scenario_from_mapping(data, name=name)


def bundled_scenarios() -> dict[str, Traversable]:
    """Reference configs shipped with the package, by bare name."""
    root = resources.files(SCENARIO_PACKAGE) / SCENARIO_DIR
    return {
        entry.name.removesuffix(".yaml"): entry
        for entry in sorted(root.iterdir(), key=lambda entry: entry.name)
        if entry.is_file() and entry.name.endswith(".yaml")
    }


def bundled_sweeps() -> dict[str, Traversable]:
    root = resources.files(SCENARIO_PACKAGE) / SCENARIO_DIR / "sweeps"
    return {
        entry.name.removesuffix(".yaml"): entry
        for entry in sorted(root.iterdir(), key=lambda entry: entry.name)
        if entry.name.endswith(".yaml")
    }


def _read(source: str | Path, bundled: dict[str, Traversable]) -> tuple[str, str]:
    path = Path(source)
    if path.is_file():
        return path.read_text(), path.stem
    if str(source) in bundled:
        return bundled[str(source)].read_text(), str(source)
    raise ConfigError(f"no such file or bundled config: {source}")


def load_config(source: str | Path) -> Scenario:
    """Load a scenario from a YAML file or a bundled config name."""
    text, name = _read(source, bundled_scenarios())
    return parse_config(text, name=name)


def config_mapping(scenario: Scenario) -> dict[str, Any]:
    """Config mapping that ``scenario_from_mapping`` turns back into ``scenario``."""
    params = scenario.params
    vehicle = {
        key: getattr(params, attribute)
        for key, attribute in VEHICLE_KEYS.items()
        if getattr(params, attribute) is not None
    }
    breakpoints = scenario.td_target.breakpoints
    if len(breakpoints) == 1 and breakpoints[0][0] == 0.0:
        td_target: Any = breakpoints[0][1]
    else:
        td_target = [[t, value] for t, value in breakpoints]
    return {
        "name": scenario.name,
        "vehicle": vehicle,
        "controller": {key: getattr(scenario.controller, attribute) for key, attribute in CONTROLLER_KEYS.items()},
        "scenario": {
            "dt": scenario.dt,
            "duration": scenario.duration,
            "grade": scenario.grade,
            "load": scenario.load,
            "td_target": td_target,
            "shifts": [{"t": event.time, "direction": str(event.direction)} for event in scenario.shifts],
            "initial_gear": int(scenario.initial_gear),
            "initial_velocity": scenario.initial_velocity,
            "powershift_max_velocity": scenario.policy.max_velocity,
            "allow_sequential": scenario.policy.allow_sequential,
        },
        "limits": {key: getattr(scenario.limits, attribute) for key, attribute in LIMIT_KEYS.items()},
    }


def dump_config(scenario: Scenario) -> str:
    return yaml.safe_dump(config_mapping(scenario), sort_keys=False)


def write_config(scenario: Scenario, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(scenario))
    return path


def load_sweep_spec(source: str | Path) -> SweepSpec:
    """Load a sweep spec: ``grid`` of Gamma_2_1/Gamma_2_2[/Omega_2] lists and optional ``weights``."""
    text, _ = _read(source, bundled_sweeps())
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {e}", line=mark.line + 1 if mark else None) from e
    if not isinstance(data, dict):
        raise ConfigError("sweep spec must be a mapping")
    for key in data:
        if key not in ("grid", "weights"):
            raise ConfigError("unknown section", key=str(key))

    grid_keys = {"Gamma_2_1": "gamma_2_1", "Gamma_2_2": "gamma_2_2", "Omega_2": "omega_2"}
    grid = _section(data, "grid", grid_keys)
    axes: dict[str, tuple[float, ...]] = {}
    for key, values in grid.items():
        if not isinstance(values, list):
            values = [values]
        axes[grid_keys[key]] = tuple(_number(value, f"grid.{key}") for value in values)

    weight_keys = {field.name: field.name for field in fields(SweepWeights)}
    weights = _build(SweepWeights, "weights", weight_keys, {
        key: _number(value, f"weights.{key}") for key, value in _section(data, "weights", weight_keys).items()
    })
    axes.setdefault("gamma_2_1", ())
    axes.setdefault("gamma_2_2", ())
    return _build(SweepSpec, "grid", grid_keys, {**axes, "weights": weights})
