"""Experiment configuration: a JSON document with nested sections.

Example::

    {
      "schema_version": 1,
      "system": {"Omega": 1.0, "levels": 3},
      "bath": {"kernel_family": "lorentzian", "Gamma": 1.0, "gamma_env": 3.0},
      "grid": {"t_end": 2.5, "dt": 0.001},
      "initial_state": {"kind": "two_mode_squeezed", "r": 0.3},
      "control": {"kind": "constant", "k0": 0.0},
      "solver": {"method": "master", "coefficient": "auto"},
      "ensemble": {"count": 5000, "seed": 1, "workers": 1},
      "output": {"stride": 100, "directory": "runs"}
    }

``system``, ``bath``, ``grid`` and ``initial_state`` are required; every
other section has defaults. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .bath import BathSpec, KernelFamily
from .control import Constant, ControlSchedule, schedule_from_dict, schedule_to_dict
from .exceptions import ConfigurationError
from .grid import TimeGrid
from .hilbert import Cat, Coherent, Fock, StateKind, TwoModeSqueezed

SCHEMA_VERSION = 1
MAX_LEVELS = 30
SOLVERS = ("master", "linear_qsd", "nonlinear_qsd", "gaussian")
COEFFICIENT_METHODS = ("auto", "analytic", "riccati", "volterra")
GAUSSIAN_METHODS = ("drift", "channel")


@dataclass(frozen=True)
class SystemConfig:
    Omega: float = 1.0
    levels: int = 3

    def __post_init__(self):
        if not self.Omega >= 0:
            raise ConfigurationError("must be non-negative", "system.Omega")
        if isinstance(self.levels, bool) or int(self.levels) != self.levels:
            raise ConfigurationError("must be an integer", "system.levels")
        if not 1 <= self.levels <= MAX_LEVELS:
            raise ConfigurationError(f"must lie in [1, {MAX_LEVELS}]", "system.levels")


@dataclass(frozen=True)
class GridConfig:
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("must be positive", "grid.dt")
        try:
            TimeGrid.from_span(self.t_end, self.dt)
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc), "grid.t_end") from None

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_span(self.t_end, self.dt)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "master"
    coefficient: str = "auto"
    gaussian_method: str = "drift"

    def __post_init__(self):
        if self.method not in SOLVERS:
            raise ConfigurationError(f"must be one of {SOLVERS}", "solver.method")
        if self.coefficient not in COEFFICIENT_METHODS:
            raise ConfigurationError(f"must be one of {COEFFICIENT_METHODS}", "solver.coefficient")
        if self.gaussian_method not in GAUSSIAN_METHODS:
            raise ConfigurationError(f"must be one of {GAUSSIAN_METHODS}", "solver.gaussian_method")


@dataclass(frozen=True)
class EnsembleConfig:
    count: int = 1000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.count, bool) or int(self.count) != self.count or self.count < 1:
            raise ConfigurationError("must be an integer >= 1", "ensemble.count")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigurationError("must be an unsigned 64-bit integer", "ensemble.seed")
        if int(self.workers) != self.workers or self.workers < 0:
            raise ConfigurationError("must be an integer >= 0 (0 = all cores)", "ensemble.workers")


@dataclass(frozen=True)
class OutputConfig:
    stride: int = 100
    directory: str = "runs"
    rho_dump: bool = False
    debug_trajectories: bool = False

    def __post_init__(self):
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigurationError("must be an integer >= 1", "output.stride")


@dataclass(frozen=True)
class SweepConfig:
    freqs: tuple = ()

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.freqs)
        if any(f < 0 for f in freqs):
            raise ConfigurationError("drive frequencies must be non-negative", "sweep.freqs")
        object.__setattr__(self, "freqs", freqs)


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig
    bath: BathSpec
    grid: GridConfig
    initial_state: StateKind
    control: ControlSchedule = field(default_factory=lambda: Constant(0.0))
    solver: SolverConfig = field(default_factory=SolverConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    kernel_csv: Optional[str] = None

    def __post_init__(self):
        if self.bath.kernel_family is KernelFamily.TABULATED and not self.kernel_csv:
            raise ConfigurationError("tabulated baths need 'kernel_csv'", "bath.kernel_csv")

    def with_overrides(self, **sections) -> "ExperimentConfig":
        return replace(self, **sections)

    def to_dict(self) -> dict:
        bath = {
            "kernel_family": self.bath.kernel_family.value,
            "Gamma": self.bath.Gamma,
            "gamma_env": self.bath.gamma_env,
            "Lambda": self.bath.Lambda,
            "temperature": self.bath.temperature,
        }
        if self.kernel_csv:
            bath["kernel_csv"] = self.kernel_csv
        return {
            "schema_version": SCHEMA_VERSION,
            "system": _fields(self.system),
            "bath": bath,
            "grid": _fields(self.grid),
            "initial_state": state_to_dict(self.initial_state),
            "control": schedule_to_dict(self.control),
            "solver": _fields(self.solver),
            "ensemble": _fields(self.ensemble),
            "output": _fields(self.output),
            "sweep": {"freqs": list(self.sweep.freqs)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _fields(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _section(data: dict, name: str, cls, required: bool):
    if name not in data:
        if required:
            raise ConfigurationError("required section is missing", name)
        return cls()
    body = data[name]
    if not isinstance(body, dict):
        raise ConfigurationError("section must be an object", name)
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(body) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys {unknown}", name)
    try:
        return cls(**body)
    except TypeError as exc:
        raise ConfigurationError(str(exc), name) from None


def _complex(value, name) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, (int, float)):
        return complex(value)
    raise ConfigurationError("expected a number or [re, im]", name)


def state_from_dict(body: dict) -> StateKind:
    if not isinstance(body, dict):
        raise ConfigurationError("section must be an object", "initial_state")
    kind = body.get("kind")
    params = {k: v for k, v in body.items() if k != "kind"}
    try:
        if kind == "fock":
            return Fock(int(params.pop("n1")), int(params.pop("n2")), **params)
        if kind == "coherent":
            return Coherent(
                _complex(params.pop("alpha1"), "initial_state.alpha1"),
                _complex(params.pop("alpha2"), "initial_state.alpha2"),
                **params,
            )
        if kind == "cat":
            return Cat(_complex(params.pop("alpha"), "initial_state.alpha"), int(params.pop("parity", 0)), **params)
        if kind == "two_mode_squeezed":
            return TwoModeSqueezed(float(params.pop("r")), **params)
    except KeyError as exc:
        raise ConfigurationError(f"missing key {exc}", "initial_state") from None
    except TypeError as exc:
        raise ConfigurationError(str(exc), "initial_state") from None
    raise ConfigurationError(
        "kind must be one of fock, coherent, cat, two_mode_squeezed", "initial_state.kind"
    )


def state_to_dict(kind: StateKind) -> dict:
    if isinstance(kind, Fock):
        return {"kind": "fock", "n1": kind.n1, "n2": kind.n2}
    if isinstance(kind, Coherent):
        return {
            "kind": "coherent",
            "alpha1": [kind.alpha1.real, kind.alpha1.imag],
            "alpha2": [kind.alpha2.real, kind.alpha2.imag],
        }
    if isinstance(kind, Cat):
        return {"kind": "cat", "alpha": [kind.alpha.real, kind.alpha.imag], "parity": kind.parity}
    return {"kind": "two_mode_squeezed", "r": kind.r}


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a parsed document; errors name the offending field."""
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a JSON object", "config")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported version {version}", "schema_version")
    known = {"schema_version", "system", "bath", "grid", "initial_state", "control",
             "solver", "ensemble", "output", "sweep"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown sections {unknown}", "config")

    system = _section(data, "system", SystemConfig, required=True)
    if "bath" not in data:
        raise ConfigurationError("required section is missing", "bath")
    bath_body = dict(data["bath"]) if isinstance(data["bath"], dict) else None
    if bath_body is None:
        raise ConfigurationError("section must be an object", "bath")
    kernel_csv = bath_body.pop("kernel_csv", None)
    allowed = {f.name for f in fields(BathSpec)}
    unknown = sorted(set(bath_body) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys {unknown}", "bath")
    try:
        bath = BathSpec(**bath_body)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc), "bath") from None
    except ValueError as exc:
        raise ConfigurationError(str(exc), "bath.kernel_family") from None
    grid = _section(data, "grid", GridConfig, required=True) if "grid" in data else None
    if grid is None:
        raise ConfigurationError("required section is missing", "grid")
    if "initial_state" not in data:
        raise ConfigurationError("required section is missing", "initial_state")
    state = state_from_dict(data["initial_state"])
    control = schedule_from_dict(data.get("control", {"kind": "constant", "k0": 0.0}))
    return ExperimentConfig(
        system=system,
        bath=bath,
        grid=grid,
        initial_state=state,
        control=control,
        solver=_section(data, "solver", SolverConfig, required=False),
        ensemble=_section(data, "ensemble", EnsembleConfig, required=False),
        output=_section(data, "output", OutputConfig, required=False),
        sweep=_section(data, "sweep", SweepConfig, required=False),
        kernel_csv=kernel_csv,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}", "config") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON at line {exc.lineno}: {exc.msg}", "config") from None
    return config_from_dict(data)
