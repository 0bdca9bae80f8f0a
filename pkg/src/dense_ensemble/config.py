"""Run configuration: nested dataclasses loaded from YAML with field-level errors."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .physics import DriveSpec, EmitterSpec
from .pstd import DEFAULT_SIGMA_NORM, ConfigError, PMLConfig


@dataclass
class EmitterConfig:
    energy_ev: float = 1.0
    gamma0: float = 2.95e6
    # None -> derived from gamma0 and the transition energy; 0 decouples the emitters
    dipole_moment: Optional[float] = None

    def validate(self, p):
        _positive(self.energy_ev, p + ".energy_ev")
        _positive(self.gamma0, p + ".gamma0")
        if self.dipole_moment is not None and self.dipole_moment < 0:
            raise ConfigError("dipole_moment must be >= 0", p + ".dipole_moment")

    def spec(self) -> EmitterSpec:
        return EmitterSpec.from_ev(self.energy_ev, self.gamma0)

    def dipole(self) -> float:
        return self.spec().dipole_moment if self.dipole_moment is None else float(self.dipole_moment)


@dataclass
class DriveConfig:
    amplitude: float = 1.5e9
    frequency_hz: float = 241e12
    polarization: list = field(default_factory=lambda: [0.0, 1.0, 0.0])
    propagation: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    ramp_periods: float = 5.0

    def validate(self, p):
        _positive(self.frequency_hz, p + ".frequency_hz")
        if self.amplitude < 0:
            raise ConfigError("amplitude must be >= 0", p + ".amplitude")
        if self.ramp_periods < 0:
            raise ConfigError("ramp_periods must be >= 0", p + ".ramp_periods")
        try:
            self.spec()
        except ValueError as exc:
            raise ConfigError(str(exc), p + ".polarization") from None

    def spec(self) -> DriveSpec:
        return DriveSpec.from_hz(self.amplitude, self.frequency_hz, polarization=tuple(self.polarization), propagation=tuple(self.propagation))


@dataclass
class GridConfig:
    dims: list = field(default_factory=lambda: [45, 45, 45])
    spacing: float = 1e-9
    dt: Optional[float] = None  # None -> stable_dt(spacing, drive)
    dt_safety: float = 0.9

    def validate(self, p):
        if len(self.dims) != 3 or any(int(n) != n or n < 1 for n in self.dims):
            raise ConfigError("dims must be three positive integers", p + ".dims")
        _positive(self.spacing, p + ".spacing")
        if self.dt is not None:
            _positive(self.dt, p + ".dt")
        if not 0 < self.dt_safety <= 1:
            raise ConfigError("dt_safety must be in (0, 1]", p + ".dt_safety")


@dataclass
class PMLSection:
    thickness: int = 16
    order: int = 3
    sigma_norm: Optional[float] = None
    axes: list = field(default_factory=lambda: [True, True, True])
    enabled: bool = True

    def validate(self, p):
        if self.thickness < 8:
            raise ConfigError("pml thickness must be >= 8 cells", p + ".thickness")
        if self.order < 1:
            raise ConfigError("order must be >= 1", p + ".order")
        if self.sigma_norm is not None:
            _positive(self.sigma_norm, p + ".sigma_norm")
        if len(self.axes) != 3:
            raise ConfigError("axes must list three booleans", p + ".axes")

    def build(self) -> PMLConfig:
        return PMLConfig(int(self.thickness), int(self.order), self.sigma_norm, tuple(bool(a) for a in self.axes), bool(self.enabled))

    @property
    def sigma_norm_effective(self) -> float:
        return DEFAULT_SIGMA_NORM if self.sigma_norm is None else self.sigma_norm


@dataclass
class GeometryConfig:
    shape: str = "sphere"  # sphere | box | none
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])  # m, from the origin cell
    radius: float = 5e-9
    half_widths: Optional[list] = None  # m, box only
    number_density: float = 4e27

    def validate(self, p):
        if self.shape not in ("sphere", "box", "none"):
            raise ConfigError(f"unknown shape {self.shape!r}", p + ".shape")
        if len(self.center) != 3:
            raise ConfigError("center must be a 3-vector", p + ".center")
        if self.shape == "sphere":
            _positive(self.radius, p + ".radius")
        if self.shape == "box" and (self.half_widths is None or len(self.half_widths) != 3):
            raise ConfigError("box needs three half_widths", p + ".half_widths")
        if self.shape != "none":
            _positive(self.number_density, p + ".number_density")


@dataclass
class SourceConfig:
    # cells past the start of the interior along the propagation axis
    offset: int = 1

    def validate(self, p):
        if self.offset < 1:
            raise ConfigError("offset must be >= 1", p + ".offset")


@dataclass
class ProbeConfig:
    name: str = "probe"
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])  # m, from the origin cell
    quantities: list = field(default_factory=lambda: ["E", "J"])
    stride: int = 1

    def validate(self, p):
        if len(self.position) != 3:
            raise ConfigError("position must be a 3-vector", p + ".position")
        if any(q not in ("E", "J") for q in self.quantities):
            raise ConfigError("quantities must be drawn from E, J", p + ".quantities")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1", p + ".stride")


@dataclass
class SnapshotConfig:
    component: str = "J_y"  # E_x..E_z, J_x..J_z
    axis: str = "z"  # plane normal
    offset: int = 0  # cells from the origin cell along ``axis``
    times: list = field(default_factory=list)  # s

    def validate(self, p):
        if self.component not in [f"{q}_{c}" for q in "EJH" for c in "xyz"]:
            raise ConfigError(f"unknown component {self.component!r}", p + ".component")
        if self.axis not in ("x", "y", "z"):
            raise ConfigError("axis must be x, y or z", p + ".axis")


@dataclass
class RunSection:
    duration: float = 150e-15
    record_stride: int = 20
    steady_state: bool = False
    steady_window: Optional[float] = None  # s; None -> 20 drive periods
    steady_tol: float = 1e-3
    energy_diagnostics: bool = False

    def validate(self, p):
        _positive(self.duration, p + ".duration")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1", p + ".record_stride")
        if self.steady_window is not None:
            _positive(self.steady_window, p + ".steady_window")
        _positive(self.steady_tol, p + ".steady_tol")


@dataclass
class EnsembleConfig:
    emitter: EmitterConfig = field(default_factory=EmitterConfig)
    drive: DriveConfig = field(default_factory=DriveConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    pml: PMLSection = field(default_factory=PMLSection)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    probes: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    run: RunSection = field(default_factory=RunSection)

    def validate(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                for i, item in enumerate(v):
                    item.validate(f"{f.name}[{i}]")
            else:
                v.validate(f.name)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleConfig":
        return _build(cls, data or {}, "").validate()

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class SurrogateSection:
    detuning: float = 0.0  # rad/s
    number_density: float = 4e27
    drive_amplitude: float = 1.5e9
    run_length: float = 300e-15
    dt: float = 0.05e-15
    record_stride: int = 1

    def validate(self, p):
        _positive(self.number_density, p + ".number_density")
        _positive(self.run_length, p + ".run_length")
        _positive(self.dt, p + ".dt")
        if self.drive_amplitude < 0:
            raise ConfigError("drive_amplitude must be >= 0", p + ".drive_amplitude")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1", p + ".record_stride")


@dataclass
class SurrogateFile:
    emitter: EmitterConfig = field(default_factory=EmitterConfig)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)

    def validate(self):
        self.emitter.validate("emitter")
        self.surrogate.validate("surrogate")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SurrogateFile":
        return _build(cls, data or {}, "").validate()


# ------------------------------------------------------------------ helpers
def _positive(v, name):
    if not (isinstance(v, (int, float)) and v > 0):
        raise ConfigError(f"must be a positive number, got {v!r}", name)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", prefix or "<root>")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", _join(prefix, key))
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        path = _join(prefix, f.name)
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, v, path)
        elif f.name in _LIST_ITEMS.get(cls.__name__, {}):
            item = _LIST_ITEMS[cls.__name__][f.name]
            if not isinstance(v, list):
                raise ConfigError("expected a list", path)
            kwargs[f.name] = [_build(item, x, f"{path}[{i}]") for i, x in enumerate(v)]
        else:
            kwargs[f.name] = _coerce(v, hint, path)
    return cls(**kwargs)


def _coerce(v, hint, path):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if v is None and type(None) in args:
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            v = _number(v, path)
        return float(v)
    if hint is int:
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                return int(v)
            raise ConfigError(f"expected an integer, got {v!r}", path)
        return v
    if hint is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"expected true/false, got {v!r}", path)
        return v
    if hint is str:
        if not isinstance(v, str):
            raise ConfigError(f"expected a string, got {v!r}", path)
        return v
    if hint is list:
        if not isinstance(v, list):
            raise ConfigError(f"expected a list, got {v!r}", path)
        return [x if isinstance(x, (bool, str)) else _number(x, path) for x in v]
    return v


def _number(v, path):
    # YAML reads "1e-9" (no dot) as a string
    try:
        return float(v) if not isinstance(v, (int, float)) else v
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {v!r}", path) from None


def _join(prefix, key):
    return f"{prefix}.{key}" if prefix else key


_LIST_ITEMS = {"EnsembleConfig": {"probes": ProbeConfig, "snapshots": SnapshotConfig}}


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def load_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file", "config")
    try:
        return yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}", "config") from None


def dump_yaml(d: dict, path=None) -> str:
    text = yaml.safe_dump(d, sort_keys=True)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_config(path) -> EnsembleConfig:
    return EnsembleConfig.from_dict(load_yaml(path))
