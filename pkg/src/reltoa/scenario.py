"""Scenario files: parsing, validation, canonical serialization and hashing.

A scenario file is YAML with a top-level ``scenarios`` list.  Each entry
describes either an arrival-time density calculation (``task: density``) or
a table of arrival kernels (``task: kernels``).  Every validation error
names the offending field by its path, for example
``scenarios[1].state.width``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .errors import ConfigError
from .toa import KERNEL_VARIANTS, METHODS

STATE_KINDS = {
    # kind: {parameter: (required, default, constraint)}
    "box": {"width": (True, None, "positive"), "level": (True, None, "level")},
    "gaussian": {"momentum": (True, None, "finite"), "spread": (True, None, "positive"),
                 "center": (False, 0.0, "finite")},
    "source-sinusoid": {"duration": (True, None, "positive"),
                        "amplitude": (False, 1.0, "positive")},
}
ABSORPTION_KINDS = {
    "perfect": {},
    "rolloff": {"start": (True, None, "nonnegative"), "stop": (True, None, "positive")},
    "table": {"path": (True, None, "path")},
}
QUADRATURE_FIELDS = {
    "method": str, "rel_tol": float, "abs_tol": float, "max_subdivisions": int,
    "p_max": float, "mass_tol": float, "nufft_eps": float,
}


def _where(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _number(value, path: str, constraint: str = "finite"):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if constraint == "level":
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected a positive integer, got {value!r}")
        if value < 1:
            raise ConfigError(path, f"expected a positive integer, got {value!r}")
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if constraint == "positive" and not value > 0:
        raise ConfigError(path, f"must be > 0, got {value}")
    if constraint == "nonnegative" and value < 0:
        raise ConfigError(path, f"must be >= 0, got {value}")
    return value


def _mapping(value, path: str) -> Dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _no_extra(data: Dict, allowed, path: str):
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ConfigError(_where(path, extra[0]), "unknown field")


def _parameters(data: Dict, table: Dict, path: str, skip=("kind",)) -> Tuple[Tuple[str, Any], ...]:
    _no_extra(data, list(table) + list(skip), path)
    out = []
    for name, (required, default, constraint) in table.items():
        where = _where(path, name)
        if name not in data:
            if required:
                raise ConfigError(where, "missing required field")
            value = default
        elif constraint == "path":
            value = data[name]
            if not isinstance(value, str) or not value:
                raise ConfigError(where, "expected a file path")
        else:
            value = _number(data[name], where, constraint)
        out.append((name, value))
    return tuple(out)


def _kind(data: Dict, table: Dict, path: str) -> str:
    kind = data.get("kind")
    if kind not in table:
        raise ConfigError(_where(path, "kind"), f"expected one of {sorted(table)}, got {kind!r}")
    return kind


@dataclass(frozen=True)
class StateSpec:
    """Initial state: ``kind`` plus its numeric parameters as sorted pairs."""

    kind: str
    params: Tuple[Tuple[str, Any], ...]

    def get(self, name):
        return dict(self.params)[name]

    def to_dict(self):
        return {"kind": self.kind, **dict(self.params)}

    @classmethod
    def from_dict(cls, data, path="state"):
        data = _mapping(data, path)
        kind = _kind(data, STATE_KINDS, path)
        return cls(kind, _parameters(data, STATE_KINDS[kind], path))


@dataclass(frozen=True)
class DetectorSpec:
    """Absorption coefficient and Gaussian localization length (0 means maximal)."""

    absorption: str = "perfect"
    absorption_params: Tuple[Tuple[str, Any], ...] = ()
    localization: float = 0.0

    def to_dict(self):
        return {"absorption": {"kind": self.absorption, **dict(self.absorption_params)},
                "localization": self.localization}

    @classmethod
    def from_dict(cls, data, path="detector"):
        data = _mapping(data, path)
        _no_extra(data, ("absorption", "localization"), path)
        absorption = _mapping(data.get("absorption", {"kind": "perfect"}),
                              _where(path, "absorption"))
        apath = _where(path, "absorption")
        kind = _kind(absorption, ABSORPTION_KINDS, apath)
        params = _parameters(absorption, ABSORPTION_KINDS[kind], apath)
        if kind == "rolloff" and not dict(params)["stop"] > dict(params)["start"]:
            raise ConfigError(_where(apath, "stop"), "must exceed start")
        sigma = _number(data.get("localization", 0.0), _where(path, "localization"),
                        "nonnegative")
        return cls(kind, params, sigma)


@dataclass(frozen=True)
class TimeGridSpec:
    """Uniform time grid; ``stop = None`` selects the automatic window."""

    points: int = 2048
    start: float = 0.0
    stop: Optional[float] = None

    def to_dict(self):
        return {"points": self.points, "start": self.start,
                "stop": "auto" if self.stop is None else self.stop}

    @classmethod
    def from_dict(cls, data, path="time_grid"):
        data = _mapping(data, path)
        _no_extra(data, ("points", "start", "stop"), path)
        points = _number(data.get("points", 2048), _where(path, "points"), "level")
        if points < 3:
            raise ConfigError(_where(path, "points"), "need at least 3 points")
        start = _number(data.get("start", 0.0), _where(path, "start"))
        stop = data.get("stop", "auto")
        if stop == "auto" or stop is None:
            stop = None
        else:
            stop = _number(stop, _where(path, "stop"))
            if not stop > start:
                raise ConfigError(_where(path, "stop"), "must exceed start")
        return cls(points, start, stop)


@dataclass(frozen=True)
class InsetSpec:
    """Second, finer grid over the first ``fraction`` of the main window."""

    fraction: float = 0.05
    points: int = 512

    def to_dict(self):
        return {"fraction": self.fraction, "points": self.points}

    @classmethod
    def from_dict(cls, data, path="inset"):
        data = _mapping(data, path)
        _no_extra(data, ("fraction", "points"), path)
        fraction = _number(data.get("fraction", 0.05), _where(path, "fraction"), "positive")
        if fraction > 1:
            raise ConfigError(_where(path, "fraction"), "must be <= 1")
        points = _number(data.get("points", 512), _where(path, "points"), "level")
        if points < 3:
            raise ConfigError(_where(path, "points"), "need at least 3 points")
        return cls(fraction, points)


def _quadrature(data, path="quadrature") -> Tuple[Tuple[str, Any], ...]:
    data = _mapping(data or {}, path)
    _no_extra(data, QUADRATURE_FIELDS, path)
    out = []
    for key in sorted(data):
        kind = QUADRATURE_FIELDS[key]
        where = _where(path, key)
        value = data[key]
        if kind is str:
            if value not in ("adaptive", "fft-grid"):
                raise ConfigError(where, "expected 'adaptive' or 'fft-grid'")
        elif kind is int:
            value = _number(value, where, "level")
        else:
            value = _number(value, where, "positive")
        out.append((key, value))
    return tuple(out)


@dataclass(frozen=True)
class DensityScenario:
    """Arrival-time densities of one state at one detector."""

    name: str
    mass: float
    state: StateSpec
    distance: float
    engines: Tuple[str, ...]
    detector: DetectorSpec = DetectorSpec()
    time_grid: TimeGridSpec = TimeGridSpec()
    inset: Optional[InsetSpec] = None
    transient: bool = False
    normalization: bool = False
    quadrature: Tuple[Tuple[str, Any], ...] = ()
    task: str = field(default="density", init=False)

    def physics(self) -> Dict[str, Any]:
        out = self.to_dict()
        out.pop("name")
        return out

    def to_dict(self):
        out = {"name": self.name, "task": self.task, "mass": self.mass,
               "state": self.state.to_dict(), "distance": self.distance,
               "engines": list(self.engines), "detector": self.detector.to_dict(),
               "time_grid": self.time_grid.to_dict(), "transient": self.transient,
               "normalization": self.normalization, "quadrature": dict(self.quadrature)}
        if self.inset is not None:
            out["inset"] = self.inset.to_dict()
        return out

    @classmethod
    def from_dict(cls, data, path=""):
        allowed = ("name", "task", "mass", "state", "distance", "engines", "detector",
                   "time_grid", "inset", "transient", "normalization", "quadrature")
        _no_extra(data, allowed, path)
        for key in ("name", "mass", "state", "distance", "engines"):
            if key not in data:
                raise ConfigError(_where(path, key), "missing required field")
        name = _name(data["name"], _where(path, "name"))
        mass = _number(data["mass"], _where(path, "mass"), "nonnegative")
        state = StateSpec.from_dict(data["state"], _where(path, "state"))
        if state.kind == "source-sinusoid" and mass == 0:
            raise ConfigError(_where(path, "mass"), "source states need a positive mass")
        distance = _number(data["distance"], _where(path, "distance"), "positive")
        engines = data["engines"]
        epath = _where(path, "engines")
        if isinstance(engines, str):
            engines = [engines]
        if not isinstance(engines, list) or not engines:
            raise ConfigError(epath, "select at least one engine")
        for i, e in enumerate(engines):
            if e not in METHODS:
                raise ConfigError(f"{epath}[{i}]", f"unknown engine {e!r}; expected one of {METHODS}")
        if len(set(engines)) != len(engines):
            raise ConfigError(epath, "engines must be distinct")
        detector = DetectorSpec.from_dict(data.get("detector", {}), _where(path, "detector"))
        grid = TimeGridSpec.from_dict(data.get("time_grid", {}), _where(path, "time_grid"))
        inset = data.get("inset")
        inset = None if inset is None else InsetSpec.from_dict(inset, _where(path, "inset"))
        flags = {}
        for key in ("transient", "normalization"):
            value = data.get(key, False)
            if not isinstance(value, bool):
                raise ConfigError(_where(path, key), "expected true or false")
            flags[key] = value
        if flags["transient"] and state.kind != "source-sinusoid":
            raise ConfigError(_where(path, "transient"), "needs a source-sinusoid state")
        quad = _quadrature(data.get("quadrature"), _where(path, "quadrature"))
        return cls(name, mass, state, distance, tuple(engines), detector, grid, inset,
                   flags["transient"], flags["normalization"], quad)


@dataclass(frozen=True)
class KernelScenario:
    """Arrival kernel at fixed momentum and time, tabulated against ``s = p (x - v t)``."""

    name: str
    mass: float
    momentum: float
    time: float
    s_min: float = -10.0
    s_max: float = 10.0
    points: int = 401
    variants: Tuple[str, ...] = ("numeric", "nonrel-closed", "current", "classical")
    quadrature: Tuple[Tuple[str, Any], ...] = ()
    task: str = field(default="kernels", init=False)

    def physics(self) -> Dict[str, Any]:
        out = self.to_dict()
        out.pop("name")
        return out

    def to_dict(self):
        return {"name": self.name, "task": self.task, "mass": self.mass,
                "momentum": self.momentum, "time": self.time,
                "s_range": [self.s_min, self.s_max], "points": self.points,
                "variants": list(self.variants), "quadrature": dict(self.quadrature)}

    @classmethod
    def from_dict(cls, data, path=""):
        allowed = ("name", "task", "mass", "momentum", "time", "s_range", "points",
                   "variants", "quadrature")
        _no_extra(data, allowed, path)
        for key in ("name", "mass", "momentum"):
            if key not in data:
                raise ConfigError(_where(path, key), "missing required field")
        name = _name(data["name"], _where(path, "name"))
        mass = _number(data["mass"], _where(path, "mass"), "nonnegative")
        momentum = _number(data["momentum"], _where(path, "momentum"), "positive")
        time = _number(data.get("time", 0.0), _where(path, "time"))
        s_range = data.get("s_range", [-10.0, 10.0])
        spath = _where(path, "s_range")
        if not isinstance(s_range, list) or len(s_range) != 2:
            raise ConfigError(spath, "expected [s_min, s_max]")
        s_min = _number(s_range[0], f"{spath}[0]")
        s_max = _number(s_range[1], f"{spath}[1]")
        if not s_max > s_min:
            raise ConfigError(spath, "s_max must exceed s_min")
        points = _number(data.get("points", 401), _where(path, "points"), "level")
        if points < 2:
            raise ConfigError(_where(path, "points"), "need at least 2 points")
        variants = data.get("variants", list(cls.variants))
        vpath = _where(path, "variants")
        if not isinstance(variants, list) or not variants:
            raise ConfigError(vpath, "select at least one kernel variant")
        for i, v in enumerate(variants):
            if v not in KERNEL_VARIANTS:
                raise ConfigError(f"{vpath}[{i}]", f"unknown variant {v!r}")
        if mass == 0 and "nonrel-closed" in variants:
            raise ConfigError(vpath, "the nonrelativistic closed form needs m > 0")
        quad = _quadrature(data.get("quadrature"), _where(path, "quadrature"))
        return cls(name, mass, momentum, time, s_min, s_max, points, tuple(variants), quad)


def _name(value, path):
    if not isinstance(value, str) or not value or any(c in value for c in "/\\") \
            or value.startswith("."):
        raise ConfigError(path, "expected a plain non-empty name usable as a directory")
    return value


TASKS = {"density": DensityScenario, "kernels": KernelScenario}


@dataclass(frozen=True)
class Study:
    """A named list of scenarios read from one file."""

    name: str
    scenarios: Tuple[Any, ...]
    description: str = ""

    def to_dict(self):
        out = {"study": self.name}
        if self.description:
            out["description"] = self.description
        out["scenarios"] = [s.to_dict() for s in self.scenarios]
        return out

    def with_overrides(self, rel_tol: Optional[float] = None) -> "Study":
        """Copy with the quadrature tolerance replaced in every scenario."""
        if rel_tol is None:
            return self
        if not (isinstance(rel_tol, (int, float)) and rel_tol > 0):
            raise ConfigError("quad-tol", "must be > 0")
        out = []
        for s in self.scenarios:
            quad = dict(s.quadrature)
            quad["rel_tol"] = float(rel_tol)
            out.append(replace(s, quadrature=tuple(sorted(quad.items()))))
        return replace(self, scenarios=tuple(out))


def study_from_dict(data) -> Study:
    data = _mapping(data, "<root>")
    _no_extra(data, ("study", "description", "scenarios"), "")
    name = _name(data.get("study", "study"), "study")
    description = data.get("description", "")
    if not isinstance(description, str):
        raise ConfigError("description", "expected text")
    items = data.get("scenarios")
    if not isinstance(items, list) or not items:
        raise ConfigError("scenarios", "expected a non-empty list")
    scenarios = []
    for i, item in enumerate(items):
        path = f"scenarios[{i}]"
        item = _mapping(item, path)
        task = item.get("task", "density")
        if task not in TASKS:
            raise ConfigError(_where(path, "task"), f"expected one of {sorted(TASKS)}")
        scenarios.append(TASKS[task].from_dict(item, path))
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError("scenarios", "scenario names must be distinct")
    return Study(name, tuple(scenarios), description)


def parse_study(text: str) -> Study:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return study_from_dict(data)


def load_study(path) -> Study:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    study = parse_study(text)
    return _resolve_paths(study, path.parent)


def _resolve_paths(study: Study, base: Path) -> Study:
    """Make absorption-table paths absolute relative to the scenario file."""
    out = []
    for s in study.scenarios:
        if isinstance(s, DensityScenario) and s.detector.absorption == "table":
            params = dict(s.detector.absorption_params)
            p = Path(params["path"])
            if not p.is_absolute():
                params["path"] = str((base / p).resolve())
            s = replace(s, detector=replace(s.detector, absorption_params=tuple(params.items())))
        out.append(s)
    return replace(study, scenarios=tuple(out))


def dump_study(study: Study) -> str:
    return yaml.safe_dump(study.to_dict(), sort_keys=False)


def _canonical(value):
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return repr(float(value))
    return value


def scenario_hash(scenario, version: str = "") -> str:
    """SHA-256 of the physics content of a scenario.

    The name and output location are excluded; keys are sorted so the
    hash does not depend on field order, and numbers are normalised so
    ``100`` and ``100.0`` hash alike.  An absorption table contributes its
    file contents rather than its path.
    """
    content = scenario.physics()
    if isinstance(scenario, DensityScenario) and scenario.detector.absorption == "table":
        table_path = Path(dict(scenario.detector.absorption_params)["path"])
        try:
            digest = hashlib.sha256(table_path.read_bytes()).hexdigest()
        except OSError as exc:
            raise ConfigError("detector.absorption.path", f"cannot read table: {exc}") from exc
        content["detector"]["absorption"]["path"] = digest
    content["tool"] = version
    blob = json.dumps(_canonical(content), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def preset_path(name: str) -> Path:
    base = Path(__file__).with_name("presets")
    path = base / f"{name}.yaml"
    if not path.is_file():
        names = sorted(p.stem for p in base.glob("*.yaml"))
        raise ConfigError("preset", f"unknown preset {name!r}; available: {names}")
    return path


def load_preset(name: str) -> Study:
    return load_study(preset_path(name))

