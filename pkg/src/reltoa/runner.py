"""Execute scenarios, write CSV outputs and serve repeated runs from a cache.

Each scenario's outputs live in a directory named after the scenario hash
inside the cache root.  The directory is assembled in a temporary location
and moved into place with one atomic rename, so readers never see a
partial entry.  A ``manifest.json`` records the SHA-256 of every file and
is checked on every read.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .core import Dispersion, Grid1D, QuadratureSpec, smooth_taper
from .detector import Absorption, load_absorption_table, perfect_absorber
from .errors import CacheCorrupt, ConfigError, EngineError, ReltoaError
from .scenario import DensityScenario, KernelScenario, Study, scenario_hash
from .states import (PointSinusoid, PureDensity, apply_localization, box_state,
                     gaussian_state, post_select, source_state)
from .toa import (arrival_weight, conditional_density, default_time_window, toa_kernel,
                  transient_analysis)

log = logging.getLogger(__name__)

CACHE_ENV = "RELTOA_CACHE"
MANIFEST = "manifest.json"
RECORD = "record.json"


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def cache_root(explicit: Optional[os.PathLike] = None) -> Path:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "reltoa"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Cache:
    """Content-addressed store of scenario outputs, keyed by scenario hash."""

    def __init__(self, root: Optional[os.PathLike] = None):
        self.root = cache_root(root)

    def entry(self, key: str) -> Path:
        return self.root / key

    def lookup(self, key: str) -> Optional[Path]:
        """Directory of a verified entry, or ``None`` when absent.

        Raises :class:`CacheCorrupt` when a file is missing or its hash does
        not match the manifest.
        """
        path = self.entry(key)
        if not path.is_dir():
            return None
        manifest_path = path / MANIFEST
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, ValueError) as exc:
            raise CacheCorrupt(f"cache entry {key[:12]} has an unreadable manifest") from exc
        for name, digest in manifest.items():
            target = path / name
            if not target.is_file() or _sha256(target) != digest:
                raise CacheCorrupt(f"cache entry {key[:12]}: {name} does not match its manifest")
        return path

    def store(self, key: str, files: Dict[str, bytes]) -> Path:
        """Write ``files`` as entry ``key`` with a single atomic rename."""
        self.root.mkdir(parents=True, exist_ok=True)
        final = self.entry(key)
        tmp = Path(tempfile.mkdtemp(prefix=f".{key[:12]}-", dir=self.root))
        try:
            manifest = {}
            for name, data in sorted(files.items()):
                (tmp / name).write_bytes(data)
                manifest[name] = hashlib.sha256(data).hexdigest()
            (tmp / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
            if final.exists():
                shutil.rmtree(final)
            os.replace(tmp, final)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        return final

    def files(self, key: str) -> Dict[str, bytes]:
        path = self.lookup(key)
        if path is None:
            raise CacheCorrupt(f"cache entry {key[:12]} vanished")
        manifest = json.loads((path / MANIFEST).read_text())
        return {name: (path / name).read_bytes() for name in manifest}


@dataclass
class RunRecord:
    """What was run, with which tool version, how well it converged and what it wrote."""

    scenario: str
    scenario_hash: str
    tool_version: str
    wall_time: float
    cached: bool
    diagnostics: Dict = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)


def _fmt(x: float) -> str:
    return "%.17g" % x


def _csv(header: Dict[str, object], columns: List[str], rows: np.ndarray) -> bytes:
    if not np.all(np.isfinite(rows)):
        raise EngineError("refusing to write non-finite values")
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(float(v)) for v in row))
    return ("\n".join(lines) + "\n").encode()


def _quadrature_spec(scenario, threads: int) -> QuadratureSpec:
    return QuadratureSpec(threads=threads, **dict(scenario.quadrature))


def _absorption(scenario: DensityScenario) -> Absorption:
    det = scenario.detector
    params = dict(det.absorption_params)
    if det.absorption == "perfect":
        return perfect_absorber()
    if det.absorption == "rolloff":
        start, stop = params["start"], params["stop"]
        return Absorption(lambda p: smooth_taper(p, start, stop), True,
                          f"rolloff({start:g},{stop:g})")
    return load_absorption_table(params["path"])


def _state(scenario: DensityScenario, disp: Dispersion):
    st = scenario.state
    if st.kind == "box":
        return box_state(st.get("width"), st.get("level"), disp)
    if st.kind == "gaussian":
        return gaussian_state(st.get("momentum"), st.get("spread"), disp, st.get("center"))
    source = PointSinusoid(st.get("duration"), st.get("amplitude"))
    return source_state(source, disp)


def _time_grid(scenario: DensityScenario, rho, spec) -> Grid1D:
    g = scenario.time_grid
    stop = g.stop
    if stop is None:
        if scenario.state.kind == "source-sinusoid":
            T = scenario.state.get("duration")
            stop = g.start + 2 * (scenario.distance - T) + 4 * T
        else:
            stop = g.start + default_time_window(rho, scenario.distance, spec, 3.0)[1]
    if not stop > g.start:
        raise ConfigError("time_grid.stop", "automatic window is empty")
    return Grid1D(g.start, stop, g.points)


def _density_columns(scenario, grid, values):
    cols = ["t", "density"]
    data = [grid.points, values]
    if scenario.state.kind == "box":
        a = scenario.state.get("width")
        cols.append("tau")
        data.append(grid.points / (2 * scenario.mass * a * a)
                    if scenario.mass > 0 else grid.points / a)
    return cols, np.column_stack(data)


def compute_density_scenario(scenario: DensityScenario, key: str, threads: int = 1):
    """Outputs (file name to bytes) and diagnostics of a density scenario."""
    spec = _quadrature_spec(scenario, threads)
    disp = Dispersion(scenario.mass)
    psi = _state(scenario, disp)
    rho_ps, p_tot = post_select(PureDensity(psi), _absorption(scenario), spec.mass_tol)
    rho = apply_localization(rho_ps, scenario.detector.localization)
    grid = _time_grid(scenario, rho, spec)
    files, diag = {}, {"detection_probability": p_tot, "engines": {}}
    for engine in scenario.engines:
        dens = conditional_density(rho, scenario.distance, grid, spec, method=engine)
        header = {"scenario": scenario.name, "hash": key, "engine": engine,
                  "distance": _fmt(scenario.distance),
                  "detection_probability": _fmt(p_tot),
                  "total_weight": _fmt(dens.total_weight()),
                  "total_weight_window": f"[{_fmt(grid.lo)}, {_fmt(grid.hi)}]",
                  "noise_floor": _fmt(dens.noise_floor)}
        info = {"noise_floor": dens.noise_floor, **_plain(dens.diagnostics)}
        if scenario.normalization and engine in ("pure-state-squared", "momentum-double-integral",
                                                 "phase-space", "current-operator"):
            obs = "current" if engine == "current-operator" else "conditional"
            weight = arrival_weight(rho, scenario.distance, spec, obs)
            header["full_axis_weight"] = _fmt(weight)
            info["full_axis_weight"] = weight
        cols, rows = _density_columns(scenario, grid, dens.values)
        files[f"{engine}.csv"] = _csv(header, cols, rows)
        if scenario.inset is not None:
            span = grid.hi - grid.lo
            inset = Grid1D(grid.lo, grid.lo + scenario.inset.fraction * span,
                           scenario.inset.points)
            small = conditional_density(rho, scenario.distance, inset, spec, method=engine)
            cols, rows = _density_columns(scenario, inset, small.values)
            files[f"{engine}_inset.csv"] = _csv({**header, "inset": "early times",
                                                 "noise_floor": _fmt(small.noise_floor)},
                                                cols, rows)
        if scenario.transient:
            rep = transient_analysis(dens, scenario.state.get("duration"), scenario.distance)
            info["transient"] = rep.as_dict()
            files[f"{engine}_transient.txt"] = _transient_text(rep, engine, key)
        diag["engines"][engine] = info
    return files, diag


def _transient_text(rep, engine, key) -> bytes:
    lines = [f"# transient report for {engine}", f"# hash: {key}"]
    for name, value in rep.as_dict().items():
        lines.append(f"{name}: {json.dumps(value, sort_keys=True)}")
    return ("\n".join(lines) + "\n").encode()


def compute_kernel_scenario(scenario: KernelScenario, key: str, threads: int = 1):
    """Kernel table against ``s = p (x - v t)``, divided by twice the energy scale.

    The divisor is ``p v_p`` for massive particles, which tends to
    ``p**2 / m`` (twice the kinetic energy) when they are slow.  For
    massless particles it is ``2 p`` (twice the energy).  With it the
    nonrelativistic closed form equals ``pi``, the current kernel 4 and the
    massless kernel 2 at ``s = 0``.
    """
    spec = _quadrature_spec(scenario, threads)
    disp = Dispersion(scenario.mass)
    p = scenario.momentum
    v = float(disp.velocity(p))
    s = np.linspace(scenario.s_min, scenario.s_max, scenario.points)
    x = s / p + v * scenario.time
    norm = 2.0 * p if disp.m == 0 else p * v
    ds = s[1] - s[0]
    cols, data, diag = ["s"], [s], {"normalization": norm}
    for variant in scenario.variants:
        dt = 2.0 * ds / (p * v) if variant == "classical" else None
        vals = np.asarray(toa_kernel(x, p, scenario.time, disp, variant, spec, dt))
        diag[f"{variant}_max_imag"] = float(np.max(np.abs(vals.imag))) if np.iscomplexobj(vals) \
            else 0.0
        cols.append(variant)
        data.append(np.real(vals) / norm)
    header = {"scenario": scenario.name, "hash": key, "mass": _fmt(scenario.mass),
              "momentum": _fmt(p), "time": _fmt(scenario.time),
              "normalization": f"divided by {_fmt(norm)}"}
    return {"kernels.csv": _csv(header, cols, np.column_stack(data))}, diag


def _plain(obj):
    """Convert diagnostics to JSON-friendly built-ins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def run_scenario(scenario, out_dir: Path, cache: Cache, force: bool = False,
                 threads: int = 1) -> RunRecord:
    """Compute (or fetch from the cache) one scenario and copy its files to ``out_dir``."""
    version = tool_version()
    key = scenario_hash(scenario, version)
    start = time.perf_counter()
    cached = False
    if not force and cache.lookup(key) is not None:
        files = cache.files(key)
        record = json.loads(files.pop(RECORD).decode())
        diag = record.get("diagnostics", {})
        cached = True
    else:
        compute = compute_density_scenario if isinstance(scenario, DensityScenario) \
            else compute_kernel_scenario
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                files, diag = compute(scenario, key, threads)
            except (ConfigError, CacheCorrupt):
                raise
            except ReltoaError as exc:
                raise EngineError(f"scenario {scenario.name} ({key[:12]}): {exc}") from exc
        diag = _plain(diag)
        diag["warnings"] = sorted({str(w.message) for w in caught})
        stored = dict(files)
        stored[RECORD] = json.dumps({"scenario": scenario.name, "diagnostics": diag},
                                    indent=1, sort_keys=True).encode()
        cache.store(key, stored)
    target = Path(out_dir) / scenario.name
    target.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for name, data in sorted(files.items()):
        (target / name).write_bytes(data)
        outputs[name] = hashlib.sha256(data).hexdigest()
    wall = time.perf_counter() - start
    log.info("%s: %s in %.2f s", scenario.name, "cache hit" if cached else "computed", wall)
    return RunRecord(scenario.name, key, version, wall, cached, diag, outputs)


def run_study(study: Study, out_dir, cache: Optional[Cache] = None, force: bool = False,
              threads: int = 1, quad_tol: Optional[float] = None) -> List[RunRecord]:
    """Run every scenario of a study and write ``run.json`` next to the outputs."""
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    study = study.with_overrides(quad_tol)
    cache = cache if cache is not None else Cache()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [run_scenario(s, out_dir, cache, force, threads) for s in study.scenarios]
    summary = {"study": study.name, "runs": [r.to_dict() for r in records]}
    (out_dir / "run.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return records
