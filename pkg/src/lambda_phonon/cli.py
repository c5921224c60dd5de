"""Scenario runner: config ingestion, sweeps, staged runs and CSV output.

Usage::

    lambda-phonon <scenario> --config FILE [--out DIR] [--threads N] [--cutoff N] [--seed N]
    lambda-phonon validate <scenario> --config FILE
    lambda-phonon describe <scenario>

Exit codes: 0 success, 1 output directory busy, 2 invalid config,
3 solver failure (partial outputs are written and flagged), 4 the Fock
cutoff convergence gate failed.

Config files are YAML or JSON with a strict schema (unknown keys are
rejected).  Model rates are plain numbers in units of the mechanical
frequency Omega or strings with a unit (``"12 MHz"``, ``"3 rad/s"``,
``"2 ueV"``; ``gamma`` also accepts a lifetime such as ``"3.2 ns"``).
Device quantities must carry units (``"10 nm"``, ``"1.95 eV"``).
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import yaml
from filelock import FileLock, Timeout
from scipy import constants

from .device import DeviceParams, coupling_rate, strain_for_frequency, to_system_params
from .model import (
    DEFAULT_TEMPERATURE,
    SystemParams,
    liouvillian,
    thermal_occupation,
)
from .quantum_core import (
    TruncationError,
    boson_ops,
    emitter_op,
    minimal_thermal_cutoff,
    thermal_occupation_tail,
    thermal_state,
)
from .solvers import (
    ATOL,
    RTOL,
    ConvergenceError,
    SolverError,
    converge_cutoff,
    evolve,
    evolve_stages,
    expectation,
    propagate,
    steady_state,
)
from .spectra import coherence, eit_absorption_analytic, rfs

__all__ = [
    "SCENARIOS",
    "ConfigError",
    "ScenarioConfig",
    "ValidationReport",
    "RunManifest",
    "CsvTable",
    "load_config",
    "parse_config",
    "validate",
    "describe",
    "run",
    "read_csv",
    "write_csv",
    "parse_quantity",
    "main",
]

OUT_ENV = "LAMBDA_PHONON_OUT"
DEFAULT_OUT = "lambda-phonon-out"
LOCK_NAME = ".lambda-phonon.lock"

EXIT_OK, EXIT_BUSY, EXIT_CONFIG, EXIT_SOLVER, EXIT_GATE = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    """Config failed schema or semantic validation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# units

_PREFIX = {"": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12, "m": 1e-3, "u": 1e-6, "µ": 1e-6, "n": 1e-9,
           "p": 1e-12, "f": 1e-15, "c": 1e-2}

# base unit -> (dimension, SI factor); frequencies in Hz are cyclic and become rad/s
_BASE = {
    "m": ("length", 1.0),
    "s": ("time", 1.0),
    "eV": ("energy", constants.electron_volt),
    "J": ("energy", 1.0),
    "K": ("temperature", 1.0),
    "Hz": ("rate", 2.0 * math.pi),
    "rad/s": ("rate", 1.0),
    "kg/m^2": ("areal_density", 1.0),
    "N/m": ("stiffness", 1.0),
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\s\d].*?)?\s*$")


def _unit(symbol):
    if symbol in _BASE:
        return _BASE[symbol]
    if len(symbol) > 1 and symbol[0] in _PREFIX and symbol[1:] in _BASE:
        dim, f = _BASE[symbol[1:]]
        return dim, f * _PREFIX[symbol[0]]
    raise ValueError(f"unknown unit {symbol!r}")


def parse_quantity(value, dimension=None):
    """Parse ``"10 nm"`` style input into ``(SI value, dimension)``.

    Plain numbers return ``(value, None)``.  If ``dimension`` is given (a
    string or a tuple of accepted dimensions) the unit must match it.
    """
    if isinstance(value, bool):
        raise ValueError(f"expected a quantity, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value), None
    m = _QUANTITY.match(str(value))
    if not m:
        raise ValueError(f"cannot parse quantity {value!r}")
    number, symbol = float(m.group(1)), m.group(2)
    if symbol is None:
        return number, None
    dim, factor = _unit(symbol)
    if dimension is not None:
        allowed = (dimension,) if isinstance(dimension, str) else tuple(dimension)
        if dim not in allowed:
            raise ValueError(f"{value!r} has dimension {dim}, expected {' or '.join(allowed)}")
    return number * factor, dim


def _si(value, dimension, name):
    """SI value of a quantity that must carry a unit."""
    v, dim = parse_quantity(value, dimension)
    if dim is None:
        raise ValueError(f"{name}: a unit is required (e.g. {_EXAMPLE_UNIT[dimension]!r})")
    return v


_EXAMPLE_UNIT = {"length": "10 nm", "time": "3.2 ns", "energy": "1.95 eV", "temperature": "0.1 K",
                 "rate": "10 MHz", "areal_density": "7.6e-7 kg/m^2", "stiffness": "289 N/m"}


# schema

_QTY = {"anyOf": [{"type": "number"}, {"type": "string"}]}
_RATE_KEYS = ("G", "gamma", "delta_p", "delta_c", "E_p", "E_c", "Delta0")

_PARAMS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **{k: _QTY for k in _RATE_KEYS},
        "Q": {"type": "number", "exclusiveMinimum": 0},
        "Nbar": {"type": "number", "minimum": 0},
        "fock_cutoff": {"type": "integer", "minimum": 2},
        "temperature": {"type": "string"},
        "mechanical_frequency": {"type": "string"},
    },
}

_GRID_SCHEMA = {
    "anyOf": [
        {"type": "array", "minItems": 1, "items": _QTY},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["start", "stop"],
            "properties": {
                "start": {"type": "number"},
                "stop": {"type": "number"},
                "num": {"type": "integer", "minimum": 1},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "unit": {"type": "string"},
            },
            "oneOf": [{"required": ["num"]}, {"required": ["step"]}],
        },
    ]
}

_DEVICE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "z": {"type": "string"},
        "omega_eg": {"type": "string"},
        "tau_eg": {"type": "string"},
        "epsilon": {"anyOf": [{"type": "number"},
                              {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]},
        "L": {"type": "string"},
        "w": {"type": "string"},
        "rho_2d": {"type": "string"},
        "E_2d": {"type": "string"},
        "strain": {"type": "number", "minimum": 0},
        "mechanical_frequency": {"type": "string"},
        "temperature": {"type": "string"},
    },
}

_OPTIONS = {
    "method": {"enum": ["rk", "krylov"]},
    "rtol": {"type": "number", "exclusiveMinimum": 0},
    "atol": {"type": "number", "exclusiveMinimum": 0},
    "converge": {"type": "boolean"},
    "gate_rtol": {"type": "number", "exclusiveMinimum": 0},
    "gate_step": {"type": "integer", "minimum": 1},
    "max_cutoff": {"type": "integer", "minimum": 2},
    "t_max": {"type": "number", "exclusiveMinimum": 0},
    "n_tau": {"type": "integer", "minimum": 2},
    "window": {"enum": ["hann", "exp-tail", "none"]},
    "probe_ratio": {"type": "number", "exclusiveMinimum": 0},
    "n_max": {"type": "integer", "minimum": 0},
    "polaron_shift": {"type": "boolean"},
    "tail_tol": {"type": "number", "exclusiveMinimum": 0},
    "points_per_period": {"type": "integer", "minimum": 1},
    "gap": {"type": "boolean"},
}

SCENARIOS = {
    "cool-map": {
        "grids": ("delta_p", "E_c"),
        "doc": "Steady-state phonon number over probe detuning and control strength "
               "(probe tied to the control by options.probe_ratio). Writes cool_map.csv in long format.",
    },
    "cool-curve": {
        "grids": ("delta_p",),
        "doc": "Steady-state phonon number and probe absorption along the probe detuning. "
               "Writes cool_curve.csv; options.gap adds the settling time to the manifest.",
    },
    "eit-sweep": {
        "grids": ("delta_p",),
        "doc": "Numerical probe absorption and dispersion from the full master equation. Steady state by "
               "default; with grids.times the state at each time after the initial state and stages. "
               "Writes eit_sweep.csv.",
    },
    "eit-analytic": {
        "grids": ("delta_p",),
        "doc": "Analytic weak-probe absorption with mechanical sidebands. Writes eit_analytic.csv.",
    },
    "rfs-steady": {
        "grids": ("omega",),
        "doc": "Steady-state resonance fluorescence spectrum of both branches on omega - omega_eg "
               "(units of Omega). Writes rfs_steady.csv.",
    },
    "rfs-timed": {
        "grids": ("omega", "times"),
        "doc": "Pulsed run: thermal initial state, then the preparatory stages (e.g. cooling), then the "
               "emission stage given by params. Spectra at grids.times (mechanical periods into the "
               "emission stage). Writes rfs_timed.csv (long format) and occupation.csv.",
    },
    "design": {
        "grids": (),
        "doc": "Emitter-ribbon coupling from device geometry (optionally over grids.z). Writes design.csv.",
    },
}


def _schema(scenario):
    required = ["device"] if scenario == "design" else ["params"]
    grids = SCENARIOS[scenario]["grids"] if scenario in SCENARIOS else ()
    optional_grids = {"times": _GRID_SCHEMA} if scenario == "eit-sweep" else {}
    if scenario == "design":
        optional_grids = {"z": _GRID_SCHEMA}
    if grids:
        required.append("grids")
    return {
        "type": "object",
        "additionalProperties": False,
        "required": required,
        "properties": {
            "scenario": {"enum": list(SCENARIOS)},
            "params": _PARAMS_SCHEMA,
            "device": _DEVICE_SCHEMA,
            "stages": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["duration"],
                    "properties": {"params": _PARAMS_SCHEMA, "duration": {"type": "number", "exclusiveMinimum": 0}},
                },
            },
            "grids": {
                "type": "object",
                "additionalProperties": False,
                "required": list(grids),
                "properties": {**{g: _GRID_SCHEMA for g in grids}, **optional_grids},
            },
            "initial": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"nbar": {"type": "number", "minimum": 0},
                               "emitter": {"enum": ["down", "up", "e"]}},
            },
            "options": {"type": "object", "additionalProperties": False, "properties": _OPTIONS},
            "output": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"dir": {"type": "string"}, "plots": {"type": "boolean"}},
            },
        },
    }


# config objects


@dataclass
class ScenarioConfig:
    scenario: str
    raw: dict
    params: SystemParams | None = None
    device: DeviceParams | None = None
    temperature: float = DEFAULT_TEMPERATURE
    stages: list = field(default_factory=list)
    grids: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def option(self, name, default=None):
        return self.options.get(name, default)

    @property
    def config_hash(self) -> str:
        blob = json.dumps({"scenario": self.scenario, "config": self.raw}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path) -> dict:
    """Read a YAML or JSON config file into a dict (empty file -> ``{}``)."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return data


def _schema_problems(raw, scenario):
    if scenario not in SCENARIOS:
        return [f"unknown scenario {scenario!r}; choose one of {', '.join(SCENARIOS)}"]
    validator = jsonschema.Draft202012Validator(_schema(scenario))
    problems = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path)):
        where = ".".join(str(x) for x in err.absolute_path) or "config"
        problems.append(f"{where}: {err.message}")
    if raw.get("scenario") not in (None, scenario):
        problems.append(f"scenario: config is for {raw['scenario']!r} but {scenario!r} was requested")
    return problems


def _model_params(spec, base=None, temperature=None):
    """Convert a ``params`` mapping into SystemParams (and the bath temperature).

    The physical mechanical frequency (used for unit conversion and for the
    default emitter lifetime) is the working-point value unless
    ``mechanical_frequency`` is given; ``Nbar`` then follows from the
    temperature when it is not set explicitly.
    """
    spec = dict(spec or {})
    kw = {}
    T = temperature if temperature is not None else DEFAULT_TEMPERATURE
    if "temperature" in spec:
        T = _si(spec.pop("temperature"), "temperature", "params.temperature")
    nbar = spec.pop("Nbar", None)
    if "mechanical_frequency" in spec:
        omega_phys = _si(spec.pop("mechanical_frequency"), "rate", "params.mechanical_frequency")
        if nbar is None:
            nbar = float(thermal_occupation(omega_phys, T))
    elif base is not None:
        omega_phys = base.omega_phys
    else:
        omega_phys = SystemParams().omega_phys
    if nbar is not None:
        kw["Nbar"] = float(nbar)
    kw["omega_phys"] = omega_phys
    for key in _RATE_KEYS:
        if key not in spec:
            continue
        val = spec.pop(key)
        dims = ("rate", "energy", "time") if key == "gamma" else ("rate", "energy")
        v, dim = parse_quantity(val, dims)
        if dim == "rate":
            v = v / omega_phys
        elif dim == "energy":
            v = v / constants.hbar / omega_phys
        elif dim == "time":
            v = 1.0 / (v * omega_phys)
        kw[key] = v
    for key in ("Q", "fock_cutoff"):
        if key in spec:
            kw[key] = spec.pop(key)
    if base is None:
        if "gamma" not in kw:
            # default emitter lifetime expressed in the chosen mechanical frequency
            kw["gamma"] = SystemParams().gamma * SystemParams().omega_phys / omega_phys
        return SystemParams(**kw), T
    return base.replace(**kw), T


def _grid(spec, name):
    if isinstance(spec, list):
        if name == "z":
            return np.array([_si(v, "length", f"grids.z[{i}]") for i, v in enumerate(spec)])
        return np.array([parse_quantity(v)[0] for v in spec], dtype=float)
    if "num" in spec:
        g = np.linspace(spec["start"], spec["stop"], spec["num"])
    else:
        n = int(math.floor((spec["stop"] - spec["start"]) / spec["step"] + 1e-9)) + 1
        g = spec["start"] + spec["step"] * np.arange(n)
    if "unit" in spec:
        g = g * _si(f"1 {spec['unit']}", None, f"grids.{name}.unit")
    elif name == "z":
        raise ValueError("grids.z: a unit is required (e.g. unit: nm)")
    return g


def _device(spec):
    kw = {}
    units = {"z": "length", "L": "length", "w": "length", "tau_eg": "time", "rho_2d": "areal_density",
             "E_2d": "stiffness"}
    for key, dim in units.items():
        if key in spec:
            kw[key] = _si(spec[key], dim, f"device.{key}")
    if "omega_eg" in spec:
        v, dim = parse_quantity(spec["omega_eg"], ("energy", "rate"))
        if dim is None:
            raise ValueError("device.omega_eg: a unit is required (e.g. '1.95 eV')")
        kw["omega_eg"] = v / constants.hbar if dim == "energy" else v
    if "epsilon" in spec:
        e = spec["epsilon"]
        kw["epsilon"] = complex(e[0], e[1]) if isinstance(e, list) else float(e)
    if "strain" in spec and "mechanical_frequency" in spec:
        raise ValueError("device: give strain or mechanical_frequency, not both")
    if "strain" in spec:
        kw["strain"] = float(spec["strain"])
    if "mechanical_frequency" in spec:
        om = _si(spec["mechanical_frequency"], "rate", "device.mechanical_frequency")
        kw["strain"] = strain_for_frequency(om, kw.get("L", 1e-6), kw.get("E_2d", DeviceParams.E_2d),
                                            kw.get("rho_2d", DeviceParams.rho_2d))
    T = _si(spec["temperature"], "temperature", "device.temperature") if "temperature" in spec else None
    return DeviceParams(**kw), T


def parse_config(raw: dict, scenario: str, cutoff: int | None = None) -> ScenarioConfig:
    """Validate ``raw`` against the scenario schema and build a ScenarioConfig.

    ``cutoff`` overrides the Fock cutoff of every stage.  Raises
    ``ConfigError`` listing every problem found.
    """
    raw = copy.deepcopy(raw)
    problems = _schema_problems(raw, scenario)
    if problems:
        raise ConfigError(problems)
    if cutoff is not None:
        if cutoff < 2:
            raise ConfigError([f"--cutoff: fock_cutoff must be >= 2, got {cutoff}"])
        raw.setdefault("params", {})["fock_cutoff"] = cutoff
        for st in raw.get("stages", []):
            st.setdefault("params", {})["fock_cutoff"] = cutoff
    cfg = ScenarioConfig(scenario=scenario, raw=raw, initial=raw.get("initial", {}),
                         options=raw.get("options", {}), output=raw.get("output", {}))
    try:
        if "device" in raw:
            cfg.device, T = _device(raw["device"])
            if T is not None:
                cfg.temperature = T
        if "params" in raw:
            cfg.params, cfg.temperature = _model_params(raw["params"], temperature=cfg.temperature)
        for st in raw.get("stages", []):
            p, _ = _model_params(st.get("params", {}), base=cfg.params, temperature=cfg.temperature)
            cfg.stages.append((p, float(st["duration"])))
        for name, spec in raw.get("grids", {}).items():
            g = _grid(spec, name)
            if name in ("delta_p", "E_c", "omega", "z") and g.size > 1 and np.any(np.diff(g) <= 0):
                raise ValueError(f"grids.{name} must be strictly increasing")
            if name == "times" and np.any(g <= 0):
                raise ValueError("grids.times must be positive")
            cfg.grids[name] = g
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    if cfg.stages and cfg.params is not None:
        cutoffs = {p.fock_cutoff for p, _ in cfg.stages} | {cfg.params.fock_cutoff}
        if len(cutoffs) > 1:
            raise ConfigError([f"stages and params must share fock_cutoff, got {sorted(cutoffs)}"])
    return cfg


# validation and docs


@dataclass
class ValidationReport:
    scenario: str
    problems: list
    warnings: list
    info: dict

    @property
    def ok(self) -> bool:
        return not self.problems

    def __str__(self):
        lines = [f"scenario: {self.scenario}", f"status: {'ok' if self.ok else 'invalid'}"]
        lines += [f"error: {p}" for p in self.problems]
        lines += [f"warning: {w}" for w in self.warnings]
        lines += [f"{k}: {v}" for k, v in self.info.items()]
        return "\n".join(lines)


def _initial_nbar(cfg):
    return float(cfg.initial.get("nbar", cfg.params.Nbar))


def _uses_initial_state(cfg):
    return cfg.scenario == "rfs-timed" or (cfg.scenario == "eit-sweep" and "times" in cfg.grids)


def validate(raw: dict, scenario: str, cutoff: int | None = None) -> ValidationReport:
    """Dry-run check: schema, parameter sanity, truncation and memory feasibility."""
    try:
        cfg = parse_config(raw, scenario, cutoff)
    except ConfigError as exc:
        return ValidationReport(scenario, exc.problems, [], {})
    warns, info = [], {}
    if cfg.params is not None:
        p = cfg.params
        d = p.space.total_dim
        L = liouvillian(p)
        info["hilbert_dim"] = d
        info["liouvillian_dim"] = d * d
        info["liouvillian_nnz"] = int(L.nnz)
        # sparse LU fill for these banded generators is empirically a few tens of nnz(L)
        info["estimated_peak_memory_mb"] = round(L.nnz * 30 * 20 / 2 ** 20 + 16 * d * d * 8 / 2 ** 20, 1)
        info["gamma_over_Omega"] = p.gamma
        info["Gamma_over_Omega"] = p.Gamma
        tol = cfg.option("tail_tol", 1e-6)
        if _uses_initial_state(cfg):
            nb = _initial_nbar(cfg)
            tail = thermal_occupation_tail(nb, p.fock_cutoff)
            if tail >= tol:
                warns.append(
                    f"thermal initial state with nbar={nb:g} has tail weight {tail:.3g} beyond fock_cutoff="
                    f"{p.fock_cutoff} (tolerance {tol:g}); needs fock_cutoff >= {minimal_thermal_cutoff(nb, tol)}"
                )
        if p.G > 2.0 * p.Omega and p.fock_cutoff < 40:
            warns.append(f"G={p.G:g} with fock_cutoff={p.fock_cutoff} is likely under-resolved; enable "
                         "options.converge")
        if scenario == "eit-analytic" and p.G > p.Omega:
            warns.append("the analytic sideband series is only reliable for G <~ Omega")
    if cfg.device is not None:
        res = coupling_rate(cfg.device)
        info["G_over_2pi_MHz"] = res.G_hz / 1e6
    return ValidationReport(scenario, [], warns, info)


def describe(scenario: str) -> str:
    """Human-readable description of a scenario and its config fields."""
    if scenario not in SCENARIOS:
        return f"unknown scenario {scenario!r}; choose one of {', '.join(SCENARIOS)}"
    s = SCENARIOS[scenario]
    req = ["device"] if scenario == "design" else ["params"]
    lines = [
        f"{scenario}: {s['doc']}",
        "",
        "required: " + ", ".join(req + [f"grids.{g}" for g in s["grids"]]),
        "params: " + ", ".join(_PARAMS_SCHEMA["properties"]),
        "  rates are numbers in units of Omega or strings with units ('12 MHz', '2 ueV'); "
        "gamma also accepts a lifetime ('3.2 ns')",
        "grids: a list of values or {start, stop, num | step[, unit]}",
        "options: " + ", ".join(_OPTIONS),
        "output: dir, plots",
    ]
    if scenario in ("rfs-timed", "eit-sweep"):
        lines.append("stages: list of {params: overrides, duration: mechanical periods}; initial: {nbar, emitter}")
    if scenario == "design":
        lines.append("device: " + ", ".join(_DEVICE_SCHEMA["properties"]) + " (physical quantities need units)")
    return "\n".join(lines)


# CSV I/O


@dataclass
class CsvTable:
    metadata: dict
    columns: dict

    def __getitem__(self, name):
        return self.columns[name]


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, columns: dict, metadata: dict):
    """Write columns with ``#``-prefixed JSON metadata header lines."""
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="") as fh:
        for k, v in metadata.items():
            fh.write(f"# {k}: {json.dumps(v, default=_json_default)}\n")
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(columns[c][i]) for c in names])
    return Path(path)


def read_csv(path) -> CsvTable:
    """Read a file written by :func:`write_csv` back into arrays."""
    meta, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                meta[key] = json.loads(val)
            else:
                body.append(line)
    rows = list(csv.reader(body))
    header, data = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in data]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return CsvTable(meta, cols)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if hasattr(o, "__dataclass_fields__"):
        return {k: getattr(o, k) for k in o.__dataclass_fields__}
    return str(o)


# manifest


@dataclass
class RunManifest:
    config_hash: str
    scenario: str
    version: str
    started: str
    finished: str = ""
    wall_clock_s: float = 0.0
    tolerances: dict = field(default_factory=dict)
    cutoff: int | None = None
    gates: dict = field(default_factory=dict)
    status: str = "complete"
    seed: int | None = None
    threads: int = 1
    files: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2, default=_json_default) + "\n")
        return path


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__

        return __version__


# point workers (top level so they pickle for the process pool)


def _steady_point(p):
    try:
        rho = steady_state(liouvillian(p))
    except (SolverError, ValueError) as exc:
        return {"error": str(exc)}
    return _observables(p, rho)


def _timed_point(args):
    p, rho0, t, method = args
    try:
        rho = propagate(liouvillian(p), rho0, 2.0 * math.pi * t, method=method)
    except (SolverError, ValueError) as exc:
        return {"error": str(exc)}
    return _observables(p, rho)


def _observables(p, rho):
    _, _, n = boson_ops(p.space)
    out = {"nbar": expectation(rho, n), "excited": expectation(rho, emitter_op("e", "e", p.space))}
    if p.E_p > 0:
        chi = coherence(rho, p.space) / (1j * p.E_p) * (p.gamma / 2.0)
        out["absorption"], out["dispersion"] = chi.real, chi.imag
    else:
        out["absorption"] = out["dispersion"] = float("nan")
    return out


def _sweep(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# scenarios


class _Run:
    def __init__(self, cfg, out, threads, manifest):
        self.cfg, self.out, self.threads, self.manifest = cfg, out, threads, manifest

    def meta(self, **extra):
        m = {"lambda-phonon": self.manifest.version, "manifest": self.manifest.config_hash,
             "manifest_file": "manifest.json", "scenario": self.cfg.scenario}
        if self.cfg.params is not None:
            m["params"] = self.cfg.params
        m.update(extra)
        return m

    def write(self, name, columns, **extra):
        status = "partial" if "status" in columns and any(s != "ok" for s in columns["status"]) else "complete"
        path = write_csv(self.out / name, columns, self.meta(status=status, **extra))
        self.manifest.files.append(name)
        if status == "partial":
            self.manifest.status = "partial"
        return path

    def gate(self, name, p, compute):
        """Fock cutoff convergence gate on a scalar observable at a representative point."""
        if not self.cfg.option("converge", True):
            self.manifest.gates[name] = "skipped"
            return
        try:
            val, cut, hist = converge_cutoff(compute, p, step=self.cfg.option("gate_step", 10),
                                             rtol=self.cfg.option("gate_rtol", 0.01),
                                             max_cutoff=self.cfg.option("max_cutoff", 100))
            self.manifest.gates[name] = {"passed": True, "cutoff": cut, "history": hist}
        except ConvergenceError as exc:
            self.manifest.gates[name] = {"passed": False, "message": str(exc)}

    def steady_rows(self, items):
        res = _sweep(_steady_point, items, self.threads)
        for r in res:
            if "error" in r:
                self.manifest.errors.append(r["error"])
        return res

    # individual scenarios

    def cool_map(self):
        p, g = self.cfg.params, self.cfg.grids
        ratio = self.cfg.option("probe_ratio", 0.1)
        items = [p.replace(delta_p=float(d), E_c=float(e), E_p=ratio * float(e)) for e in g["E_c"] for d in g["delta_p"]]
        res = self.steady_rows(items)
        nb = np.array([r.get("nbar", np.nan) for r in res])
        with np.errstate(divide="ignore", invalid="ignore"):
            eff = p.Nbar / nb
        self.write("cool_map.csv", {
            "delta_p": [q.delta_p for q in items], "E_c": [q.E_c for q in items], "nbar": nb,
            "efficiency": eff, "status": ["ok" if "error" not in r else "error" for r in res]},
            probe_ratio=ratio)
        if np.isfinite(nb).any():
            i = int(np.nanargmin(nb))
            self.manifest.results["min_nbar"] = {"nbar": nb[i], "delta_p": items[i].delta_p, "E_c": items[i].E_c}
            self.gate("min_nbar", items[i], _nbar_steady)

    def cool_curve(self):
        p = self.cfg.params
        items = [p.replace(delta_p=float(d)) for d in self.cfg.grids["delta_p"]]
        res = self.steady_rows(items)
        nb = np.array([r.get("nbar", np.nan) for r in res])
        self.write("cool_curve.csv", {
            "delta_p": self.cfg.grids["delta_p"], "nbar": nb,
            "absorption": [r.get("absorption", np.nan) for r in res],
            "status": ["ok" if "error" not in r else "error" for r in res]})
        if np.isfinite(nb).any():
            i = int(np.nanargmin(nb))
            self.manifest.results["min_nbar"] = {"nbar": nb[i], "delta_p": items[i].delta_p}
            if self.cfg.option("gap", False):
                from .solvers import spectral_gap

                gap = spectral_gap(liouvillian(items[i]))
                self.manifest.results["gap"] = gap.gap
                self.manifest.results["t_ss_periods"] = gap.t_ss
            self.gate("min_nbar", items[i], _nbar_steady)

    def _initial_state(self):
        cfg = self.cfg
        rho = thermal_state(_initial_nbar(cfg), cfg.params.space, emitter=cfg.initial.get("emitter", "down"),
                            tail_tol=cfg.option("tail_tol", 1e-6))
        traj = []
        if cfg.stages:
            traj = evolve_stages(cfg.stages, rho, observables=_stage_observables,
                                 points_per_period=cfg.option("points_per_period", 4),
                                 method=cfg.option("method", "rk"), rtol=cfg.option("rtol", RTOL),
                                 atol=cfg.option("atol", ATOL))
            rho = traj[-1].final_state
        return rho, traj

    def eit_sweep(self):
        p, g = self.cfg.params, self.cfg.grids
        if p.E_p <= 0:
            raise ConfigError(["params.E_p: absorption needs a non-zero probe"])
        if "times" not in g:
            items = [p.replace(delta_p=float(d)) for d in g["delta_p"]]
            res = self.steady_rows(items)
            cols = {"delta_p": g["delta_p"]}
        else:
            rho0, _ = self._initial_state()
            method = self.cfg.option("method", "rk")
            pts = [(float(t), float(d)) for t in g["times"] for d in g["delta_p"]]
            res = _sweep(_timed_point, [(p.replace(delta_p=d), rho0, t, method) for t, d in pts], self.threads)
            for r in res:
                if "error" in r:
                    self.manifest.errors.append(r["error"])
            cols = {"t": [t for t, _ in pts], "delta_p": [d for _, d in pts]}
        cols.update({k: [r.get(k, np.nan) for r in res] for k in ("absorption", "dispersion", "nbar")})
        cols["status"] = ["ok" if "error" not in r else "error" for r in res]
        self.write("eit_sweep.csv", cols)
        if "times" not in g:
            a = np.array(cols["absorption"], dtype=float)
            if np.isfinite(a).any():
                i = int(np.nanargmax(a))
                self.gate("peak_absorption", p.replace(delta_p=float(g["delta_p"][i])), _absorption_steady)

    def eit_analytic(self):
        p = self.cfg.params
        res = eit_absorption_analytic(p, self.cfg.grids["delta_p"], n_max=self.cfg.option("n_max"),
                                      polaron_shift=self.cfg.option("polaron_shift", True))
        self.write("eit_analytic.csv", {"delta_p": res.axis, "absorption": res.values,
                                        "dispersion": res.extras["dispersion"], "n_max": res.extras["n_max"]},
                   alpha=res.metadata["alpha"], polaron_shift=res.metadata["polaron_shift"])
        self.manifest.gates["series"] = "converged at every point"

    def _rfs_kwargs(self):
        o = self.cfg.option
        return dict(t_max=o("t_max", 60.0), n_tau=o("n_tau"), window=o("window", "hann"), method=o("method", "rk"),
                    rtol=o("rtol", RTOL), atol=o("atol", ATOL))

    def rfs_steady(self):
        p = self.cfg.params
        r = rfs(p, self.cfg.grids["omega"], **self._rfs_kwargs())
        self.write("rfs_steady.csv", {"omega": r.axis, "S": r.values, "down": r.extras["down"], "up": r.extras["up"]},
                   nbar=r.extras["nbar"], excited_population=r.extras["excited_population"],
                   window=r.metadata["window"], t_max=r.metadata["t_max"])
        self.manifest.results.update(nbar=r.extras["nbar"], excited_population=r.extras["excited_population"])
        self.gate("excited_population", p, _excited_steady)

    def rfs_timed(self):
        cfg, p = self.cfg, self.cfg.params
        rho, pre = self._initial_state()
        L = liouvillian(p)
        t0 = sum(d for _, d in cfg.stages)
        occ_t, occ_n, occ_e, occ_stage = [], [], [], []
        for k, tr in enumerate(pre):
            occ_t += list(tr.periods)
            occ_n += list(tr["nbar"])
            occ_e += list(tr["excited"])
            occ_stage += [k] * len(tr.times)
        obs = _stage_observables(p.space)
        ppp = cfg.option("points_per_period", 4)
        rows = {"t": [], "omega": [], "S": [], "down": [], "up": []}
        summary = []
        t_prev = 0.0
        for t in np.sort(cfg.grids["times"]):
            npts = max(2, int(math.ceil((t - t_prev) * ppp)) + 1)
            tr = evolve(L, rho, 2.0 * math.pi * np.linspace(t_prev, t, npts), observables=obs,
                        method=cfg.option("method", "rk"), rtol=cfg.option("rtol", RTOL), atol=cfg.option("atol", ATOL))
            occ_t += list(t0 + tr.periods)
            occ_n += list(tr["nbar"])
            occ_e += list(tr["excited"])
            occ_stage += [len(pre)] * len(tr.times)
            rho = tr.final_state
            r = rfs(p, cfg.grids["omega"], state="at_time", t=0.0, rho0=rho, **self._rfs_kwargs())
            rows["t"] += [float(t)] * r.axis.size
            rows["omega"] += list(r.axis)
            rows["S"] += list(r.values)
            rows["down"] += list(r.extras["down"])
            rows["up"] += list(r.extras["up"])
            summary.append({"t": float(t), "nbar": r.extras["nbar"], "excited_population": r.extras["excited_population"]})
            t_prev = float(t)
        self.write("rfs_timed.csv", rows, window=cfg.option("window", "hann"), emission_start=t0)
        self.write("occupation.csv", {"t": occ_t, "stage": occ_stage, "nbar": occ_n, "excited": occ_e},
                   emission_start=t0)
        self.manifest.results["timed"] = summary
        self.manifest.gates["cutoff"] = "not run for time-resolved scenarios; rerun with --cutoff to compare"

    def design(self):
        dev = self.cfg.device
        zs = self.cfg.grids.get("z", np.array([dev.z]))
        rows = {k: [] for k in ("z", "delta_omega", "pull", "Omega_m", "z_zp", "G", "G_over_2pi", "G_tau",
                                "strong_coupling", "G_over_Omega")}
        for z in zs:
            d = dev.replace(z=float(z))
            c = coupling_rate(d)
            sp_ = to_system_params(d, temperature=self.cfg.temperature)
            for k, v in (("z", z), ("delta_omega", c.delta_omega), ("pull", c.pull), ("Omega_m", c.Omega_m),
                         ("z_zp", c.z_zp), ("G", c.G), ("G_over_2pi", c.G_hz), ("G_tau", abs(c.G) * d.tau_eg),
                         ("strong_coupling", c.strong_coupling), ("G_over_Omega", sp_.G)):
                rows[k].append(v)
        self.write("design.csv", rows, device=dev, temperature=self.cfg.temperature)
        self.manifest.results["G_over_2pi_MHz"] = [g / 1e6 for g in rows["G_over_2pi"]]


def _stage_observables(space):
    _, _, n = boson_ops(space)
    return {"nbar": n, "excited": emitter_op("e", "e", space)}


def _nbar_steady(p):
    return _steady_point(p)["nbar"]


def _absorption_steady(p):
    return _steady_point(p)["absorption"]


def _excited_steady(p):
    return _steady_point(p)["excited"]


_DISPATCH = {
    "cool-map": _Run.cool_map,
    "cool-curve": _Run.cool_curve,
    "eit-sweep": _Run.eit_sweep,
    "eit-analytic": _Run.eit_analytic,
    "rfs-steady": _Run.rfs_steady,
    "rfs-timed": _Run.rfs_timed,
    "design": _Run.design,
}


def _out_dir(cfg, out):
    return Path(out or cfg.output.get("dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def run(cfg: ScenarioConfig, out=None, threads=1, seed=None, plots=None) -> tuple[int, RunManifest]:
    """Execute a parsed scenario; returns ``(exit_code, manifest)``.

    Outputs go to ``out`` (else ``output.dir``, else ``$LAMBDA_PHONON_OUT``,
    else ``./lambda-phonon-out``).  A lockfile keeps one scenario process
    per output directory.
    """
    out = _out_dir(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        np.random.seed(seed)
    manifest = RunManifest(
        config_hash=cfg.config_hash, scenario=cfg.scenario, version=_version(),
        started=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        tolerances={"rtol": cfg.option("rtol", RTOL), "atol": cfg.option("atol", ATOL), "steady_state": 1e-9,
                    "gate_rtol": cfg.option("gate_rtol", 0.01)},
        cutoff=cfg.params.fock_cutoff if cfg.params is not None else None, seed=seed, threads=threads,
    )
    lock = FileLock(str(out / LOCK_NAME), timeout=0)
    try:
        lock.acquire()
    except Timeout:
        manifest.status = "busy"
        return EXIT_BUSY, manifest
    t_start = time.perf_counter()
    code = EXIT_OK
    try:
        try:
            _DISPATCH[cfg.scenario](_Run(cfg, out, threads, manifest))
        except (SolverError, TruncationError) as exc:
            manifest.status = "failed"
            manifest.errors.append(f"{type(exc).__name__}: {exc}")
            code = EXIT_SOLVER
        if manifest.status == "partial":
            code = EXIT_SOLVER
        if code == EXIT_OK and any(isinstance(g, dict) and not g["passed"] for g in manifest.gates.values()):
            manifest.status = "gate-failed"
            code = EXIT_GATE
        if plots if plots is not None else cfg.output.get("plots", False):
            _plot_all(out, manifest)
        manifest.finished = _dt.datetime.now(_dt.timezone.utc).isoformat()
        manifest.wall_clock_s = time.perf_counter() - t_start
        manifest.write(out)
    finally:
        lock.release()
    return code, manifest


# plots


def _plot_all(out, manifest):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        manifest.errors.append("plots requested but matplotlib is not installed")
        return
    for name in list(manifest.files):
        tab = read_csv(out / name)
        c = tab.columns
        fig, ax = plt.subplots(figsize=(6, 4))
        if "E_c" in c:
            x, y = np.unique(c["delta_p"]), np.unique(c["E_c"])
            z = c["nbar"].reshape(y.size, x.size)
            m = ax.pcolormesh(x, y, np.log10(z), shading="auto")
            fig.colorbar(m, ax=ax, label="log10 nbar")
            ax.set(xlabel="delta_p / Omega", ylabel="E_c / Omega")
        elif "omega" in c and "t" in c:
            for t in np.unique(c["t"]):
                sel = c["t"] == t
                ax.plot(c["omega"][sel], c["S"][sel], lw=0.8, label=f"t = {t:g}")
            ax.set(xlabel="(omega - omega_eg) / Omega", ylabel="S")
            ax.legend()
        elif "omega" in c:
            ax.plot(c["omega"], c["S"], lw=0.8)
            ax.set(xlabel="(omega - omega_eg) / Omega", ylabel="S")
        elif "delta_p" in c and "t" in c:
            for t in np.unique(c["t"]):
                sel = c["t"] == t
                ax.plot(c["delta_p"][sel], c["absorption"][sel], label=f"t = {t:g}")
            ax.set(xlabel="delta_p / Omega", ylabel="absorption")
            ax.legend()
        elif "delta_p" in c:
            key = "nbar" if name.startswith("cool") else "absorption"
            ax.plot(c["delta_p"], c[key])
            if key == "nbar":
                ax.set_yscale("log")
            ax.set(xlabel="delta_p / Omega", ylabel=key)
        elif "stage" in c:
            ax.plot(c["t"], c["nbar"])
            ax.set(xlabel="t / tau_m", ylabel="nbar")
        elif "z" in c:
            ax.loglog(c["z"], np.abs(c["G_over_2pi"]), marker="o")
            ax.set(xlabel="z [m]", ylabel="|G| / 2 pi [Hz]")
        svg = out / (Path(name).stem + ".svg")
        fig.tight_layout()
        fig.savefig(svg)
        plt.close(fig)
        manifest.files.append(svg.name)


# command line


def _parser():
    ap = argparse.ArgumentParser(prog="lambda-phonon", description="Lambda-emitter / mechanical-mode scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, s in SCENARIOS.items():
        sp_ = sub.add_parser(name, help=s["doc"].split(".")[0])
        sp_.add_argument("--config", required=True, help="YAML or JSON config file")
        sp_.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        sp_.add_argument("--threads", type=int, default=1, help="worker processes for grid sweeps")
        sp_.add_argument("--cutoff", type=int, help="override the Fock cutoff of every stage")
        sp_.add_argument("--seed", type=int, help="seed for numpy's global generator (recorded in the manifest)")
        sp_.add_argument("--plots", action="store_true", help="also write SVG plots from the CSV files")
    v = sub.add_parser("validate", help="dry-run schema and feasibility check")
    v.add_argument("scenario")
    v.add_argument("--config", required=True)
    v.add_argument("--cutoff", type=int)
    d = sub.add_parser("describe", help="describe a scenario")
    d.add_argument("scenario", nargs="?")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "describe":
        names = [args.scenario] if args.scenario else list(SCENARIOS)
        print("\n\n".join(describe(n) for n in names))
        return EXIT_OK if all(n in SCENARIOS for n in names) else EXIT_CONFIG
    try:
        raw = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        report = validate(raw, args.scenario, args.cutoff)
        print(report)
        return EXIT_OK if report.ok else EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(raw, args.command, args.cutoff)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, manifest = run(cfg, args.out, args.threads, args.seed, plots=args.plots or None)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    if code == EXIT_BUSY:
        print(f"error: another run holds the lock in {_out_dir(cfg, args.out)}", file=sys.stderr)
    for e in manifest.errors:
        print(f"error: {e}", file=sys.stderr)
    print(f"{cfg.scenario}: {manifest.status}; files: {', '.join(manifest.files)}")
    return code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
