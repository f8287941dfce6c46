"""Run configuration: a strict TOML schema with documented defaults.

parse_config turns a config document into a validated RunConfig.  Unknown
sections or keys are rejected by name, every physical bound is checked, and
scenario-specific requirements (for example that the front-bound experiment
needs p > 3, the bounded-propagation regime) are enforced at parse time so
a run never starts from an inconsistent description.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .experiments import bump_profile
from .hysteresis import ConstantDensity
from .solver import (
    BoundaryCondition,
    Geometry,
    Permeability,
    Problem,
    SolverConfig,
)

__all__ = ["ConfigError", "RunConfig", "parse_config"]


class ConfigError(ValueError):
    """Raised for malformed documents, unknown keys, or violated bounds."""


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; build helpers assemble solver inputs."""

    geometry: Geometry
    density: ConstantDensity
    permeability: Permeability
    bc: BoundaryCondition
    p: float
    lambda_max: float
    tau: float
    steps: int
    solver: SolverConfig
    initial_kind: str          # zero | bump | file
    R0: float
    amplitude: float
    memory_mode: str           # wedge
    initial_file: str | None
    scenario: str              # none | front-bound | regimes | loops | comparison
    R1: float
    R: float | None
    envelope_shrink: float
    comparison_tol: float
    p_list: tuple
    loop_path: tuple
    scale: float
    order_tol: float
    output_dir: str
    formats: tuple
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def problem(self) -> Problem:
        return Problem(self.geometry, self.density, self.permeability,
                       self.bc, self.p, self.lambda_max)

    def initial_u(self) -> np.ndarray:
        if self.initial_kind == "zero":
            return np.zeros(self.geometry.n_nodes)
        if self.initial_kind == "bump":
            return bump_profile(self.geometry.x, self.R0, self.amplitude)
        from .io import read_timeseries
        cols = read_timeseries(self.initial_file)
        if "u" not in cols:
            raise ConfigError(f"[initial].file {self.initial_file!r} has no "
                              "'u' column")
        u = cols["u"]
        if u.size != self.geometry.n_nodes:
            raise ConfigError(
                f"[initial].file {self.initial_file!r} has {u.size} rows; the "
                f"grid has {self.geometry.n_nodes} nodes")
        return u


_SCHEMA = {
    "geometry": {
        "kind": (str, "interval"),
        "length": (float, None),       # required
        "nodes": (int, 601),
        "dimension": (int, 1),
    },
    "material": {
        "kappa": (float, 1.0),
        "density": (str, "constant"),
        "rho": (float, 2.0),
        "gbar": (float, 0.0),
        "lambda_max": (float, 1.0),
    },
    "scheme": {
        "p": (float, None),            # required
        "tau": (float, None),          # required
        "steps": (int, 100),
        "omega": (float, 1.0),
        "tol": (float, 1e-11),
        "step_tol": (float, 1e-11),
        "max_iters": (int, 200),
        "method": (str, "auto"),
        "energy_tol": (float, 1e-7),
    },
    "initial": {
        "kind": (str, "zero"),
        "R0": (float, 1.0),
        "amplitude": (float, None),    # defaults to lambda_max
        "memory": (str, "wedge"),
        "file": (str, ""),
    },
    "experiment": {
        "scenario": (str, "none"),
        "R1": (float, None),           # defaults to geometry length
        "R": (float, None),            # optional: midpoint when absent
        "envelope_shrink": (float, 1.0),
        "comparison_tol": (float, 1e-8),
        "p_list": (list, (2.5, 3.0, 3.5, 4.0, 6.0)),
        "path": (list, (0.0, 1.0, 0.0, 1.0)),
        "scale": (float, 1.1),
        "order_tol": (float, 1e-9),
    },
    "output": {
        "directory": (str, "out"),
        "formats": (list, ("csv", "json")),
    },
}

_REQUIRED = {("geometry", "length"), ("scheme", "p"), ("scheme", "tau")}


def _coerce(section, key, want, value):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}].{key} must be a number, "
                              f"got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}].{key} must be an integer, "
                              f"got {value!r}")
        return int(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"[{section}].{key} must be a string, "
                              f"got {value!r}")
        return value
    if want is list:
        if not isinstance(value, list):
            raise ConfigError(f"[{section}].{key} must be an array, "
                              f"got {value!r}")
        return tuple(value)
    raise AssertionError(want)


def _fail(section, key, value, requirement):
    raise ConfigError(f"[{section}].{key} = {value!r} rejected: {requirement}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run description."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    for section in doc:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(doc[section], dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in doc[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}].{key}")

    cfg = {}
    for section, keys in _SCHEMA.items():
        got = doc.get(section, {})
        out = {}
        for key, (want, default) in keys.items():
            if key in got:
                out[key] = _coerce(section, key, want, got[key])
            elif (section, key) in _REQUIRED:
                raise ConfigError(f"missing required key [{section}].{key}")
            else:
                out[key] = default
        cfg[section] = out

    g, m, s, ini, e, o = (cfg["geometry"], cfg["material"], cfg["scheme"],
                          cfg["initial"], cfg["experiment"], cfg["output"])

    # geometry
    if g["kind"] not in ("interval", "radial"):
        _fail("geometry", "kind", g["kind"], "expected 'interval' or 'radial'")
    if g["length"] <= 0.0:
        _fail("geometry", "length", g["length"], "must be positive")
    if g["nodes"] < 2:
        _fail("geometry", "nodes", g["nodes"], "need at least 2 grid nodes")
    if g["dimension"] < 1:
        _fail("geometry", "dimension", g["dimension"], "must be >= 1")
    if g["kind"] == "interval" and g["dimension"] != 1:
        _fail("geometry", "dimension", g["dimension"],
              "interval grids are one-dimensional")
    if g["kind"] == "interval":
        geometry = Geometry.interval(g["length"], g["nodes"])
    else:
        geometry = Geometry.radial(g["length"], g["nodes"], g["dimension"])

    # material
    if m["kappa"] <= 0.0:
        _fail("material", "kappa", m["kappa"], "must be positive")
    if m["density"] != "constant":
        _fail("material", "density", m["density"],
              "config files support constant density; other kinds are "
              "library-level")
    if m["rho"] <= 0.0:
        _fail("material", "rho", m["rho"], "must be positive")
    if m["lambda_max"] <= 0.0:
        _fail("material", "lambda_max", m["lambda_max"], "must be positive")
    density = ConstantDensity(m["rho"], gbar=m["gbar"])
    permeability = Permeability.constant(m["kappa"])

    # scheme
    if s["p"] <= 2.0:
        _fail("scheme", "p", s["p"], "flux exponent must satisfy p > 2")
    if s["tau"] <= 0.0:
        _fail("scheme", "tau", s["tau"], "time step must be positive")
    if s["steps"] < 1:
        _fail("scheme", "steps", s["steps"], "need at least one step")
    if not (0.0 <= s["omega"] <= 1.0):
        _fail("scheme", "omega", s["omega"],
              "boundary parameter must lie in [0, 1]")
    if s["method"] not in ("auto", "picard"):
        _fail("scheme", "method", s["method"], "expected 'auto' or 'picard'")
    for key in ("tol", "step_tol", "energy_tol"):
        if s[key] <= 0.0:
            _fail("scheme", key, s[key], "tolerance must be positive")
    if s["max_iters"] < 1:
        _fail("scheme", "max_iters", s["max_iters"], "must be >= 1")
    solver = SolverConfig(tol=s["tol"], step_tol=s["step_tol"],
                          max_iters=s["max_iters"], method=s["method"],
                          energy_tol=s["energy_tol"])
    bc = BoundaryCondition(s["omega"])

    # initial data
    if ini["kind"] not in ("zero", "bump", "file"):
        _fail("initial", "kind", ini["kind"],
              "expected 'zero', 'bump', or 'file'")
    amplitude = ini["amplitude"]
    if amplitude is None:
        amplitude = m["lambda_max"]
    if ini["kind"] == "bump":
        if not (0.0 < ini["R0"] < geometry.length):
            _fail("initial", "R0", ini["R0"],
                  f"bump radius must lie inside the domain "
                  f"(0, {geometry.length})")
        if not (0.0 < abs(amplitude) <= m["lambda_max"]):
            _fail("initial", "amplitude", amplitude,
                  f"must be nonzero with |amplitude| <= lambda_max = "
                  f"{m['lambda_max']}")
    if ini["kind"] == "file" and not ini["file"]:
        raise ConfigError("missing required key [initial].file for "
                          "kind = 'file'")
    if ini["memory"] != "wedge":
        _fail("initial", "memory", ini["memory"],
              "only the 'wedge' memory mode is configurable")

    # experiment
    scenarios = ("none", "front-bound", "regimes", "loops", "comparison")
    if e["scenario"] not in scenarios:
        _fail("experiment", "scenario", e["scenario"],
              f"expected one of {', '.join(scenarios)}")
    if e["scenario"] == "front-bound" and s["p"] <= 3.0:
        _fail("scheme", "p", s["p"],
              "the front-bound experiment needs p > 3 (finite propagation "
              "regime; the wave integral diverges otherwise)")
    R1 = e["R1"] if e["R1"] is not None else geometry.length
    if e["scenario"] == "front-bound":
        if not (ini["R0"] < R1):
            _fail("experiment", "R1", R1,
                  f"must exceed the initial support radius R0 = {ini['R0']}")
        if e["R"] is not None and not (ini["R0"] < e["R"] < R1):
            _fail("experiment", "R", e["R"],
                  f"must lie strictly between R0 = {ini['R0']} and R1 = {R1}")
    if not (0.0 < e["envelope_shrink"] <= 1.0):
        _fail("experiment", "envelope_shrink", e["envelope_shrink"],
              "must lie in (0, 1]")
    if e["comparison_tol"] <= 0.0:
        _fail("experiment", "comparison_tol", e["comparison_tol"],
              "must be positive")
    if e["order_tol"] <= 0.0:
        _fail("experiment", "order_tol", e["order_tol"], "must be positive")
    p_list = tuple(float(v) for v in e["p_list"])
    if not p_list:
        _fail("experiment", "p_list", e["p_list"], "must be nonempty")
    if any(v <= 2.0 for v in p_list):
        _fail("experiment", "p_list", e["p_list"],
              "every exponent must satisfy p > 2")
    loop_path = tuple(float(v) for v in e["path"])
    if len(loop_path) < 2:
        _fail("experiment", "path", e["path"], "need at least two values")
    if any(abs(v) > m["lambda_max"] for v in loop_path):
        _fail("experiment", "path", e["path"],
              f"values must stay within [-{m['lambda_max']}, "
              f"{m['lambda_max']}]")
    if e["scale"] <= 0.0:
        _fail("experiment", "scale", e["scale"], "must be positive")
    if (e["scenario"] == "comparison" and ini["kind"] == "bump"
            and abs(amplitude) * e["scale"] > m["lambda_max"]):
        _fail("experiment", "scale", e["scale"],
              f"scaled amplitude {abs(amplitude) * e['scale']} exceeds "
              f"lambda_max = {m['lambda_max']}")

    # output
    known_formats = ("csv", "json", "svg")
    formats = tuple(str(v) for v in o["formats"])
    for v in formats:
        if v not in known_formats:
            _fail("output", "formats", v,
                  f"expected formats among {', '.join(known_formats)}")

    return RunConfig(
        geometry=geometry, density=density, permeability=permeability,
        bc=bc, p=s["p"], lambda_max=m["lambda_max"], tau=s["tau"],
        steps=s["steps"], solver=solver,
        initial_kind=ini["kind"], R0=ini["R0"], amplitude=amplitude,
        memory_mode=ini["memory"], initial_file=ini["file"] or None,
        scenario=e["scenario"], R1=R1, R=e["R"],
        envelope_shrink=e["envelope_shrink"],
        comparison_tol=e["comparison_tol"], p_list=p_list,
        loop_path=loop_path, scale=e["scale"], order_tol=e["order_tol"],
        output_dir=o["directory"], formats=formats, raw=cfg,
    )
