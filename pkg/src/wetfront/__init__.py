"""Moisture transport with Preisach hysteresis and p-Laplacian flux.

The package has five parts:

- ``hysteresis``: play operators, memory curves, Preisach densities, branch
  and limit curves of the saturation law.
- ``wave``: traveling-wave profiles of the degenerate flow, minimal wave
  speeds, and the propagation envelope R(t) = R0 + C_p t^(1/p).
- ``solver``: the implicit time-discrete scheme on interval and radial grids
  with per-step mass/energy diagnostics and comparison checks.
- ``experiments``: packaged studies (front bound, regime table, hysteresis
  loops, ordering of solutions).
- ``config``/``io``/``cli``: TOML run configs, deterministic CSV/SVG/snapshot
  output, and the command-line front end.
"""

from .hysteresis import (
    BranchPoint,
    ConstantDensity,
    GridDensity,
    MemoryCurve,
    QuadratureError,
    SeparableDensity,
    branch_value,
    limit_drying,
    limit_wetting,
    make_initial_memory,
    memory_energy,
    memory_update,
    play_update,
    preisach_output,
    primary_wetting,
    validate_hysteresis_inputs,
)
from .wave import (
    FrontEnvelope,
    WaveIntegral,
    WaveProfile,
    build_wave_profile,
    envelope_from_problem,
    envelope_radius,
    evaluate_wave,
    min_wave_speed,
    wave_integral_F,
)
from .solver import (
    BoundaryCondition,
    Geometry,
    InvariantViolation,
    Permeability,
    Problem,
    SimulationResult,
    SimulationState,
    SolverConfig,
    SolverConvergenceError,
    StepDiagnostics,
    comparison_check,
    initial_state,
    run_simulation,
    support_radius,
    time_step,
    validate_initial_state,
)
from .experiments import (
    FrontBoundReport,
    LoopTrace,
    OrderingReport,
    bump_profile,
    comparison_experiment,
    front_bound_experiment,
    loop_envelope_check,
    loop_experiment,
    regime_classification,
)
from .config import ConfigError, RunConfig, parse_config
from .io import (
    emit_plot,
    load_snapshot,
    read_timeseries,
    save_snapshot,
    write_timeseries,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition",
    "BranchPoint",
    "ConfigError",
    "ConstantDensity",
    "FrontBoundReport",
    "FrontEnvelope",
    "Geometry",
    "GridDensity",
    "InvariantViolation",
    "LoopTrace",
    "MemoryCurve",
    "OrderingReport",
    "Permeability",
    "Problem",
    "QuadratureError",
    "RunConfig",
    "SeparableDensity",
    "SimulationResult",
    "SimulationState",
    "SolverConfig",
    "SolverConvergenceError",
    "StepDiagnostics",
    "WaveIntegral",
    "WaveProfile",
    "branch_value",
    "build_wave_profile",
    "bump_profile",
    "comparison_check",
    "comparison_experiment",
    "emit_plot",
    "envelope_from_problem",
    "envelope_radius",
    "evaluate_wave",
    "front_bound_experiment",
    "initial_state",
    "limit_drying",
    "limit_wetting",
    "load_snapshot",
    "loop_envelope_check",
    "loop_experiment",
    "make_initial_memory",
    "memory_energy",
    "memory_update",
    "min_wave_speed",
    "parse_config",
    "play_update",
    "preisach_output",
    "primary_wetting",
    "read_timeseries",
    "regime_classification",
    "run_simulation",
    "save_snapshot",
    "support_radius",
    "time_step",
    "validate_hysteresis_inputs",
    "validate_initial_state",
    "wave_integral_F",
    "write_timeseries",
    "__version__",
]
