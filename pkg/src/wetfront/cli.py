"""Command-line surface: simulate, wave, front, regimes, loops, validate.

Exit codes: 0 when the requested run or check passes, 2 when a numerical
assertion fails (experiment bound violated, validation hard failure, solver
breakdown), 1 for usage or configuration errors.  All CSV outputs are
byte-identical across runs of the same config and seed; JSON summaries may
carry wall-clock runtimes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import ConfigError, parse_config
from .experiments import (
    comparison_experiment,
    front_bound_experiment,
    loop_envelope_check,
    loop_experiment,
    regime_classification,
)
from .hysteresis import make_initial_memory
from .io import emit_plot, ensure_dir, save_snapshot, write_timeseries
from .solver import (
    InvariantViolation,
    SolverConvergenceError,
    initial_state,
    run_simulation,
    validate_initial_state,
)
from .wave import build_wave_profile, envelope_from_problem, min_wave_speed

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad usage; the exit-code contract
    reserves 2 for failed numerical assertions, so usage errors are raised
    and mapped to 1 by main()."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                        help="run description file (TOML)")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS,
                        help="output directory (overrides [output].directory)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed recorded in summaries and used by "
                             "randomized sweeps")
    common.add_argument("--quiet", action="store_true",
                        default=argparse.SUPPRESS,
                        help="suppress progress output")
    parser = _Parser(prog="wetfront", parents=[common],
                     description="Moisture-front simulator: hysteretic "
                                 "p-Laplacian flow, traveling waves, and "
                                 "front-bound experiments.")
    # No set_defaults here: parents= shares the action objects, and
    # set_defaults would overwrite their SUPPRESS default, making every
    # subparser clobber options parsed before the command word.  Missing
    # attributes are filled in by main() after parsing instead.
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "simulate": "run the time stepper and write diagnostics + snapshot",
        "wave": "build the traveling-wave profile and envelope constants",
        "front": "run the bounded-propagation experiment",
        "regimes": "classify flux exponents as slow/bounded or "
                   "fast/unbounded",
        "loops": "trace a hysteresis loop and check the limit envelopes",
        "validate": "check initial data against the admissibility rules",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


_OPTION_DEFAULTS = (("config", None), ("out", None), ("seed", None),
                    ("quiet", False), ("command", None))


def _say(args, text):
    if not args.quiet:
        print(text)


def _load(args, need_config=True):
    if args.config is None:
        if need_config:
            raise _UsageError("wetfront: --config PATH is required for "
                              f"'{args.command}'")
        cfg = parse_config("[geometry]\nlength = 1.0\n"
                           "[scheme]\np = 4.0\ntau = 1e-3\n")
    else:
        try:
            with open(args.config, "r") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}")
        cfg = parse_config(text)
    outdir = args.out or cfg.output_dir
    ensure_dir(outdir)
    return cfg, outdir


def _jsonable(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_summary(outdir, name, payload, cfg, args):
    if "json" not in cfg.formats:
        return
    payload = dict(payload)
    payload["seed"] = args.seed
    path = os.path.join(outdir, f"{name}_summary.json")
    with open(path, "w", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")


def _cmd_simulate(args):
    cfg, outdir = _load(args)
    problem = cfg.problem
    state = initial_state(problem, cfg.initial_u(), cfg.tau)
    t0 = time.perf_counter()
    result = run_simulation(state, cfg.tau, cfg.steps, cfg.solver)
    runtime = time.perf_counter() - t0
    if "csv" in cfg.formats:
        write_timeseries(os.path.join(outdir, "simulate_series.csv"), {
            "t": result.times, "mass": result.mass, "energy": result.energy,
            "gradient_p_norm": result.gradient_p_norm,
            "residual": result.residual, "max_abs_u": result.max_abs_u,
            "support_radius": result.support_radius,
        })
    final = result.final_state
    save_snapshot(os.path.join(outdir, "state.snapshot"), final)
    if "svg" in cfg.formats:
        emit_plot({"u(x, T)": (problem.geometry.x, final.u),
                   "theta(x, T)": (problem.geometry.x, final.theta)},
                  "profile", os.path.join(outdir, "simulate_profile.svg"))
    _write_summary(outdir, "simulate", {
        "steps": cfg.steps, "tau": cfg.tau,
        "final_mass": final.diagnostics.mass,
        "final_energy": final.diagnostics.energy,
        "final_support_radius": final.diagnostics.support_radius,
        "max_abs_u": float(np.max(result.max_abs_u)),
        "runtime_seconds": runtime,
    }, cfg, args)
    _say(args, f"simulate: {cfg.steps} steps, final support radius "
               f"{final.diagnostics.support_radius:.4f}, mass "
               f"{final.diagnostics.mass:.6e}")
    return 0


def _cmd_wave(args):
    cfg, outdir = _load(args)
    if cfg.p <= 3.0:
        raise ConfigError(f"[scheme].p = {cfg.p} rejected: traveling waves "
                          "with bounded support need p > 3")
    R = cfg.R if cfg.R is not None else 0.5 * (cfg.R0 + cfg.R1)
    c = min_wave_speed(R, cfg.R0, cfg.lambda_max, cfg.permeability.value,
                       cfg.p, cfg.density)
    profile = build_wave_profile(cfg.density, cfg.p, cfg.permeability.value,
                                 c, cfg.lambda_max)
    env = envelope_from_problem(cfg.density, cfg.p, cfg.permeability.value,
                                cfg.lambda_max, cfg.R0)
    if "csv" in cfg.formats:
        profile.to_csv(os.path.join(outdir, "wave_profile.csv"))
    if "svg" in cfg.formats:
        z = np.linspace(0.0, profile.z_max, 512)
        emit_plot({"U(z)": (z, profile.evaluate(z))}, "profile",
                  os.path.join(outdir, "wave_profile.svg"))
    _write_summary(outdir, "wave", {
        "speed": c, "R": R, "R0": cfg.R0, "R1": cfg.R1,
        "C_p": env.C_p, "lambda_bar": env.lambda_bar, "z_max": profile.z_max,
    }, cfg, args)
    _say(args, f"wave: c = {c:.12g}, C_p = {env.C_p:.12g}, "
               f"z_max = {profile.z_max:.6g}")
    return 0


def _cmd_front(args):
    cfg, outdir = _load(args)
    report = front_bound_experiment(
        cfg.problem, cfg.initial_u(), cfg.tau, cfg.steps, solver=cfg.solver,
        R0=cfg.R0, R1=cfg.R1, R=cfg.R, envelope_shrink=cfg.envelope_shrink,
        comparison_tol=cfg.comparison_tol)
    if "csv" in cfg.formats:
        write_timeseries(os.path.join(outdir, "front_bound.csv"), {
            "t": report.times, "R_supp": report.support,
            "R_envelope": report.envelope, "margin": report.margin,
        })
    if "svg" in cfg.formats:
        emit_plot({"measured R_supp(t)": (report.times, report.support),
                   "envelope R(t)": (report.times, report.envelope)},
                  "front", os.path.join(outdir, "front_bound.svg"))
    _write_summary(outdir, "front", {
        "passed": report.passed, "min_margin": report.min_margin,
        "comparison_max": report.comparison_max,
        "wave_speed": report.wave_speed,
        "first_violation_step": report.first_violation_step,
        "failure_reason": report.failure_reason,
        "runtime_seconds": report.runtime_seconds,
    }, cfg, args)
    if report.passed:
        _say(args, f"front: PASS, min margin {report.min_margin:.4f}, "
                   f"comparison max {report.comparison_max:.3e}")
        return 0
    _say(args, f"front: FAIL at step {report.first_violation_step}: "
               f"{report.failure_reason}")
    return 2


def _cmd_regimes(args):
    cfg, outdir = _load(args, need_config=False)
    rows = regime_classification(cfg.p_list, cfg.density, cfg.lambda_max)
    if "csv" in cfg.formats:
        lines = ["p,classification,note,F"]
        for row in rows:
            lines.append("%.17g,%s,%s,%.17g" % (
                row["p"], row["classification"],
                row["note"].replace(",", ";"), row["F"]))
        with open(os.path.join(outdir, "regimes.csv"), "w", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    _write_summary(outdir, "regimes", {"table": rows}, cfg, args)
    for row in rows:
        _say(args, f"  p = {row['p']:<4g} {row['classification']:<14s} "
                   f"({row['note']})")
    return 0


def _cmd_loops(args):
    cfg, outdir = _load(args)
    trace = loop_experiment(cfg.density, cfg.loop_path, cfg.lambda_max)
    excursion = loop_envelope_check(trace, cfg.density, cfg.lambda_max)
    if "csv" in cfg.formats:
        write_timeseries(os.path.join(outdir, "loop_trace.csv"),
                         {"u": trace.u, "theta": trace.theta}, first="u")
    if "svg" in cfg.formats:
        emit_plot({"trace": (trace.u, trace.theta),
                   "turning points": (trace.corners_u, trace.corners_theta)},
                  "loop", os.path.join(outdir, "loop_trace.svg"))
    passed = excursion <= 1e-12
    _write_summary(outdir, "loops", {
        "passed": passed, "envelope_excursion": excursion,
        "path": list(cfg.loop_path), "points": int(trace.u.size),
    }, cfg, args)
    _say(args, f"loops: {'PASS' if passed else 'FAIL'}, envelope excursion "
               f"{excursion:.3e}")
    return 0 if passed else 2


def _cmd_validate(args):
    cfg, outdir = _load(args)
    u0 = cfg.initial_u()
    memories = [make_initial_memory(float(v), cfg.lambda_max) for v in u0]
    support_R0 = cfg.R0 if cfg.initial_kind == "bump" else None
    report = validate_initial_state(
        u0, memories, cfg.density, cfg.permeability, cfg.bc, cfg.geometry,
        cfg.lambda_max, cfg.p, support_R0=support_R0)
    for entry in report.entries:
        line = f"  {entry.name}: {entry.status}"
        if entry.message:
            line += f" ({entry.message})"
        _say(args, line)
    _write_summary(outdir, "validate", {
        "ok": report.ok,
        "entries": [{"name": e.name, "status": e.status,
                     "message": e.message} for e in report.entries],
    }, cfg, args)
    _say(args, f"validate: {'PASS' if report.ok else 'FAIL'}")
    return 0 if report.ok else 2


_COMMANDS = {
    "simulate": _cmd_simulate,
    "wave": _cmd_wave,
    "front": _cmd_front,
    "regimes": _cmd_regimes,
    "loops": _cmd_loops,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        for dest, value in _OPTION_DEFAULTS:
            if not hasattr(args, dest):
                setattr(args, dest, value)
        if args.command is None:
            raise _UsageError("wetfront: a command is required "
                              f"(one of {', '.join(_COMMANDS)})")
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SolverConvergenceError, InvariantViolation) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
