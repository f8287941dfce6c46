"""Config parsing, timeseries and snapshot files, plots, and the CLI."""
import json
import os

import numpy as np
import pytest

from wetfront.config import ConfigError, parse_config
from wetfront.io import (
    emit_plot,
    load_snapshot,
    read_timeseries,
    save_snapshot,
    write_timeseries,
)
from wetfront.solver import (
    BoundaryCondition,
    Geometry,
    Permeability,
    Problem,
    SolverConfig,
    initial_state,
    time_step,
)
from wetfront.hysteresis import ConstantDensity
from wetfront.cli import main

MINIMAL = """
[geometry]
length = 3.0

[scheme]
p = 4.0
tau = 1e-3
"""


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.p == 4.0 and cfg.tau == 1e-3
    assert cfg.geometry.kind == "interval"
    assert cfg.geometry.n_nodes == 2 * 601 - 1
    assert cfg.steps == 100
    assert cfg.lambda_max == 1.0
    assert cfg.initial_kind == "zero"
    assert cfg.scenario == "none"
    prob = cfg.problem
    assert prob.p == 4.0
    assert prob.bc.is_neumann
    assert np.all(cfg.initial_u() == 0.0)


def test_unknown_key_and_section_are_named():
    with pytest.raises(ConfigError, match=r"unknown section \[scheme2\]"):
        parse_config(MINIMAL + "\n[scheme2]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"unknown key \[geometry\]\.lenght"):
        parse_config("[geometry]\nlength = 1.0\nlenght = 2.0\n"
                     "[scheme]\np = 4.0\ntau = 1e-3\n")


def test_bad_values_name_section_and_key():
    with pytest.raises(ConfigError, match=r"\[scheme\]\.omega"):
        parse_config(MINIMAL + "\n[scheme]\nomega = 1.5\n"
                     if False else
                     "[geometry]\nlength = 3.0\n[scheme]\np = 4.0\ntau = 1e-3\nomega = 1.5\n")
    with pytest.raises(ConfigError, match=r"\[scheme\]\.p"):
        parse_config("[geometry]\nlength = 3.0\n"
                     "[scheme]\np = 2.5\ntau = 1e-3\n"
                     "[experiment]\nscenario = \"front-bound\"\n")
    with pytest.raises(ConfigError, match=r"\[initial\]\.R0"):
        parse_config("[geometry]\nlength = 3.0\n"
                     "[scheme]\np = 4.0\ntau = 1e-3\n"
                     "[initial]\nkind = \"bump\"\nR0 = 4.0\n")


def test_missing_required_key():
    with pytest.raises(ConfigError, match=r"\[scheme\]\.tau"):
        parse_config("[geometry]\nlength = 3.0\n[scheme]\np = 4.0\n")
    with pytest.raises(ConfigError, match=r"\[geometry\]\.length"):
        parse_config("[scheme]\np = 4.0\ntau = 1e-3\n")


def test_type_errors_are_config_errors():
    with pytest.raises(ConfigError):
        parse_config("[geometry]\nlength = \"wide\"\n[scheme]\np = 4.0\ntau = 1e-3\n")
    with pytest.raises(ConfigError):
        parse_config("[geometry]\nlength = 3.0\nnodes = 2.5\n"
                     "[scheme]\np = 4.0\ntau = 1e-3\n")
    with pytest.raises(ConfigError):
        parse_config("not toml [[[")


def test_initial_file_round_trip(tmp_path):
    path = tmp_path / "profile.csv"
    x = np.linspace(-3.0, 3.0, 1201)
    u = np.where(np.abs(x) < 1.0, 0.5 * (1.0 - x ** 2), 0.0)
    write_timeseries(path, {"x": x, "u": u}, first="x")
    cfg = parse_config("[geometry]\nlength = 3.0\n[scheme]\np = 4.0\ntau = 1e-3\n"
                       f"[initial]\nkind = \"file\"\nfile = \"{path}\"\n")
    assert np.array_equal(cfg.initial_u(), u)


def test_write_timeseries_format_and_round_trip(tmp_path):
    path = tmp_path / "series.csv"
    t = np.array([0.0, 1e-3, 2e-3])
    v = np.array([1.0, 1.0 / 3.0, 0.1234567890123456789])
    write_timeseries(path, {"t": t, "v": v})
    text = path.read_text()
    assert text.splitlines()[0] == "t,v"
    back = read_timeseries(path)
    assert np.array_equal(back["t"], t)
    assert np.array_equal(back["v"], v)        # %.17g round-trips exactly
    # byte stability across rewrites
    write_timeseries(path, {"t": t, "v": v})
    assert path.read_text() == text


def test_write_timeseries_rejects_bad_input(tmp_path):
    path = tmp_path / "bad.csv"
    with pytest.raises(ValueError):
        write_timeseries(path, {})
    with pytest.raises(ValueError):
        write_timeseries(path, {"t": np.array([]), "v": np.array([])})
    with pytest.raises(ValueError):
        write_timeseries(path, {"t": np.arange(3.0), "v": np.arange(4.0)})
    assert not path.exists()                   # errors precede file creation


def test_read_timeseries_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("t,v\n0,1\nbroken\n")
    with pytest.raises(ValueError):
        read_timeseries(p)
    with pytest.raises(OSError):
        read_timeseries(tmp_path / "missing.csv")


def test_snapshot_restart_is_bitwise(tmp_path):
    prob = Problem(Geometry.interval(3.0, 61), ConstantDensity(2.0),
                   Permeability.constant(1.0), BoundaryCondition(1.0), 4.0, 1.0)
    x = prob.geometry.x
    u0 = np.where(np.abs(x) < 1.0, 0.9 * (1.0 - x ** 2), 0.0)
    st = initial_state(prob, u0, 1e-3)
    for _ in range(5):
        st = time_step(st, 1e-3, SolverConfig())
    path = tmp_path / "state.snap"
    save_snapshot(path, st)
    back = load_snapshot(path)
    assert np.array_equal(back.u, st.u)
    assert np.array_equal(back.theta, st.theta)
    assert back.step == st.step
    # continuing from the restart matches continuing the original, bitwise
    a, b = st, back
    for _ in range(5):
        a = time_step(a, 1e-3, SolverConfig())
        b = time_step(b, 1e-3, SolverConfig())
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.theta, b.theta)


def test_snapshot_rejects_tampered_theta(tmp_path):
    prob = Problem(Geometry.interval(1.0, 5), ConstantDensity(2.0),
                   Permeability.constant(1.0), BoundaryCondition(1.0), 4.0, 1.0)
    st = initial_state(prob, np.full(9, 0.5), 1e-3)
    path = tmp_path / "state.snap"
    save_snapshot(path, st)
    lines = path.read_text().splitlines()
    cols = lines[2].split(",")
    cols[2] = "0.999"
    lines[2] = ",".join(cols)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        load_snapshot(path)


def test_snapshot_rejects_bad_header(tmp_path):
    path = tmp_path / "state.snap"
    path.write_text("not json\nx,u,theta\n0,0,0\n")
    with pytest.raises(ValueError):
        load_snapshot(path)


def test_emit_plot_variants(tmp_path):
    t = np.linspace(0.0, 2.0, 40)
    svg = tmp_path / "front.svg"
    emit_plot({"radius": (t, 1.0 + t ** 0.25)}, "front", svg)
    body = svg.read_text()
    assert body.startswith("<svg")
    assert "radius" in body and "polyline" in body
    with pytest.raises(ValueError):
        emit_plot({"x": (t, t)}, "surface", tmp_path / "a.svg")
    with pytest.raises(ValueError, match="fewer than two points"):
        emit_plot({"x": (t[:1], t[:1])}, "front", tmp_path / "b.svg")
    bad = t.copy()
    bad[7] = np.nan
    with pytest.raises(ValueError, match="index 7"):
        emit_plot({"x": (t, bad)}, "front", tmp_path / "c.svg")


def test_emit_plot_is_deterministic(tmp_path):
    t = np.linspace(0.0, 1.0, 20)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    emit_plot({"u": (t, t ** 2), "v": (t, t ** 3)}, "loop", a)
    emit_plot({"u": (t, t ** 2), "v": (t, t ** 3)}, "loop", b)
    assert a.read_bytes() == b.read_bytes()


# ── CLI ────────────────────────────────────────────────────────────────────


def write_config(tmp_path, extra=""):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        "[geometry]\nlength = 3.0\nnodes = 31\n"
        "[scheme]\np = 4.0\ntau = 1e-3\nsteps = 20\n"
        "[initial]\nkind = \"bump\"\nR0 = 1.0\namplitude = 1.0\n"
        + extra)
    return str(cfg)


def test_cli_simulate_writes_outputs(tmp_path):
    cfg = write_config(tmp_path, "[output]\nformats = [\"csv\", \"json\", \"svg\"]\n")
    out = tmp_path / "out"
    code = main(["simulate", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 0
    assert (out / "simulate_series.csv").exists()
    assert (out / "simulate_summary.json").exists()
    series = read_timeseries(out / "simulate_series.csv")
    assert "mass" in series and len(series["t"]) == 21
    summary = json.loads((out / "simulate_summary.json").read_text())
    assert summary["steps"] == 20


def test_cli_options_accepted_before_and_after_command(tmp_path):
    # the common options are registered on the main parser and on every
    # subparser; a value given before the command word must survive the
    # subcommand parse (shared-action defaults once clobbered it to None)
    cfg = write_config(tmp_path)
    pre, post = tmp_path / "pre", tmp_path / "post"
    assert main(["--config", cfg, "--out", str(pre), "--quiet", "simulate"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(post), "--quiet"]) == 0
    a = (pre / "simulate_series.csv").read_bytes()
    b = (post / "simulate_series.csv").read_bytes()
    assert a == b


def test_cli_simulate_deterministic_csv(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["simulate", "--config", cfg, "--out", str(out1), "--quiet"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(out2), "--quiet"]) == 0
    a = (out1 / "simulate_series.csv").read_bytes()
    b = (out2 / "simulate_series.csv").read_bytes()
    assert a == b


def test_cli_wave_and_regimes(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "wout"
    assert main(["wave", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "wave_summary.json").read_text())
    assert summary["C_p"] == pytest.approx(4.0, rel=1e-10)
    rout = tmp_path / "rout"
    assert main(["regimes", "--out", str(rout), "--quiet"]) == 0
    table = (rout / "regimes.csv").read_text().splitlines()
    assert table[0].startswith("p,")
    assert any("slow/bounded" in line for line in table)
    assert any("fast/unbounded" in line for line in table)


def test_cli_front_reduced_run(tmp_path):
    cfg = write_config(
        tmp_path,
        "[experiment]\nscenario = \"front-bound\"\nR1 = 3.0\n")
    out = tmp_path / "fout"
    code = main(["front", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 0
    series = read_timeseries(out / "front_bound.csv")
    assert np.all(series["R_supp"] <= series["R_envelope"] + 2.0 * 0.1 + 1e-12)


def test_cli_front_canary_exits_two(tmp_path):
    cfg = tmp_path / "canary.toml"
    cfg.write_text(
        "[geometry]\nlength = 3.0\nnodes = 301\n"
        "[scheme]\np = 4.0\ntau = 1e-3\nsteps = 3\n"
        "[initial]\nkind = \"bump\"\nR0 = 1.0\namplitude = 1.0\n"
        "[experiment]\nscenario = \"front-bound\"\nR1 = 3.0\nenvelope_shrink = 0.9\n")
    out = tmp_path / "cout"
    code = main(["front", "--config", str(cfg), "--out", str(out), "--quiet"])
    assert code == 2


def test_cli_loops(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "lout"
    assert main(["loops", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    trace = read_timeseries(out / "loop_trace.csv")
    assert trace["theta"][-1] == pytest.approx(0.5, abs=1e-12) or \
        trace["theta"][-1] == pytest.approx(1.0, abs=1e-12)


def test_cli_validate(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "vout"
    assert main(["validate", "--config", cfg, "--out", str(out)]) == 0
    shown = capsys.readouterr().out
    assert "pressure-bound" in shown


def test_cli_usage_errors_exit_one(tmp_path):
    assert main([]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["simulate"]) == 1                       # config required
    assert main(["simulate", "--config", "/nonexistent/x.toml"]) == 1
    bad = tmp_path / "bad.toml"
    bad.write_text("[scheme]\np = 4.0\n")                # missing tau/length
    assert main(["simulate", "--config", str(bad)]) == 1


def test_cli_wave_rejects_divergent_p(tmp_path):
    cfg = tmp_path / "p3.toml"
    cfg.write_text("[geometry]\nlength = 3.0\n[scheme]\np = 3.0\ntau = 1e-3\n")
    assert main(["wave", "--config", str(cfg), "--quiet"]) == 1
