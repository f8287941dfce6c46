"""Deterministic file output: CSV series, snapshot/restart files, SVG plots.

Everything here is byte-stable: the same data produces the same bytes on
every run.  Floats are written with 17 significant digits, which is enough
to reproduce the exact double on read-back; SVG geometry is computed with
fixed rounding and carries no timestamps or generated ids.
"""
from __future__ import annotations

import json
import os
from dataclasses import replace

import numpy as np

from .hysteresis import MemoryCurve, density_from_dict, density_to_dict
from .solver import (
    BoundaryCondition,
    Geometry,
    Permeability,
    Problem,
    SimulationState,
    initial_state,
)

__all__ = [
    "write_timeseries",
    "read_timeseries",
    "emit_plot",
    "save_snapshot",
    "load_snapshot",
]

_FMT = "%.17g"


def _columns(series: dict, first: str):
    names = list(series.keys())
    if first in series:
        names.remove(first)
        names.insert(0, first)
    return names


def write_timeseries(path, series: dict, first: str = "t"):
    """Write named columns as CSV: header row, fixed order, %.17g floats.

    The column named by `first` leads if present; the rest keep insertion
    order.  An empty series (no columns, or zero rows) raises before any
    file is created.  Returns the path.
    """
    if not series:
        raise ValueError("empty series: nothing to write, no file created")
    cols = {k: np.asarray(v, dtype=float).ravel() for k, v in series.items()}
    n_rows = {k: v.size for k, v in cols.items()}
    if min(n_rows.values()) == 0:
        raise ValueError("empty series: nothing to write, no file created")
    if len(set(n_rows.values())) != 1:
        raise ValueError(f"column lengths differ: {n_rows}")
    names = _columns(cols, first)
    lines = [",".join(names)]
    data = [cols[k] for k in names]
    for i in range(data[0].size):
        lines.append(",".join(_FMT % c[i] for c in data))
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


def read_timeseries(path) -> dict:
    """Read a write_timeseries CSV back into {name: float array}."""
    with open(path, "r") as f:
        header = f.readline().strip()
        if not header:
            raise ValueError(f"{path}: missing header row")
        names = header.split(",")
        rows = [line.split(",") for line in f if line.strip()]
    out = {}
    for i, name in enumerate(names):
        out[name] = np.array([float(r[i]) for r in rows])
    return out


# ── Snapshot / restart ─────────────────────────────────────────────────────


def save_snapshot(path, state: SimulationState):
    """One-file state dump: JSON header line, then a CSV body of (x, u, theta).

    The header carries the geometry, p, permeability (constant only), omega,
    tau, step, lambda_max, density parameters, and every node's memory curve
    as corner arrays, so a run restarted from the file continues bitwise.
    """
    problem = state.problem
    mems = state.memories
    header = {
        "format": "wetfront-snapshot",
        "version": 1,
        "geometry": problem.geometry.to_dict(),
        "p": problem.p,
        "kappa": problem.permeability.to_dict(),
        "omega": problem.bc.omega,
        "tau": state.tau,
        "step": state.step,
        "lambda_max": problem.lambda_max,
        "density": density_to_dict(problem.density),
        "memories": [{"r": c.r.tolist(), "xi": c.xi.tolist()} for c in mems],
    }
    lines = [json.dumps(header, sort_keys=True), "x,u,theta"]
    for x, u, th in zip(problem.geometry.x, state.u, state.theta):
        lines.append(",".join(_FMT % v for v in (x, u, th)))
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


def load_snapshot(path) -> SimulationState:
    """Rebuild a SimulationState from a save_snapshot file."""
    with open(path, "r") as f:
        header = json.loads(f.readline())
        body = f.read().splitlines()
    if header.get("format") != "wetfront-snapshot":
        raise ValueError(f"{path}: not a snapshot file")
    geometry = Geometry.from_dict(header["geometry"])
    kap = header["kappa"]
    if kap.get("kind") != "constant":
        raise ValueError(f"{path}: only constant permeability restarts")
    problem = Problem(
        geometry=geometry,
        density=density_from_dict(header["density"]),
        permeability=Permeability.constant(kap["value"]),
        bc=BoundaryCondition(header["omega"]),
        p=header["p"],
        lambda_max=header["lambda_max"],
    )
    if not body or body[0] != "x,u,theta":
        raise ValueError(f"{path}: snapshot body must start with 'x,u,theta'")
    rows = [line.split(",") for line in body[1:] if line]
    if len(rows) != geometry.n_nodes:
        raise ValueError(f"{path}: body has {len(rows)} rows for "
                         f"{geometry.n_nodes} nodes")
    u = np.array([float(r[1]) for r in rows])
    theta_file = np.array([float(r[2]) for r in rows])
    memories = [
        MemoryCurve(np.array(m["r"], dtype=float),
                    np.array(m["xi"], dtype=float), header["lambda_max"])
        for m in header["memories"]
    ]
    state = initial_state(problem, u, header["tau"], memories=memories)
    if float(np.max(np.abs(state.theta - theta_file))) > 1e-12:
        raise ValueError(f"{path}: stored theta disagrees with the memory "
                         "curves; file is inconsistent")
    diag = replace(state.diagnostics, step=int(header["step"]))
    return SimulationState(problem, int(header["step"]), state.tau, state.u,
                           state.theta, diag, _vm=state._vm,
                           _memories=state._memories)


# ── SVG plots ──────────────────────────────────────────────────────────────

_PALETTE = ["#1f6feb", "#d1242f", "#2da44e", "#8250df", "#bf8700", "#57606a"]
_AXIS_LABELS = {
    "front": ("t", "radius"),
    "loop": ("u", "theta"),
    "profile": ("x", "u"),
}
_W, _H = 640.0, 480.0
_ML, _MR, _MT, _MB = 72.0, 16.0, 16.0, 48.0


def _ticks(lo: float, hi: float, n: int = 5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def emit_plot(series: dict, kind: str, path):
    """Render series as a standalone SVG with axes, ticks, and a legend.

    series maps a label to an (x, y) pair of equal-length 1-D arrays; each
    pair becomes one polyline.  kind in {front, loop, profile} selects the
    axis labels.  Non-finite values are rejected naming the series and
    index; series with fewer than two points are rejected as degenerate.
    """
    if kind not in _AXIS_LABELS:
        raise ValueError(f"unknown plot kind {kind!r}; "
                         "expected front, loop, or profile")
    if not series:
        raise ValueError("no series to plot")
    clean = {}
    for name, (xs, ys) in series.items():
        xs = np.asarray(xs, dtype=float).ravel()
        ys = np.asarray(ys, dtype=float).ravel()
        if xs.size != ys.size:
            raise ValueError(f"series {name!r}: x has {xs.size} points, "
                             f"y has {ys.size}")
        if xs.size < 2:
            raise ValueError(f"series {name!r} has fewer than two points: "
                             "axis range is degenerate")
        for arr, ax in ((xs, "x"), (ys, "y")):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise ValueError(f"series {name!r} has a non-finite {ax} "
                                 f"value at index {int(bad[0])}")
        clean[name] = (xs, ys)

    x_lo = min(float(v[0].min()) for v in clean.values())
    x_hi = max(float(v[0].max()) for v in clean.values())
    y_lo = min(float(v[1].min()) for v in clean.values())
    y_hi = max(float(v[1].max()) for v in clean.values())
    if x_hi == x_lo:
        pad = 0.5 if x_lo == 0.0 else 0.5 * abs(x_lo)
        x_lo, x_hi = x_lo - pad, x_hi + pad
    if y_hi == y_lo:
        pad = 0.5 if y_lo == 0.0 else 0.5 * abs(y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    xl, yl = _AXIS_LABELS[kind]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W:.0f}" '
        f'height="{_H:.0f}" viewBox="0 0 {_W:.0f} {_H:.0f}">',
        f'<rect width="{_W:.0f}" height="{_H:.0f}" fill="white"/>',
        f'<line x1="{_ML:.1f}" y1="{_H - _MB:.1f}" x2="{_W - _MR:.1f}" '
        f'y2="{_H - _MB:.1f}" stroke="black"/>',
        f'<line x1="{_ML:.1f}" y1="{_MT:.1f}" x2="{_ML:.1f}" '
        f'y2="{_H - _MB:.1f}" stroke="black"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        X = px(tx)
        out.append(f'<line x1="{X:.2f}" y1="{_H - _MB:.1f}" x2="{X:.2f}" '
                   f'y2="{_H - _MB + 5:.1f}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{_H - _MB + 18:.1f}" '
                   f'font-size="11" text-anchor="middle">{tx:.4g}</text>')
    for ty in _ticks(y_lo, y_hi):
        Y = py(ty)
        out.append(f'<line x1="{_ML - 5:.1f}" y1="{Y:.2f}" x2="{_ML:.1f}" '
                   f'y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8:.1f}" y="{Y + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{ty:.4g}</text>')
    out.append(f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 10:.1f}" '
               f'font-size="13" text-anchor="middle">{xl}</text>')
    out.append(f'<text x="16" y="{(_MT + _H - _MB) / 2:.1f}" font-size="13" '
               f'text-anchor="middle" transform="rotate(-90 16 '
               f'{(_MT + _H - _MB) / 2:.1f})">{yl}</text>')

    for i, (name, (xs, ys)) in enumerate(clean.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"/>')
    ly = _MT + 14.0
    for i, name in enumerate(clean):
        color = _PALETTE[i % len(_PALETTE)]
        out.append(f'<line x1="{_W - _MR - 150:.1f}" y1="{ly:.1f}" '
                   f'x2="{_W - _MR - 126:.1f}" y2="{ly:.1f}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR - 120:.1f}" y="{ly + 4:.1f}" '
                   f'font-size="12">{name}</text>')
        ly += 18.0
    out.append("</svg>")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(out) + "\n")
    return path


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
