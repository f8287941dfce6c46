"""Implicit time stepping for the hysteretic p-Laplacian flow.

Each step solves the finite-volume system

    (theta_j(u') - theta_j_old) / tau = (1/V_j) * (Phi_{j+1/2} - Phi_{j-1/2}),
    Phi_face = A_face * kappa_face * |D u'|^(p-2) D u',

on a uniform interval or radially symmetric grid, where theta_j(u') is the
Preisach output of node j's memory after a single monotone move to u'.  The
nodal map u -> theta is nondecreasing and the flux is monotone, so each step
is a monotone nonlinear system with a (possibly) flat hysteresis part: at a
turning point the branch starts with zero slope, which makes the nodal
equation locally flat.  When the root set is an interval, a tiny
regularizer eps_tie*(u - u_old)/tau picks the point closest to the previous
value (minimal update: no driving force, no change); its magnitude sits
below the residual tolerance, and convergence is always measured on the
unregularized residual.

Two solution engines drive the same system: a semismooth Newton iteration
with tridiagonal tangents and a backtracking line search (default), and the
damped Picard scheme with frozen flux coefficient
a = kappa*(|Du|^2 + eps_k)^((p-2)/2) and exact per-node bisection, which is
derivative-free and robust but slow on fine grids.  Newton falls back to
monotone Gauss-Seidel bisection sweeps whenever a step fails to reduce the
residual, so the default engine inherits the robustness of the second.

Mass and energy diagnostics come from the same discrete structure: testing
the scheme with 1 telescopes the fluxes (mass balance), testing with u'
gives dissipation of E = sum_j V_j * int Psi(r, xi_j(r)) dr with
Psi(r, x) = int_0^x v rho(r, v) dv.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .hysteresis import (
    ConstantDensity,
    MemoryCurve,
    ValidationReport,
    branch_theta_slope,
    make_initial_memory,
    memory_energy,
    preisach_output,
)

__all__ = [
    "Geometry",
    "Permeability",
    "BoundaryCondition",
    "Problem",
    "SolverConfig",
    "SimulationState",
    "StepDiagnostics",
    "SimulationResult",
    "SolverConvergenceError",
    "InvariantViolation",
    "initial_state",
    "validate_initial_state",
    "time_step",
    "run_simulation",
    "support_radius",
    "comparison_check",
]


class SolverConvergenceError(RuntimeError):
    """The outer iteration exhausted max_iters; carries the last residual."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class InvariantViolation(RuntimeError):
    """A runtime assertion (L-infinity bound, energy dissipation) failed."""

    def __init__(self, message, step):
        super().__init__(f"step {step}: {message}")
        self.step = step


# ── Geometry ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Geometry:
    """Uniform node grid on an interval [-L, L] or a radial ball [0, L].

    The interval grid has 2M-1 nodes with spacing dx = L/(M-1); the radial
    grid has M nodes 0..L with face areas r^(N-1) and exact shell volumes
    (r_+^N - r_-^N)/N (the constant unit-sphere surface factor is omitted
    consistently from every volume integral).  N = 1 reduces the radial
    grid to the right half-interval with a symmetry (zero-flux) condition
    at r = 0.
    """

    kind: str
    length: float
    node_count: int
    dimension: int = 1
    x: np.ndarray = field(repr=False, default=None)
    volumes: np.ndarray = field(repr=False, default=None)
    face_areas: np.ndarray = field(repr=False, default=None)
    dx: float = 0.0

    @classmethod
    def interval(cls, half_length: float, node_count: int) -> "Geometry":
        if node_count < 2:
            raise ValueError(f"interval grid needs node_count >= 2, got {node_count}")
        if not (math.isfinite(half_length) and half_length > 0.0):
            raise ValueError(f"half_length must be positive, got {half_length}")
        m = int(node_count)
        dx = half_length / (m - 1)
        n = 2 * m - 1
        x = np.linspace(-half_length, half_length, n)
        vol = np.full(n, dx)
        vol[0] = vol[-1] = 0.5 * dx
        areas = np.ones(n - 1)
        g = cls(kind="interval", length=half_length, node_count=m,
                dimension=1, x=x, volumes=vol, face_areas=areas, dx=dx)
        return g

    @classmethod
    def radial(cls, radius: float, node_count: int, dimension: int = 1) -> "Geometry":
        if node_count < 2:
            raise ValueError(f"radial grid needs node_count >= 2, got {node_count}")
        if dimension < 1:
            raise ValueError(f"radial dimension must be >= 1, got {dimension}")
        if not (math.isfinite(radius) and radius > 0.0):
            raise ValueError(f"radius must be positive, got {radius}")
        m = int(node_count)
        dr = radius / (m - 1)
        x = np.linspace(0.0, radius, m)
        nd = float(dimension)
        faces = x[:-1] + 0.5 * dr           # r_{j+1/2}
        areas = faces ** (nd - 1.0)
        r_lo = np.concatenate(([0.0], faces))
        r_hi = np.concatenate((faces, [radius]))
        vol = (r_hi ** nd - r_lo ** nd) / nd
        return cls(kind="radial", length=radius, node_count=m,
                   dimension=dimension, x=x, volumes=vol, face_areas=areas, dx=dr)

    @property
    def n_nodes(self) -> int:
        return self.x.size

    def boundary_faces(self):
        """(node index, face area, side) for faces on the outer boundary."""
        if self.kind == "interval":
            return [(0, 1.0, "left"), (self.n_nodes - 1, 1.0, "right")]
        return [(self.n_nodes - 1, self.length ** (self.dimension - 1.0), "right")]

    def radii(self) -> np.ndarray:
        """|x_j| for support measurements."""
        return np.abs(self.x)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "length": self.length,
                "node_count": self.node_count, "dimension": self.dimension}

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry":
        if d["kind"] == "interval":
            return cls.interval(d["length"], d["node_count"])
        return cls.radial(d["length"], d["node_count"], d.get("dimension", 1))


# ── Material data ──────────────────────────────────────────────────────────


class Permeability:
    """Permeability kappa(x, theta) with uniform bounds 0 < lo <= kappa <= hi."""

    def __init__(self, kind, fn, lo, hi, lipschitz=None, value=None):
        if not (0.0 < lo <= hi):
            raise ValueError(f"permeability bounds must satisfy 0 < lo <= hi, "
                             f"got lo={lo}, hi={hi}")
        self.kind = kind
        self._fn = fn
        self.lo = float(lo)
        self.hi = float(hi)
        self.lipschitz = lipschitz
        self.value = value

    @classmethod
    def constant(cls, value: float) -> "Permeability":
        value = float(value)
        return cls("constant", None, value, value, lipschitz=0.0, value=value)

    @classmethod
    def of_x(cls, fn, lo, hi, lipschitz=None) -> "Permeability":
        return cls("function-of-x", lambda x, theta: fn(x), lo, hi, lipschitz)

    @classmethod
    def of_x_theta(cls, fn, lo, hi, lipschitz=None) -> "Permeability":
        return cls("function-of-x-and-theta", fn, lo, hi, lipschitz)

    @property
    def theta_dependent(self) -> bool:
        return self.kind == "function-of-x-and-theta"

    def nodal(self, x, theta):
        if self.kind == "constant":
            return np.full(np.shape(x), self.value)
        return np.asarray(self._fn(x, theta), dtype=float)

    def to_dict(self) -> dict:
        if self.kind != "constant":
            raise ValueError("only constant permeability serializes to config data")
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class BoundaryCondition:
    """omega-parameterized boundary law: omega=1 Neumann, omega=0 Dirichlet,
    otherwise Robin with flux.n = -gamma*u and gamma = (1-omega)/omega."""

    omega: float
    gamma: float = None

    def __post_init__(self):
        if not (0.0 <= self.omega <= 1.0):
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if self.gamma is None:
            if 0.0 < self.omega < 1.0:
                object.__setattr__(self, "gamma", (1.0 - self.omega) / self.omega)
            else:
                object.__setattr__(self, "gamma", 0.0)
        elif self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")

    @property
    def is_neumann(self):
        return self.omega == 1.0

    @property
    def is_dirichlet(self):
        return self.omega == 0.0


@dataclass(frozen=True)
class Problem:
    """Immutable problem data shared by all steps of one simulation."""

    geometry: Geometry
    density: object
    permeability: Permeability
    bc: BoundaryCondition
    p: float
    lambda_max: float

    def __post_init__(self):
        if not (math.isfinite(self.p) and self.p > 2.0):
            raise ValueError(f"flux exponent must satisfy p > 2, got p={self.p}")
        if not (math.isfinite(self.lambda_max) and self.lambda_max > 0.0):
            raise ValueError(f"lambda_max must be positive, got {self.lambda_max}")

    @property
    def constant_density(self) -> bool:
        return isinstance(self.density, ConstantDensity)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration knobs; defaults satisfy the shipped test tolerances.

    Convergence requires both the residual and the last update to be small:
    near the moving front the nodal residual is almost flat in u (the branch
    slope vanishes with the local value), so a residual criterion alone
    leaves u-errors orders of magnitude above it.  The update criterion
    restores pointwise accuracy where order preservation and support
    measurements need it.
    """

    tol: float = 1e-11              # per-volume residual, infinity norm
    step_tol: float = 1e-11         # last-update infinity norm
    max_iters: int = 200
    method: str = "auto"            # "auto" (newton + fallback) or "picard"
    damping: float = 0.5            # Picard coefficient relaxation factor
    picard_eps0: float = 1e-6       # initial flux regularization
    picard_eps_floor: float = 1e-14
    bisection_tol: float = 1e-12    # nodal root refinement
    tie_break_eps: float = 1e-14    # minimal-update regularizer
    energy_tol: float = 1e-7        # dissipation slack per step
    lam_tol: float = 1e-12          # L-infinity bound slack
    check_invariants: bool = True
    max_sweeps: int = 60            # frozen-system Gauss-Seidel budget


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    energy: float
    mass: float
    gradient_p_norm: float          # sum over faces of |Du|^p * A * dx (no kappa)
    residual: float
    inner_iterations: int
    max_abs_u: float
    support_radius: float
    method: str = "none"


# ── Vectorized memory engine ───────────────────────────────────────────────


class _VectorMemory:
    """All nodes' memory curves in padded (n, K) arrays.

    Rows replicate their last corner across the padding so that the wedge
    crossing search and the trapezoid areas see a constant extension.  The
    update arithmetic mirrors hysteresis._crossing expression for
    expression; tests pin the two to bitwise agreement.
    """

    __slots__ = ("R", "XI", "count")

    def __init__(self, R, XI, count):
        self.R = R
        self.XI = XI
        self.count = count

    @classmethod
    def from_curves(cls, curves) -> "_VectorMemory":
        n = len(curves)
        count = np.array([c.r.size for c in curves], dtype=np.int64)
        K = int(count.max()) + 4
        R = np.zeros((n, K))
        XI = np.zeros((n, K))
        for j, c in enumerate(curves):
            if c.xi[-1] != 0.0:
                raise ValueError(
                    f"memory curve at node {j} does not relax to zero at its "
                    "largest threshold; the solver's saturation arithmetic "
                    "integrates the stored polyline only")
            m = c.r.size
            R[j, :m] = c.r
            XI[j, :m] = c.xi
            R[j, m:] = c.r[-1]
            XI[j, m:] = c.xi[-1]
        return cls(R, XI, count)

    def to_curves(self, lambda_max: float):
        return [
            MemoryCurve(self.R[j, : self.count[j]], self.XI[j, : self.count[j]],
                        lambda_max, validate=False)
            for j in range(self.R.shape[0])
        ]

    def copy(self) -> "_VectorMemory":
        return _VectorMemory(self.R.copy(), self.XI.copy(), self.count.copy())

    @property
    def anchors(self) -> np.ndarray:
        return self.XI[:, 0]

    def _suffix_areas(self) -> np.ndarray:
        """S[:, k] = signed area under the curve from corner k on (padding
        contributes zero because dR vanishes there)."""
        seg = 0.5 * (self.XI[:, :-1] + self.XI[:, 1:]) * np.diff(self.R, axis=1)
        S = np.zeros_like(self.R)
        S[:, :-1] = np.cumsum(seg[:, ::-1], axis=1)[:, ::-1]
        return S

    def _crossing(self, u: np.ndarray):
        """Vectorized wedge crossing; mirrors hysteresis._crossing.

        Returns (asc, k_gather, r_star, tail) where k_gather indexes the
        first surviving corner for theta assembly and tail marks rows whose
        crossing lies beyond the last corner.
        """
        n, K = self.R.shape
        rows = np.arange(n)
        cols = np.arange(K)
        valid = cols[None, :] < self.count[:, None]
        asc = u >= self.anchors
        g = np.where(valid, self.XI + self.R, np.inf)
        h = np.where(valid, self.XI - self.R, -np.inf)
        kR = np.where(asc,
                      np.sum(g <= u[:, None], axis=1),
                      np.sum(h >= u[:, None], axis=1))
        km1 = np.maximum(kR - 1, 0)
        edge = np.where(asc, g[rows, km1], h[rows, km1])
        hit = (kR >= 1) & (edge == u)
        tail = (~hit) & (kR >= self.count)
        interior = ~(hit | tail)

        r_star = np.empty(n)
        last = self.count - 1
        xi_last = self.XI[rows, last]
        # corner hit: keep the last coincident corner
        r_star[hit] = self.R[rows, km1][hit]
        # beyond the last corner: cross the constant extension
        r_star[tail] = np.where(asc, u - xi_last, xi_last - u)[tail]
        # interior: stable within-segment formula
        if np.any(interior):
            k = np.minimum(kR, last)  # clamped for safe gather; interior has kR<=last
            rk = self.R[rows, k]
            rk1 = self.R[rows, km1]
            xik = self.XI[rows, k]
            xik1 = self.XI[rows, km1]
            s = np.where(rk > rk1, (xik - xik1) / np.where(rk > rk1, rk - rk1, 1.0), 0.0)
            # only interior rows of the matching direction divide by the
            # segment slope; the crossing search never lands them on a
            # parallel segment, so their denominator is nonzero
            den_a = np.where(asc & interior, 1.0 + s, 1.0)
            den_d = np.where(~asc & interior, 1.0 - s, 1.0)
            ra = rk1 + (u - (xik1 + rk1)) / den_a
            rd = rk1 + ((xik1 - rk1) - u) / den_d
            r_star[interior] = np.where(asc, ra, rd)[interior]
        k_gather = np.where(hit, km1, np.minimum(kR, last))
        return asc, k_gather, r_star, tail

    def branch(self, u: np.ndarray, rho: float, gbar: float):
        """theta_j(u_j) and its slope for constant density rho (vectorized)."""
        n, K = self.R.shape
        rows = np.arange(n)
        asc, k, r_star, tail = self._crossing(u)
        S = self._suffix_areas()
        xi_star = np.where(asc, u - r_star, u + r_star)
        wedge = np.where(asc,
                         u * r_star - 0.5 * r_star * r_star,
                         u * r_star + 0.5 * r_star * r_star)
        partial = (self.R[rows, k] - r_star) * 0.5 * (xi_star + self.XI[rows, k])
        suffix = S[rows, k]
        partial = np.where(tail, 0.0, partial)
        suffix = np.where(tail, 0.0, suffix)
        theta = gbar + rho * (wedge + partial + suffix)
        slope = rho * r_star
        return theta, slope

    def branch_increment(self, u: np.ndarray, rho: float):
        """theta_j(u_j) - theta_j(anchor_j) and slope, constant density.

        Computed in increment arithmetic: the absolute value at the anchor
        equals the prefix area it replaces, so the difference is assembled
        from terms that scale with the move itself.  Evaluating theta at u
        and at the anchor separately and subtracting would leave rounding of
        order eps * theta, which divided by tau dominates the residual at
        quiescent nodes and caps the solvable accuracy near the front.
        Rows with u exactly at the anchor return an increment of 0.0.
        """
        n, K = self.R.shape
        rows = np.arange(n)
        asc, k, r_star, tail = self._crossing(u)
        seg = 0.5 * (self.XI[:, :-1] + self.XI[:, 1:]) * np.diff(self.R, axis=1)
        prefix = np.concatenate(
            [np.zeros((n, 1)), np.cumsum(seg, axis=1)], axis=1)
        xi_star = np.where(asc, u - r_star, u + r_star)
        wedge = np.where(asc,
                         u * r_star - 0.5 * r_star * r_star,
                         u * r_star + 0.5 * r_star * r_star)
        partial = (self.R[rows, k] - r_star) * 0.5 * (xi_star + self.XI[rows, k])
        partial = np.where(tail, 0.0, partial)
        # the crossing replaces the polyline up to corner k (all of it for
        # tail rows), whose area is the prefix sum being subtracted
        kk = np.where(tail, self.count, k)
        inc = rho * ((wedge + partial) - prefix[rows, kk])
        inc = np.where(u == self.anchors, 0.0, inc)
        slope = rho * r_star
        return inc, slope

    def energy(self, rho: float) -> np.ndarray:
        """Nodewise int Psi(r, xi(r)) dr for constant density."""
        x0 = self.XI[:, :-1]
        x1 = self.XI[:, 1:]
        seg = np.diff(self.R, axis=1) * (x0 * x0 + x0 * x1 + x1 * x1) / 3.0
        return 0.5 * rho * np.sum(seg, axis=1)

    def update(self, u: np.ndarray) -> "_VectorMemory":
        """Apply input u_j to every row; returns a new engine."""
        n, K = self.R.shape
        rows = np.arange(n)
        need = int(self.count.max()) + 2
        if need > K:
            grow = max(2 * K, need)
            R = np.empty((n, grow))
            XI = np.empty((n, grow))
            R[:, :K] = self.R
            XI[:, :K] = self.XI
            R[:, K:] = self.R[rows, self.count - 1][:, None]
            XI[:, K:] = self.XI[rows, self.count - 1][:, None]
            return _VectorMemory(R, XI, self.count.copy()).update(u)

        asc, k, r_star, tail = self._crossing(u)
        unchanged = u == self.anchors
        hit = r_star == self.R[rows, k]
        hit &= ~tail
        xi_star = np.where(asc, u - r_star, u + r_star)

        offset = np.where(hit, 1, 2)
        start = np.where(tail, self.count, k)
        cols = np.arange(K)
        gather = np.clip(start[:, None] + cols[None, :] - offset[:, None], 0, K - 1)
        newR = np.take_along_axis(self.R, gather, axis=1)
        newXI = np.take_along_axis(self.XI, gather, axis=1)
        newR[:, 0] = 0.0
        newXI[:, 0] = u
        put1 = ~hit
        newR[put1, 1] = r_star[put1]
        newXI[put1, 1] = xi_star[put1]
        new_count = np.where(tail, 2, offset + self.count - start)

        # repair padding: replicate the last real corner
        last = new_count - 1
        lastR = newR[rows, last]
        lastXI = newXI[rows, last]
        pad = cols[None, :] > last[:, None]
        newR = np.where(pad, lastR[:, None], newR)
        newXI = np.where(pad, lastXI[:, None], newXI)

        if np.any(unchanged):
            newR[unchanged] = self.R[unchanged]
            newXI[unchanged] = self.XI[unchanged]
            new_count = np.where(unchanged, self.count, new_count)
        return _VectorMemory(newR, newXI, new_count)

    def __eq__(self, other):
        if not isinstance(other, _VectorMemory):
            return NotImplemented
        if not np.array_equal(self.count, other.count):
            return False
        for j in range(self.R.shape[0]):
            m = self.count[j]
            if not (np.array_equal(self.R[j, :m], other.R[j, :m])
                    and np.array_equal(self.XI[j, :m], other.XI[j, :m])):
                return False
        return True


# ── Simulation state ───────────────────────────────────────────────────────


@dataclass
class SimulationState:
    """State after step `step`: field, memory, cached output, diagnostics."""

    problem: Problem
    step: int
    tau: float
    u: np.ndarray
    theta: np.ndarray
    diagnostics: StepDiagnostics
    _vm: _VectorMemory = field(repr=False, default=None)
    _memories: list = field(repr=False, default=None)

    @property
    def time(self) -> float:
        return self.step * self.tau

    @property
    def memories(self):
        """Per-node MemoryCurve list (materialized on demand)."""
        if self._memories is None:
            if self._vm is not None:
                self._memories = self._vm.to_curves(self.problem.lambda_max)
        return self._memories


def _vm_or_build(state: SimulationState) -> _VectorMemory:
    if state._vm is None:
        state._vm = _VectorMemory.from_curves(state._memories)
    return state._vm


def _theta_of(problem: Problem, vm: _VectorMemory, memories=None) -> np.ndarray:
    """Stored output theta[j] = theta_j(anchor_j).

    Evaluated through the same branch arithmetic that trial values use, so
    a node at rest sees a bitwise-zero output increment in the residual.
    """
    if problem.constant_density:
        theta, _ = vm.branch(vm.anchors.copy(),
                             problem.density.rho_value, problem.density.gbar)
        return theta
    curves = memories if memories is not None else vm.to_curves(problem.lambda_max)
    return np.array([branch_theta_slope(c, c.anchor, problem.density)[0]
                     for c in curves])


def _energy_of(problem: Problem, vm: _VectorMemory, memories=None) -> float:
    vol = problem.geometry.volumes
    if problem.constant_density:
        return float(np.sum(vm.energy(problem.density.rho_value) * vol))
    curves = memories if memories is not None else vm.to_curves(problem.lambda_max)
    return float(sum(memory_energy(c, problem.density) * v
                     for c, v in zip(curves, vol)))


def support_radius(geometry: Geometry, u: np.ndarray, threshold: float) -> float:
    """Largest |x_j| with |u_j| > threshold, or 0 if none."""
    if threshold <= 0.0:
        raise ValueError(f"support threshold must be positive, got {threshold}")
    mask = np.abs(np.asarray(u)) > threshold
    if not np.any(mask):
        return 0.0
    return float(np.max(geometry.radii()[mask]))


def initial_state(problem: Problem, u0, tau: float, memories=None) -> SimulationState:
    """Build step-0 state: wedge memories from u0 unless explicit ones are given."""
    u0 = np.asarray(u0, dtype=float).copy()
    n = problem.geometry.n_nodes
    if u0.shape != (n,):
        raise ValueError(f"u0 must have shape ({n},), got {u0.shape}")
    if memories is None:
        memories = [make_initial_memory(float(v), problem.lambda_max) for v in u0]
    vm = _VectorMemory.from_curves(memories)
    theta = _theta_of(problem, vm, memories)
    diag = StepDiagnostics(
        step=0,
        energy=_energy_of(problem, vm, memories),
        mass=float(np.sum(theta * problem.geometry.volumes)),
        gradient_p_norm=_gradient_p_norm(problem, u0),
        residual=0.0,
        inner_iterations=0,
        max_abs_u=float(np.max(np.abs(u0))) if n else 0.0,
        support_radius=support_radius(problem.geometry, u0,
                                      1e-9 * problem.lambda_max),
    )
    return SimulationState(problem, 0, float(tau), u0, theta, diag, _vm=vm,
                           _memories=memories)


# ── Discrete operators ─────────────────────────────────────────────────────


def _face_diffs(geometry: Geometry, u: np.ndarray) -> np.ndarray:
    return np.diff(u) / geometry.dx


def _gradient_p_norm(problem: Problem, u: np.ndarray) -> float:
    """Discrete int |grad u|^p: sum over faces of |Du|^p * A * dx."""
    g = problem.geometry
    D = _face_diffs(g, u)
    return float(np.sum(np.abs(D) ** problem.p * g.face_areas * g.dx))


def _face_kappa(problem: Problem, theta: np.ndarray) -> np.ndarray:
    kap = problem.permeability.nodal(problem.geometry.x, theta)
    return 0.5 * (kap[:-1] + kap[1:])


def _assemble_residual(problem: Problem, u, dtheta, theta_abs, tau):
    """Per-volume residual of the discrete system (no tie-break term).

    dtheta is the saturation increment over the step, supplied directly in
    small-number arithmetic rather than as a difference of absolute values;
    theta_abs is only consulted for saturation-dependent permeability.
    """
    g = problem.geometry
    p = problem.p
    D = _face_diffs(g, u)
    kf = _face_kappa(problem, theta_abs)
    flux = g.face_areas * kf * np.abs(D) ** (p - 2.0) * D
    res = dtheta / tau
    res[:-1] -= flux / g.volumes[:-1]
    res[1:] += flux / g.volumes[1:]
    bc = problem.bc
    if 0.0 < bc.omega < 1.0:
        for j, area, _side in g.boundary_faces():
            res[j] += bc.gamma * u[j] * area / g.volumes[j]
    elif bc.is_dirichlet:
        for j, _area, _side in g.boundary_faces():
            res[j] = u[j] / tau
    return res


def _dirichlet_nodes(problem: Problem):
    if problem.bc.is_dirichlet:
        return [j for j, _a, _s in problem.geometry.boundary_faces()]
    return []


def _tangent_bands(problem: Problem, u, theta, slope, tau, tie_eps):
    """Tridiagonal tangent in solve_banded layout (ab[0]=upper, ab[2]=lower)."""
    g = problem.geometry
    p = problem.p
    n = u.size
    D = _face_diffs(g, u)
    kf = _face_kappa(problem, theta)
    w = g.face_areas * kf * (p - 1.0) * np.abs(D) ** (p - 2.0) / g.dx
    diag = slope / tau + tie_eps / tau
    diag = diag.copy()
    diag[:-1] += w / g.volumes[:-1]
    diag[1:] += w / g.volumes[1:]
    upper = np.zeros(n)
    lower = np.zeros(n)
    upper[1:] = -w / g.volumes[:-1]      # coupling of node j to j+1
    lower[:-1] = -w / g.volumes[1:]      # coupling of node j to j-1
    bc = problem.bc
    if 0.0 < bc.omega < 1.0:
        for j, area, _side in g.boundary_faces():
            diag[j] += bc.gamma * area / g.volumes[j]
    elif bc.is_dirichlet:
        for j in _dirichlet_nodes(problem):
            diag[j] = 1.0 / tau
            if j + 1 < n:
                upper[j + 1] = 0.0
            if j - 1 >= 0:
                lower[j - 1] = 0.0
    ab = np.vstack([upper, diag, lower])
    return ab


class _ThetaEval:
    """Dispatch the step increment theta_j(u_j) - theta_j(old) and slope.

    For constant density the increment comes from the vectorized branch
    geometry and carries no cancellation against the absolute saturation;
    for general densities it is formed by subtraction from theta_old, which
    limits attainable nodal accuracy to about eps * theta / tau.
    """

    def __init__(self, problem: Problem, vm: _VectorMemory, theta_old):
        self.problem = problem
        self.vm = vm
        self.theta_old = theta_old
        if problem.constant_density:
            self.rho = problem.density.rho_value
            self._curves = None
        else:
            self._curves = vm.to_curves(problem.lambda_max)

    def __call__(self, u):
        if self._curves is None:
            return self.vm.branch_increment(u, self.rho)
        pairs = [branch_theta_slope(c, float(v), self.problem.density)
                 for c, v in zip(self._curves, u)]
        theta = np.array([t for t, _ in pairs])
        slope = np.array([s for _, s in pairs])
        return theta - self.theta_old, slope

    def scalar(self, j, v):
        """Increment at node j for trial value v."""
        return self.scalar_slope(j, v)[0]

    def scalar_slope(self, j, v):
        """Increment and branch slope at node j for trial value v."""
        if self._curves is None:
            row = _VectorMemory(self.vm.R[j:j + 1], self.vm.XI[j:j + 1],
                                self.vm.count[j:j + 1])
            inc, sl = row.branch_increment(np.array([float(v)]), self.rho)
            return float(inc[0]), float(sl[0])
        th, sl = branch_theta_slope(self._curves[j], float(v),
                                    self.problem.density)
        return th - self.theta_old[j], float(sl)


def _nodal_residual_true(problem, ev, kf, u, tau, tie_eps, u_old, j, v):
    """Scalar residual of node j at trial value v, neighbors frozen at u.

    kf is the face-permeability array frozen at the sweep's entry theta;
    the outer convergence check always re-evaluates the full residual.
    """
    g = problem.geometry
    p = problem.p
    bc = problem.bc
    if bc.is_dirichlet and j in _dirichlet_nodes(problem):
        return v / tau
    res = ev.scalar(j, v) / tau + tie_eps * (v - u_old[j]) / tau
    if j > 0:
        D = (v - u[j - 1]) / g.dx
        res += g.face_areas[j - 1] * kf[j - 1] * np.abs(D) ** (p - 2.0) * D \
            / g.volumes[j]
    if j < u.size - 1:
        D = (u[j + 1] - v) / g.dx
        res -= g.face_areas[j] * kf[j] * np.abs(D) ** (p - 2.0) * D / g.volumes[j]
    if 0.0 < bc.omega < 1.0:
        for jj, area, _side in g.boundary_faces():
            if jj == j:
                res += bc.gamma * v * area / g.volumes[j]
    return res


def _bisect_node(problem, ev, kf, u, tau, tie_eps, u_old, j, lo, hi, tol):
    flo = _nodal_residual_true(problem, ev, kf, u, tau, tie_eps, u_old, j, lo)
    if flo >= 0.0:
        return lo
    fhi = _nodal_residual_true(problem, ev, kf, u, tau, tie_eps, u_old, j, hi)
    if fhi <= 0.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = _nodal_residual_true(problem, ev, kf, u, tau, tie_eps, u_old, j, mid)
        if fm < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _gs_sweep(problem, ev, u, tau, tie_eps, u_old, cfg, only=None, widths=None):
    """One nonlinear Gauss-Seidel pass of exact nodal bisection.

    only restricts the pass to the given node indices; widths supplies a
    per-node bracket half-width hint (used when it actually brackets the
    root, with the full admissible range as fallback).
    """
    lam = problem.lambda_max
    dtheta_cur, _ = ev(u)
    kf = _face_kappa(problem, ev.theta_old + dtheta_cur)
    out = u.copy()
    idx = range(u.size) if only is None else only
    for j in idx:
        lo, hi = -lam - 0.5, lam + 0.5
        if widths is not None:
            h = 8.0 * widths[j] + 1e-10
            nlo, nhi = out[j] - h, out[j] + h
            if (_nodal_residual_true(problem, ev, kf, out, tau, tie_eps,
                                     u_old, j, nlo) < 0.0
                    and _nodal_residual_true(problem, ev, kf, out, tau, tie_eps,
                                             u_old, j, nhi) > 0.0):
                lo, hi = nlo, nhi
        out[j] = _bisect_node(problem, ev, kf, out, tau, tie_eps, u_old, j,
                              lo, hi, cfg.bisection_tol)
    return out


def _solve_step_newton(problem, ev, u_old, tau, cfg):
    """Semismooth Newton with line search; Gauss-Seidel bisection fallback."""
    tie = cfg.tie_break_eps
    u = u_old.copy()
    method = "newton"
    for it in range(cfg.max_iters):
        dtheta, slope = ev(u)
        res = _assemble_residual(problem, u, dtheta, ev.theta_old + dtheta, tau)
        rn = float(np.max(np.abs(res)))
        res_reg = res + tie * (u - u_old) / tau
        ab = _tangent_bands(problem, u, ev.theta_old + dtheta, slope, tau, tie)
        du = solve_banded((1, 1), ab, -res_reg)
        if rn <= cfg.tol and float(np.max(np.abs(du))) <= cfg.step_tol:
            return u, rn, it, method
        merit0 = float(np.max(np.abs(res_reg)))
        alpha = 1.0
        accepted = False
        while alpha >= 2.0 ** -24:
            u_try = u + alpha * du
            dtheta_try, _ = ev(u_try)
            res_try = _assemble_residual(problem, u_try, dtheta_try,
                                         ev.theta_old + dtheta_try, tau)
            merit = float(np.max(np.abs(res_try + tie * (u_try - u_old) / tau)))
            if merit <= (1.0 - 1e-4 * alpha) * merit0:
                u = u_try
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # the max-norm merit is dominated by front rows and cannot see
            # errors parked at quiescent nodes (their residual cost sits far
            # below the tolerance), so a stalled line search is resolved by
            # an exact Gauss-Seidel bisection pass: swept nodes land within
            # bisection_tol of their own nodal root and the update criterion
            # decides acceptance on the next iteration
            if rn <= cfg.tol:
                # residual already converged: polish only the nodes the
                # Newton direction still wants to move
                only = np.flatnonzero(np.abs(du) > cfg.step_tol)
                u = _gs_sweep(problem, ev, u, tau, tie, u_old, cfg,
                              only=only, widths=np.abs(du))
            else:
                u = _gs_sweep(problem, ev, u, tau, tie, u_old, cfg)
            method = "newton+gs"
    dtheta, _ = ev(u)
    res = _assemble_residual(problem, u, dtheta, ev.theta_old + dtheta, tau)
    rn = float(np.max(np.abs(res)))
    if rn <= cfg.tol:
        return u, rn, cfg.max_iters, method
    raise SolverConvergenceError("time step did not converge", rn, cfg.max_iters)


def _solve_step_picard(problem, ev, u_old, tau, cfg):
    """Outer Picard with a relaxed frozen flux coefficient.

    The frozen system replaces |Du|^(p-2) by (|Du|^2 + eps_k)^((p-2)/2); for
    p > 2 the lagged coefficient overshoots at a degenerate front and the
    plain iteration two-cycles, so the face coefficient is relaxed toward its
    new value with factor cfg.damping.  The frozen problem is tridiagonal
    with a monotone nodal part and is solved by a damped banded Newton
    iteration; nodal relaxation moves information one cell per sweep and
    stalls where the branch slope degenerates.  eps_k decreases
    geometrically to its floor.
    """
    g = problem.geometry
    p = problem.p
    tie = cfg.tie_break_eps
    u = u_old.copy()
    eps = cfg.picard_eps0
    last_update = math.inf
    a = None
    robin = np.zeros(u.size)
    if 0.0 < problem.bc.omega < 1.0:
        for jj, area, _side in g.boundary_faces():
            robin[jj] = problem.bc.gamma * area / g.volumes[jj]
    dir_nodes = np.array(sorted(_dirichlet_nodes(problem)), dtype=int)
    for it in range(cfg.max_iters):
        dtheta, _ = ev(u)
        res = _assemble_residual(problem, u, dtheta, ev.theta_old + dtheta, tau)
        rn = float(np.max(np.abs(res)))
        if rn <= cfg.tol and (it == 0 or last_update <= cfg.step_tol):
            # at it = 0 the iterate is still the previous value: a residual
            # already below tolerance means there is no driving force and
            # the minimal update is no update
            return u, rn, it, "picard"
        D = _face_diffs(g, u)
        kf = _face_kappa(problem, ev.theta_old + dtheta)
        a_new = kf * (D * D + eps) ** (0.5 * (p - 2.0))
        a = a_new if a is None else (1.0 - cfg.damping) * a + cfg.damping * a_new
        west = np.zeros(u.size)
        east = np.zeros(u.size)
        west[1:] = g.face_areas * a / g.dx / g.volumes[1:]
        east[:-1] = g.face_areas * a / g.dx / g.volumes[:-1]

        def frozen_system(w):
            inc, sl = ev(w)
            F = (inc + tie * (w - u_old)) / tau + robin * w
            F[1:] += west[1:] * (w[1:] - w[:-1])
            F[:-1] -= east[:-1] * (w[1:] - w[:-1])
            diag = (sl + tie) / tau + robin + west + east
            if dir_nodes.size:
                F[dir_nodes] = w[dir_nodes]
                diag[dir_nodes] = 1.0
            return F, diag

        w = u.copy()
        F, diag = frozen_system(w)
        fn = float(np.max(np.abs(F)))
        for _inner in range(25):
            if fn <= 0.1 * cfg.tol:
                break
            ab = np.zeros((3, w.size))
            ab[0, 1:] = -east[:-1]
            ab[1] = diag
            ab[2, :-1] = -west[1:]
            if dir_nodes.size:
                for jd in dir_nodes:
                    if jd + 1 < w.size:
                        ab[0, jd + 1] = 0.0
                    if jd - 1 >= 0:
                        ab[2, jd - 1] = 0.0
            dw = solve_banded((1, 1), ab, -F)
            scale = 1.0
            for _cut in range(30):
                F_try, diag_try = frozen_system(w + scale * dw)
                fn_try = float(np.max(np.abs(F_try)))
                if fn_try < fn:
                    break
                scale *= 0.5
            w = w + scale * dw
            F, diag, fn = F_try, diag_try, fn_try
            if float(np.max(np.abs(scale * dw))) <= 0.1 * cfg.step_tol:
                break
        last_update = float(np.max(np.abs(w - u)))
        u = w
        eps = max(0.1 * eps, cfg.picard_eps_floor)
    dtheta, _ = ev(u)
    res = _assemble_residual(problem, u, dtheta, ev.theta_old + dtheta, tau)
    rn = float(np.max(np.abs(res)))
    if rn <= cfg.tol:
        return u, rn, cfg.max_iters, "picard"
    raise SolverConvergenceError("Picard iteration did not converge", rn,
                                 cfg.max_iters)


# ── Public stepping API ────────────────────────────────────────────────────


def time_step(state: SimulationState, tau: float, config: SolverConfig
              ) -> SimulationState:
    """Advance one implicit step; returns a new state, the input is untouched."""
    if tau <= 0.0:
        raise ValueError(f"time step must be positive, got {tau}")
    problem = state.problem
    vm = _vm_or_build(state)
    ev = _ThetaEval(problem, vm, state.theta)
    u_old = state.u
    if config.method == "picard":
        u_new, rn, iters, method = _solve_step_picard(
            problem, ev, u_old, tau, config)
    else:
        u_new, rn, iters, method = _solve_step_newton(
            problem, ev, u_old, tau, config)
    if problem.bc.is_dirichlet:
        for j in _dirichlet_nodes(problem):
            u_new[j] = 0.0
    vm_new = vm.update(u_new)
    memories = None if problem.constant_density else vm_new.to_curves(problem.lambda_max)
    theta_new = _theta_of(problem, vm_new, memories)
    diag = StepDiagnostics(
        step=state.step + 1,
        energy=_energy_of(problem, vm_new, memories),
        mass=float(np.sum(theta_new * problem.geometry.volumes)),
        gradient_p_norm=_gradient_p_norm(problem, u_new),
        residual=rn,
        inner_iterations=iters,
        max_abs_u=float(np.max(np.abs(u_new))),
        support_radius=support_radius(problem.geometry, u_new,
                                      1e-9 * problem.lambda_max),
        method=method,
    )
    return SimulationState(problem, state.step + 1, tau, u_new, theta_new,
                           diag, _vm=vm_new, _memories=memories)


@dataclass
class SimulationResult:
    """Trajectory diagnostics: per-step series plus the final state."""

    problem: Problem
    tau: float
    steps: np.ndarray
    times: np.ndarray
    energy: np.ndarray
    mass: np.ndarray
    gradient_p_norm: np.ndarray
    residual: np.ndarray
    inner_iterations: np.ndarray
    max_abs_u: np.ndarray
    support_radius: np.ndarray
    final_state: SimulationState
    snapshots: list = field(default_factory=list)
    observations: dict = field(default_factory=dict)


def run_simulation(state: SimulationState, tau: float, n_steps: int,
                   config: SolverConfig, observers=(), store_every: int = 0
                   ) -> SimulationResult:
    """Iterate time_step n_steps times with per-step invariant checks.

    Asserts the L-infinity bound |u| <= lambda_max + lam_tol and the energy
    dissipation (E_i - E_{i-1})/tau + kappa_* * gradient_p_norm <= energy_tol
    after every step; violations abort with the step index.  observers is a
    sequence of callables state -> dict of extra per-step scalar series.
    """
    problem = state.problem
    lam = problem.lambda_max
    kap_star = problem.permeability.lo
    diags = [state.diagnostics]
    obs_series: dict = {}

    def observe(st):
        for fn in observers:
            for key, val in fn(st).items():
                obs_series.setdefault(key, []).append(val)

    observe(state)
    snapshots = []
    if store_every:
        snapshots.append((state.step, state.u.copy(), state.theta.copy()))
    prev_energy = state.diagnostics.energy
    for _ in range(n_steps):
        state = time_step(state, tau, config)
        d = state.diagnostics
        if config.check_invariants:
            if d.max_abs_u > lam + config.lam_tol:
                raise InvariantViolation(
                    f"pressure bound violated: max|u|={d.max_abs_u:.15g} "
                    f"exceeds {lam} + {config.lam_tol}", state.step)
            dissipation = (d.energy - prev_energy) / tau \
                + kap_star * d.gradient_p_norm
            if dissipation > config.energy_tol:
                raise InvariantViolation(
                    f"energy dissipation violated: defect {dissipation:.3e} "
                    f"exceeds {config.energy_tol}", state.step)
        prev_energy = d.energy
        diags.append(d)
        observe(state)
        if store_every and state.step % store_every == 0:
            snapshots.append((state.step, state.u.copy(), state.theta.copy()))
    return SimulationResult(
        problem=problem,
        tau=tau,
        steps=np.array([d.step for d in diags]),
        times=np.array([d.step * tau for d in diags]),
        energy=np.array([d.energy for d in diags]),
        mass=np.array([d.mass for d in diags]),
        gradient_p_norm=np.array([d.gradient_p_norm for d in diags]),
        residual=np.array([d.residual for d in diags]),
        inner_iterations=np.array([d.inner_iterations for d in diags]),
        max_abs_u=np.array([d.max_abs_u for d in diags]),
        support_radius=np.array([d.support_radius for d in diags]),
        final_state=state,
        snapshots=snapshots,
        observations={k: np.array(v) for k, v in obs_series.items()},
    )


# ── Validation and comparison ──────────────────────────────────────────────


def validate_initial_state(u0, memories, density, permeability: Permeability,
                           bc: BoundaryCondition, geometry: Geometry,
                           lambda_max: float, p: float,
                           support_R0: float = None, tol: float = 1e-8
                           ) -> ValidationReport:
    """Check the initial data against the scheme's admissibility conditions.

    Hard failures: memory anchors must equal u0 nodewise; the boundary law
    must hold for u0; with support_R0 given (front experiments) u0 and the
    memories must vanish for |x| >= R0 and the memories must stay below the
    wedge (lambda_max - r)^+.  Warning level: the sign compatibility between
    the initial memory slope and div(kappa |grad u0|^(p-2) grad u0) — a
    proof-grade hypothesis that a grid can only sample.
    """
    rep = ValidationReport()
    u0 = np.asarray(u0, dtype=float)
    n = geometry.n_nodes
    scale = max(1.0, float(np.max(np.abs(u0))) if u0.size else 1.0)

    synthesized = memories is None
    if synthesized:
        # default wedge memories anchored at u0; clamp so the validator can
        # still report on out-of-range data instead of refusing to run
        clipped = np.clip(u0, -lambda_max, lambda_max)
        memories = [make_initial_memory(float(v), lambda_max) for v in clipped]

    # anchors match the field (by construction for synthesized wedges)
    if synthesized:
        rep.add("initial-anchor", "pass", "wedge memories anchored at u0")
    else:
        bad = [j for j in range(n)
               if abs(memories[j].anchor - u0[j]) > 1e-12 * scale]
        if bad:
            rep.add("initial-anchor", "fail",
                    f"memory anchor differs from u0 at node {bad[0]} "
                    f"(and {len(bad) - 1} more): "
                    f"xi(0)={memories[bad[0]].anchor}, u0={u0[bad[0]]}")
        else:
            rep.add("initial-anchor", "pass", "")

    # magnitude bound
    if np.any(np.abs(u0) > lambda_max + 1e-12 * scale):
        j = int(np.argmax(np.abs(u0)))
        rep.add("pressure-bound", "fail",
                f"|u0| exceeds lambda_max={lambda_max} at node {j}: {u0[j]}")
    else:
        rep.add("pressure-bound", "pass", "")

    # boundary compatibility of the initial field
    theta0 = np.array([preisach_output(c, density) for c in memories])
    kap = permeability.nodal(geometry.x, theta0)
    ok_bc = True
    msg = ""
    for j, _area, side in geometry.boundary_faces():
        if side == "left":
            D = (u0[1] - u0[0]) / geometry.dx
            nrm = -1.0
        else:
            D = (u0[-1] - u0[-2]) / geometry.dx
            nrm = 1.0
        fluxn = kap[j] * np.abs(D) ** (p - 2.0) * D * nrm
        defect = bc.omega * fluxn + (1.0 - bc.omega) * u0[j]
        if abs(defect) > tol * scale:
            ok_bc = False
            msg = f"defect {defect:.3e} at the {side} boundary"
            break
    rep.add("boundary-compatibility", "pass" if ok_bc else "fail", msg)

    # compact support and wedge bound
    if support_R0 is not None:
        radii = geometry.radii()
        outside = radii >= support_R0 - 1e-12
        bad_u = np.nonzero(outside & (u0 != 0.0))[0]
        bad_m = [j for j in np.nonzero(outside)[0]
                 if np.any(memories[j].xi != 0.0)]
        if bad_u.size or bad_m:
            j = int(bad_u[0]) if bad_u.size else int(bad_m[0])
            rep.add("compact-support", "fail",
                    f"data does not vanish outside radius {support_R0} "
                    f"(node {j}, |x|={radii[j]:.6g})")
        else:
            rep.add("compact-support", "pass", "")
        bad_w = []
        for j in range(n):
            c = memories[j]
            cap = np.maximum(lambda_max - c.r, 0.0)
            if np.any(c.xi > cap + 1e-12 * scale):
                bad_w.append(j)
        if bad_w:
            rep.add("wedge-bound", "fail",
                    f"memory exceeds the wedge (lambda_max - r)^+ at node {bad_w[0]}")
        else:
            rep.add("wedge-bound", "pass", "")

    # sign compatibility of memory slope vs initial flux divergence (warning)
    D = np.diff(u0) / geometry.dx
    kf = 0.5 * (kap[:-1] + kap[1:])
    flux = geometry.face_areas * kf * np.abs(D) ** (p - 2.0) * D
    div = np.zeros(n)
    div[:-1] += flux / geometry.volumes[:-1]
    div[1:] -= flux / geometry.volumes[1:]
    div = -div  # div[j] = (Phi_{j+1/2} - Phi_{j-1/2}) / V_j
    fd_tol = tol * max(1.0, float(np.max(np.abs(div))))
    mismatched = 0
    witness = None
    for j in range(n):
        if abs(div[j]) <= fd_tol:
            continue
        c = memories[j]
        if c.r.size < 2 or c.xi[0] == c.xi[1] == 0.0:
            slope0 = 0.0
        else:
            slope0 = (c.xi[1] - c.xi[0]) / (c.r[1] - c.r[0])
        want = 1.0 if div[j] > 0.0 else -1.0
        if -slope0 != want:
            mismatched += 1
            if witness is None:
                witness = j
    if mismatched:
        rep.add("flux-sign", "warn",
                f"memory slope disagrees with the initial flux divergence at "
                f"{mismatched} nodes (first: node {witness}); the continuum "
                "compatibility hypothesis is not certified on this grid")
    else:
        rep.add("flux-sign", "pass (sampled)", "")
    return rep


@dataclass(frozen=True)
class ComparisonReport:
    max_violation: float
    node: int
    time: float

    def passed(self, tol: float) -> bool:
        return self.max_violation <= tol


def comparison_check(state: SimulationState, profile, R: float) -> ComparisonReport:
    """max_j |u_j| - U_c(c t + R - |x_j|): nonpositive when domination holds.

    The wave bound holds for every unit direction e, and the tightest of
    the planar bounds at a point x is the one with e.x = |x|.
    """
    t = state.time
    radii = state.problem.geometry.radii()
    wave = profile.evaluate(profile.c * t + R - radii)
    viol = np.abs(state.u) - wave
    j = int(np.argmax(viol))
    return ComparisonReport(float(viol[j]), j, t)
