"""Scalar Preisach hysteresis built from play operators.

The saturation state of one material point is not a function of the current
pressure u alone: it depends on the whole history of wetting and drying.  We
carry that history as a memory curve r -> xi(r), where xi(r) is the state of
the play operator with threshold r >= 0.  A single discrete play update is

    xi' = min(u + r, max(u - r, xi)),

equivalently the solution of the variational inequality

    |u - xi'| <= r,   (xi' - xi) * (u - xi' - z) >= 0  for all |z| <= r.

Sweeping the update over all r at once turns a memory curve into a new one:
the wedge with apex (0, u) and slopes -+1 overwrites the old curve up to the
radius r* where wedge and curve meet, and leaves it untouched beyond.  Memory
curves are therefore piecewise linear with slopes in [-1, 1]; we store the
corner list, which is exact, compact, and closed under updates (this is the
classical return-point memory: interior extrema are wiped out).

The saturation output integrates a density over the region below the curve:

    theta = gbar + int_0^infty int_0^{xi(r)} rho(r, v) dv dr.

Three density families are supported: constant rho, separable polynomial
rho(r, v) = f(r) * g(v), and a bilinear interpolant on a rectangular grid.
The first two integrate in closed form; the grid family uses quadrature with
a Richardson check.

The primary wetting curve Gamma0(u) (monotone wetting from the virgin state)
and the limit wetting/drying curves (monotone moves from the fully dry/wet
states) are derived quantities; every reachable output lies between the two
limit curves.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from ._quad import QuadratureError, adaptive_simpson, trapezoid_richardson

__all__ = [
    "MemoryCurve",
    "BranchPoint",
    "ConstantDensity",
    "SeparableDensity",
    "GridDensity",
    "ValidationEntry",
    "ValidationReport",
    "QuadratureError",
    "play_update",
    "memory_update",
    "make_initial_memory",
    "preisach_output",
    "memory_energy",
    "primary_wetting",
    "branch_value",
    "branch_theta_slope",
    "limit_wetting",
    "limit_drying",
    "validate_hysteresis_inputs",
    "density_from_dict",
    "density_to_dict",
]

# ── Play operator ──────────────────────────────────────────────────────────


def play_update(xi_prev, u, r):
    """One implicit update of the play operator with threshold r.

    Parameters
    ----------
    xi_prev : float or ndarray
        Previous play state.
    u : float or ndarray
        New input value.
    r : float or ndarray
        Play threshold, r >= 0.

    Returns
    -------
    float or ndarray
        New play state min(u + r, max(u - r, xi_prev)).  This is the unique
        solution of the threshold-r variational inequality and keeps
        |u - xi| <= r.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0.0):
        raise ValueError(f"play threshold must be nonnegative, got r={r!r}")
    out = np.minimum(u + r_arr, np.maximum(u - r_arr, xi_prev))
    if np.ndim(out) == 0:
        return float(out)
    return out


# ── Memory curves ──────────────────────────────────────────────────────────


class MemoryCurve:
    """Piecewise-linear memory curve r -> xi(r), stored as a corner list.

    corners_r must start at 0 and be strictly increasing; the curve is
    1-Lipschitz between corners and extends with the last value beyond the
    final corner.  Admissible curves end at xi = 0 with r_last <= lambda_max
    (validate_hysteresis_inputs checks that; the constructor only enforces
    the structural invariants so that inadmissible curves can be built and
    then rejected by the validator).
    """

    __slots__ = ("r", "xi", "lambda_max")

    def __init__(self, corners_r, corners_xi, lambda_max: float, validate: bool = True):
        self.r = np.array(corners_r, dtype=float)
        self.xi = np.array(corners_xi, dtype=float)
        self.lambda_max = float(lambda_max)
        if validate:
            self._check()

    def _check(self):
        r, xi = self.r, self.xi
        if r.ndim != 1 or xi.ndim != 1 or r.size != xi.size or r.size == 0:
            raise ValueError("corner arrays must be 1-D, nonempty, equal length")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(xi))):
            raise ValueError("corner arrays must be finite")
        if r[0] != 0.0:
            raise ValueError(f"corner list must start at r=0, got r[0]={r[0]}")
        dr = np.diff(r)
        if np.any(dr <= 0.0):
            k = int(np.argmax(dr <= 0.0))
            raise ValueError(
                f"corner radii must be strictly increasing, violated at index {k + 1}"
            )
        slack = 1e-12 * (1.0 + np.abs(self.xi).max())
        if np.any(np.abs(np.diff(xi)) > dr + slack):
            k = int(np.argmax(np.abs(np.diff(xi)) > dr + slack))
            raise ValueError(
                f"memory curve must be 1-Lipschitz, violated on segment {k}"
            )
        if not (math.isfinite(self.lambda_max) and self.lambda_max > 0.0):
            raise ValueError(f"lambda_max must be positive, got {self.lambda_max}")

    # -- queries --

    @property
    def anchor(self) -> float:
        """Last applied input, xi(0)."""
        return float(self.xi[0])

    @property
    def n_corners(self) -> int:
        return int(self.r.size)

    def value(self, r):
        """Evaluate xi(r) (vectorized); constant extension beyond the last corner."""
        return np.interp(r, self.r, self.xi)

    def corners(self):
        """Corner list as a list of (r, xi) tuples."""
        return list(zip(self.r.tolist(), self.xi.tolist()))

    def __eq__(self, other):
        if not isinstance(other, MemoryCurve):
            return NotImplemented
        return (
            self.lambda_max == other.lambda_max
            and self.r.shape == other.r.shape
            and bool(np.all(self.r == other.r))
            and bool(np.all(self.xi == other.xi))
        )

    def __hash__(self):
        return hash((self.lambda_max, self.r.tobytes(), self.xi.tobytes()))

    def __repr__(self):
        return (
            f"MemoryCurve({self.n_corners} corners, anchor={self.anchor:.6g}, "
            f"lambda_max={self.lambda_max:.6g})"
        )

    # -- serialization --

    def to_dict(self) -> dict:
        return {
            "type": "memory_curve",
            "lambda_max": self.lambda_max,
            "corners": [[float(a), float(b)] for a, b in zip(self.r, self.xi)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryCurve":
        if d.get("type") != "memory_curve":
            raise ValueError(f"not a memory curve record: {d.get('type')!r}")
        corners = d["corners"]
        return cls([c[0] for c in corners], [c[1] for c in corners], d["lambda_max"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "MemoryCurve":
        return cls.from_dict(json.loads(s))


def make_initial_memory(u0: float, lambda_max: float) -> MemoryCurve:
    """Wedge memory for a point that was monotonically brought to u0.

    The curve is xi(r) = sign(u0) * max(|u0| - r, 0), which is the memory
    left behind by a single monotone sweep from the virgin state.  It
    satisfies xi(0) = u0 and vanishes for r >= |u0|.
    """
    if not math.isfinite(u0):
        raise ValueError(f"initial value must be finite, got {u0}")
    if not (math.isfinite(lambda_max) and lambda_max > 0.0):
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    if abs(u0) > lambda_max:
        raise ValueError(
            f"|u0|={abs(u0)} exceeds the admissible input bound lambda_max={lambda_max}"
        )
    if u0 == 0.0:
        return MemoryCurve([0.0], [0.0], lambda_max, validate=False)
    return MemoryCurve([0.0, abs(u0)], [u0, 0.0], lambda_max, validate=False)


def _crossing(r: np.ndarray, xi: np.ndarray, u: float):
    """Locate where the wedge with apex (0, u) meets the curve (r, xi).

    Returns (ascending, k, r_star): ascending is True when u >= xi(0); k is
    the index of the first corner at or beyond the crossing (k == r.size
    means the crossing lies in the constant extension); r_star is the
    crossing radius.  The crossing value is u - r_star (ascending) or
    u + r_star (descending).

    The same expressions, element for element, drive the vectorized memory
    engine in the solver module; tests pin the two paths to bitwise
    agreement.
    """
    a = xi[0]
    n = r.size
    if u >= a:
        g = xi + r  # nondecreasing since the curve is 1-Lipschitz
        k = int(np.searchsorted(g, u, side="right"))  # first corner with g > u
        if k >= 1 and g[k - 1] == u:
            # the wedge passes exactly through corner k-1; keeping the LAST
            # coincident corner wipes collinear leftovers maximally
            return True, k - 1, float(r[k - 1])
        if k == n:
            return True, n, u - xi[-1]
        s = (xi[k] - xi[k - 1]) / (r[k] - r[k - 1])
        r_star = r[k - 1] + (u - g[k - 1]) / (1.0 + s)
        return True, k, float(r_star)
    h = xi - r  # nonincreasing
    k = int(np.searchsorted(-h, -u, side="right"))  # first corner with h < u
    if k >= 1 and h[k - 1] == u:
        return False, k - 1, float(r[k - 1])
    if k == n:
        return False, n, xi[-1] - u
    s = (xi[k] - xi[k - 1]) / (r[k] - r[k - 1])
    r_star = r[k - 1] + (h[k - 1] - u) / (1.0 - s)
    return False, k, float(r_star)


def memory_update(curve: MemoryCurve, u: float) -> MemoryCurve:
    """Apply input u to every play threshold at once; return the new curve.

    The wedge from (0, u) replaces the old curve up to the crossing radius
    and the old corners beyond it survive.  Corners strictly inside the
    wedge are wiped (return-point memory).  The input curve is not modified.
    """
    if not math.isfinite(u):
        raise ValueError(f"input value must be finite, got {u}")
    a = curve.anchor
    if u == a:
        return curve
    asc, k, r_star = _crossing(curve.r, curve.xi, u)
    xi_star = u - r_star if asc else u + r_star
    n = curve.r.size
    if k < n and r_star == curve.r[k]:
        new_r = np.concatenate(([0.0], curve.r[k:]))
        new_xi = np.concatenate(([u], curve.xi[k:]))
    else:
        new_r = np.concatenate(([0.0, r_star], curve.r[k:]))
        new_xi = np.concatenate(([u, xi_star], curve.xi[k:]))
    return MemoryCurve(new_r, new_xi, curve.lambda_max, validate=False)


# ── Preisach densities ─────────────────────────────────────────────────────


class _DensityBase:
    """Common interface: pointwise rho, v-integrals, and segment integrals.

    psi(r, x)    = int_0^x rho(r, v) dv
    psi_v(r, x)  = int_0^x v * rho(r, v) dv          (energy weight)
    Segment integrals run over one linear piece of a memory curve.
    """

    kind = "abstract"

    def __init__(self, gbar: float, rho0=None, rho1: float | None = None):
        gbar = float(gbar)
        if not (0.0 <= gbar <= 1.0):
            raise ValueError(f"gbar must lie in [0, 1], got {gbar}")
        self.gbar = gbar
        self._rho0 = rho0
        self._rho1 = rho1

    # pointwise density, vectorized in both arguments
    def rho(self, r, v):
        raise NotImplementedError

    def rho_at_origin(self) -> float:
        return float(self.rho(0.0, 0.0))

    def rho_lower(self, U: float) -> float:
        """Lower regularity bound rho0(U); sampled when not user-supplied."""
        if self._rho0 is not None:
            return float(self._rho0(U))
        return 0.5 * float(self._sampled_extrema(U)[0])

    def rho_upper(self, U: float) -> float:
        """Upper regularity bound rho1; sampled when not user-supplied."""
        if self._rho1 is not None:
            return float(self._rho1)
        return 2.0 * float(self._sampled_extrema(U)[1])

    def _sampled_extrema(self, U: float, n: int = 64):
        rr = np.linspace(0.0, U, n)
        vv = np.linspace(-U, U, 2 * n)
        vals = self.rho(rr[:, None], vv[None, :])
        return float(np.min(vals)), float(np.max(vals))

    def psi(self, r: float, x: float) -> float:
        raise NotImplementedError

    def psi_v(self, r: float, x: float) -> float:
        raise NotImplementedError

    def segment_output_integral(self, r0, r1, x0, x1) -> float:
        """int_{r0}^{r1} psi(r, xi(r)) dr along the linear piece x0 -> x1."""
        raise NotImplementedError

    def segment_energy_integral(self, r0, r1, x0, x1) -> float:
        """Same with the energy weight psi_v."""
        raise NotImplementedError

    def wedge_slope_integral(self, r_star: float, u: float, ascending: bool) -> float:
        """int_0^{r*} rho(r, u -+ r) dr: the local slope of a saturation branch."""
        raise NotImplementedError

    def primary_wetting(self, u: float) -> float:
        """Gamma0(u) = int_0^u psi(r, u - r) dr for u >= 0."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class ConstantDensity(_DensityBase):
    """rho(r, v) = const.  Everything integrates in closed form."""

    kind = "constant"

    def __init__(self, rho: float, gbar: float = 0.0, rho0=None, rho1=None):
        super().__init__(gbar, rho0, rho1)
        rho = float(rho)
        if not (math.isfinite(rho) and rho > 0.0):
            raise ValueError(f"constant density must be positive, got {rho}")
        self.rho_value = rho

    def rho(self, r, v):
        return np.broadcast_to(
            np.float64(self.rho_value), np.broadcast_shapes(np.shape(r), np.shape(v))
        ).copy() if (np.ndim(r) or np.ndim(v)) else self.rho_value

    def rho_lower(self, U):
        if self._rho0 is not None:
            return float(self._rho0(U))
        return 0.5 * self.rho_value

    def rho_upper(self, U):
        if self._rho1 is not None:
            return float(self._rho1)
        return 2.0 * self.rho_value

    def psi(self, r, x):
        return self.rho_value * x

    def psi_v(self, r, x):
        return 0.5 * self.rho_value * x * x

    def segment_output_integral(self, r0, r1, x0, x1):
        return self.rho_value * 0.5 * (x0 + x1) * (r1 - r0)

    def segment_energy_integral(self, r0, r1, x0, x1):
        return 0.5 * self.rho_value * (r1 - r0) * (x0 * x0 + x0 * x1 + x1 * x1) / 3.0

    def wedge_slope_integral(self, r_star, u, ascending):
        return self.rho_value * r_star

    def primary_wetting(self, u):
        return 0.5 * self.rho_value * u * u

    def to_dict(self):
        return {"type": "preisach_density", "kind": "constant",
                "rho": self.rho_value, "gbar": self.gbar}


class SeparableDensity(_DensityBase):
    """rho(r, v) = f(r) * g(v) with polynomial factors.

    Segment integrals compose the antiderivative of g with the linear map
    r -> xi(r) and integrate the resulting polynomial exactly, so outputs
    carry no quadrature error.  Positivity of f and g on the working box is
    the caller's responsibility and is checked (sampled) by
    validate_hysteresis_inputs.
    """

    kind = "separable"

    def __init__(self, r_coeffs, v_coeffs, gbar: float = 0.0, rho0=None, rho1=None):
        super().__init__(gbar, rho0, rho1)
        self.f = Polynomial(np.asarray(r_coeffs, dtype=float))
        self.g = Polynomial(np.asarray(v_coeffs, dtype=float))
        if self.f.degree() < 0 or self.g.degree() < 0:
            raise ValueError("polynomial factors need at least one coefficient")
        if not (np.all(np.isfinite(self.f.coef)) and np.all(np.isfinite(self.g.coef))):
            raise ValueError("polynomial coefficients must be finite")
        self._G = self.g.integ()          # antiderivative of g
        self._H = (Polynomial([0.0, 1.0]) * self.g).integ()  # of v*g(v)

    def rho(self, r, v):
        return self.f(np.asarray(r, dtype=float)) * self.g(np.asarray(v, dtype=float))

    def psi(self, r, x):
        return float(self.f(r) * (self._G(x) - self._G(0.0)))

    def psi_v(self, r, x):
        return float(self.f(r) * (self._H(x) - self._H(0.0)))

    def _segment(self, r0, r1, x0, x1, anti):
        if r1 == r0:
            return 0.0
        beta = (x1 - x0) / (r1 - r0)
        line = Polynomial([x0 - beta * r0, beta])  # xi(r) along the segment
        integrand = self.f * (anti(line) - anti(0.0))
        prim = integrand.integ()
        return float(prim(r1) - prim(r0))

    def segment_output_integral(self, r0, r1, x0, x1):
        return self._segment(r0, r1, x0, x1, self._G)

    def segment_energy_integral(self, r0, r1, x0, x1):
        return self._segment(r0, r1, x0, x1, self._H)

    def wedge_slope_integral(self, r_star, u, ascending):
        sgn = -1.0 if ascending else 1.0
        line = Polynomial([u, sgn])  # v = u -+ r
        prim = (self.f * self.g(line)).integ()
        return float(prim(r_star) - prim(0.0))

    def primary_wetting(self, u):
        line = Polynomial([u, -1.0])
        integrand = self.f * (self._G(line) - self._G(0.0))
        prim = integrand.integ()
        return float(prim(u) - prim(0.0))

    def to_dict(self):
        return {"type": "preisach_density", "kind": "separable",
                "r_coeffs": self.f.coef.tolist(),
                "v_coeffs": self.g.coef.tolist(), "gbar": self.gbar}


class GridDensity(_DensityBase):
    """Bilinear interpolant of positive samples on a rectangular (r, v) grid.

    Outside the grid box the density extends with its boundary values.  The
    v-integrals of the interpolant are exact (piecewise Simpson); integrals
    along memory-curve segments use the doubling trapezoid rule with a
    Richardson check at tolerance 1e-10.
    """

    kind = "grid"

    quad_tol = 1e-10

    def __init__(self, r_nodes, v_nodes, values, gbar: float = 0.0,
                 rho0=None, rho1=None):
        super().__init__(gbar, rho0, rho1)
        self.r_nodes = np.asarray(r_nodes, dtype=float)
        self.v_nodes = np.asarray(v_nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.r_nodes.ndim != 1 or self.v_nodes.ndim != 1:
            raise ValueError("grid node arrays must be 1-D")
        if np.any(np.diff(self.r_nodes) <= 0) or np.any(np.diff(self.v_nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.values.shape != (self.r_nodes.size, self.v_nodes.size):
            raise ValueError(
                f"values must have shape {(self.r_nodes.size, self.v_nodes.size)}, "
                f"got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if np.any(self.values <= 0.0):
            raise ValueError("grid values must be positive")

    def rho(self, r, v):
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        rr = np.clip(r, self.r_nodes[0], self.r_nodes[-1])
        vv = np.clip(v, self.v_nodes[0], self.v_nodes[-1])
        i = np.clip(np.searchsorted(self.r_nodes, rr, side="right") - 1,
                    0, self.r_nodes.size - 2)
        j = np.clip(np.searchsorted(self.v_nodes, vv, side="right") - 1,
                    0, self.v_nodes.size - 2)
        tr = (rr - self.r_nodes[i]) / (self.r_nodes[i + 1] - self.r_nodes[i])
        tv = (vv - self.v_nodes[j]) / (self.v_nodes[j + 1] - self.v_nodes[j])
        z00 = self.values[i, j]
        z10 = self.values[i + 1, j]
        z01 = self.values[i, j + 1]
        z11 = self.values[i + 1, j + 1]
        out = ((1 - tr) * (1 - tv) * z00 + tr * (1 - tv) * z10
               + (1 - tr) * tv * z01 + tr * tv * z11)
        return out if out.ndim else float(out)

    def _v_profile(self, r):
        """Density restricted to fixed r: values at v_nodes (vectorized in r)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        rr = np.clip(r, self.r_nodes[0], self.r_nodes[-1])
        i = np.clip(np.searchsorted(self.r_nodes, rr, side="right") - 1,
                    0, self.r_nodes.size - 2)
        tr = (rr - self.r_nodes[i]) / (self.r_nodes[i + 1] - self.r_nodes[i])
        return (1 - tr)[:, None] * self.values[i] + tr[:, None] * self.values[i + 1]

    def _v_integral(self, profiles, x, power):
        """int_0^x v^power * rho(r, v) dv for each row of профiles (exact)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = self.v_nodes
        lo, hi = v[0], v[-1]
        n = profiles.shape[0]
        out = np.zeros(n)

        def cell_int(a, b, fa, fb):
            # exact integral of v^power * linear density over [a, b]
            if power == 0:
                return 0.5 * (b - a) * (fa + fb)
            m = 0.5 * (a + b)
            fm = 0.5 * (fa + fb)
            return (b - a) / 6.0 * (a * fa + 4.0 * m * fm + b * fb)

        # antiderivative at the v-grid nodes, row-wise
        if power == 0:
            cum = np.concatenate(
                [np.zeros((n, 1)),
                 np.cumsum(0.5 * (profiles[:, 1:] + profiles[:, :-1])
                           * np.diff(v)[None, :], axis=1)], axis=1)
        else:
            va, vb = v[:-1], v[1:]
            vm = 0.5 * (va + vb)
            fa, fb = profiles[:, :-1], profiles[:, 1:]
            fm = 0.5 * (fa + fb)
            seg = (vb - va) / 6.0 * (va * fa + 4.0 * vm * fm + vb * fb)
            cum = np.concatenate([np.zeros((n, 1)), np.cumsum(seg, axis=1)], axis=1)

        def anti(xq):
            """Row-wise antiderivative (from v_nodes[0]) evaluated at xq."""
            res = np.empty(n)
            inside = (xq >= lo) & (xq <= hi)
            below = xq < lo
            above = xq > hi
            if np.any(inside):
                xi_ = xq[inside]
                j = np.clip(np.searchsorted(v, xi_, side="right") - 1, 0, v.size - 2)
                rows = np.nonzero(inside)[0]
                base = cum[rows, j]
                a = v[j]
                fa = profiles[rows, j]
                t = (xi_ - a) / (v[j + 1] - a)
                fx = (1 - t) * fa + t * profiles[rows, j + 1]
                res[inside] = base + cell_int(a, xi_, fa, fx)
            if np.any(below):
                rows = np.nonzero(below)[0]
                fa = profiles[rows, 0]
                res[below] = cell_int(xq[below], lo, fa, fa) * -1.0
            if np.any(above):
                rows = np.nonzero(above)[0]
                fb = profiles[rows, -1]
                res[above] = cum[rows, -1] + cell_int(hi, xq[above], fb, fb)
            return res

        zero = np.zeros(n)
        out = anti(np.broadcast_to(x, (n,)).astype(float)) - anti(zero)
        return out

    def psi(self, r, x):
        prof = self._v_profile(r)
        return float(self._v_integral(prof, x, 0)[0])

    def psi_v(self, r, x):
        prof = self._v_profile(r)
        return float(self._v_integral(prof, x, 1)[0])

    def _segment(self, r0, r1, x0, x1, power):
        if r1 == r0:
            return 0.0
        beta = (x1 - x0) / (r1 - r0)

        def f(rs):
            prof = self._v_profile(rs)
            xs = x0 + beta * (rs - r0)
            return self._v_integral(prof, xs, power)

        return trapezoid_richardson(f, r0, r1, tol_rel=self.quad_tol)

    def segment_output_integral(self, r0, r1, x0, x1):
        return self._segment(r0, r1, x0, x1, 0)

    def segment_energy_integral(self, r0, r1, x0, x1):
        return self._segment(r0, r1, x0, x1, 1)

    def wedge_slope_integral(self, r_star, u, ascending):
        if r_star == 0.0:
            return 0.0
        sgn = -1.0 if ascending else 1.0

        def f(rs):
            return self.rho(rs, u + sgn * rs)

        return trapezoid_richardson(f, 0.0, r_star, tol_rel=self.quad_tol)

    def primary_wetting(self, u):
        if u == 0.0:
            return 0.0

        def f(rs):
            prof = self._v_profile(rs)
            return self._v_integral(prof, u - rs, 0)

        return trapezoid_richardson(f, 0.0, u, tol_rel=self.quad_tol)

    def to_dict(self):
        return {"type": "preisach_density", "kind": "grid",
                "r_nodes": self.r_nodes.tolist(),
                "v_nodes": self.v_nodes.tolist(),
                "values": self.values.tolist(), "gbar": self.gbar}


def density_to_dict(density) -> dict:
    return density.to_dict()


def density_from_dict(d: dict):
    if d.get("type") != "preisach_density":
        raise ValueError(f"not a density record: {d.get('type')!r}")
    kind = d.get("kind")
    if kind == "constant":
        return ConstantDensity(d["rho"], d.get("gbar", 0.0))
    if kind == "separable":
        return SeparableDensity(d["r_coeffs"], d["v_coeffs"], d.get("gbar", 0.0))
    if kind == "grid":
        return GridDensity(d["r_nodes"], d["v_nodes"], d["values"], d.get("gbar", 0.0))
    raise ValueError(f"unknown density kind {kind!r}")


# ── Outputs ────────────────────────────────────────────────────────────────


def _segments_of(curve: MemoryCurve):
    """Yield the linear pieces (r0, r1, x0, x1) including the extension.

    The constant extension is cut off at lambda_max; for admissible curves
    it carries xi = 0 and contributes nothing.
    """
    r, xi = curve.r, curve.xi
    for k in range(r.size - 1):
        yield float(r[k]), float(r[k + 1]), float(xi[k]), float(xi[k + 1])
    if xi[-1] != 0.0 and curve.lambda_max > r[-1]:
        yield float(r[-1]), curve.lambda_max, float(xi[-1]), float(xi[-1])


def preisach_output(curve: MemoryCurve, density) -> float:
    """Saturation theta = gbar + integral of the density below the curve."""
    total = density.gbar
    for r0, r1, x0, x1 in _segments_of(curve):
        total += density.segment_output_integral(r0, r1, x0, x1)
    return float(total)


def memory_energy(curve: MemoryCurve, density) -> float:
    """Stored energy int_0^infty int_0^{xi(r)} v rho(r, v) dv dr."""
    total = 0.0
    for r0, r1, x0, x1 in _segments_of(curve):
        total += density.segment_energy_integral(r0, r1, x0, x1)
    return float(total)


def primary_wetting(density, u: float) -> float:
    """Primary wetting curve Gamma0(u), the virgin-state monotone output.

    Gamma0(u) = int_0^u int_0^{u-r} rho(r, v) dv dr; for constant rho this
    is rho*u^2/2.  Defined for u >= 0.
    """
    if not math.isfinite(u):
        raise ValueError(f"input must be finite, got {u}")
    if u < 0.0:
        raise ValueError(f"primary wetting curve is defined for u >= 0, got {u}")
    return float(density.primary_wetting(u))


def branch_theta_slope(curve: MemoryCurve, u: float, density):
    """Saturation and its u-derivative after one monotone move to u.

    Returns (theta, dtheta/du) without materializing the updated curve: the
    wedge part is integrated directly and the surviving tail reuses the
    existing corners.  The slope is int_0^{r*} rho(r, u -+ r) dr, which is
    also the local slope of the Preisach branch through the current state.
    """
    if not math.isfinite(u):
        raise ValueError(f"input must be finite, got {u}")
    r, xi = curve.r, curve.xi
    asc, k, r_star = _crossing(r, xi, u)
    if u == curve.anchor:
        return preisach_output(curve, density), 0.0
    x_star = u - r_star if asc else u + r_star
    # wedge part over [0, r*]
    total = density.gbar + density.segment_output_integral(0.0, r_star, u, x_star)
    # partial old segment [r*, r_k], then intact corners beyond
    n = r.size
    if k < n:
        if r_star != r[k]:
            total += density.segment_output_integral(r_star, float(r[k]), x_star,
                                                     float(xi[k]))
        for m in range(k, n - 1):
            total += density.segment_output_integral(float(r[m]), float(r[m + 1]),
                                                     float(xi[m]), float(xi[m + 1]))
        if xi[-1] != 0.0 and curve.lambda_max > r[-1]:
            total += density.segment_output_integral(float(r[-1]), curve.lambda_max,
                                                     float(xi[-1]), float(xi[-1]))
    else:
        if xi[-1] != 0.0 and curve.lambda_max > r_star:
            total += density.segment_output_integral(r_star, curve.lambda_max,
                                                     float(xi[-1]), float(xi[-1]))
    slope = density.wedge_slope_integral(r_star, u, asc)
    return float(total), float(slope)


# ── Branches and limit curves ──────────────────────────────────────────────

_DIRECTIONS = ("wetting", "drying")


@dataclass(frozen=True)
class BranchPoint:
    """Anchor of a saturation branch: a memory state plus the branch direction."""

    memory: MemoryCurve
    u_anchor: float
    direction: str = "wetting"

    def __post_init__(self):
        if self.direction not in _DIRECTIONS:
            raise ValueError(
                f"direction must be one of {_DIRECTIONS}, got {self.direction!r}"
            )
        if abs(self.u_anchor - self.memory.anchor) > 1e-12:
            raise ValueError(
                f"anchor input {self.u_anchor} does not match the memory curve "
                f"anchor {self.memory.anchor}"
            )


def branch_value(anchor: BranchPoint, u: float, density) -> float:
    """Value of the wetting/drying branch through the anchor at input u.

    A branch value is simply the Preisach output after a single monotone
    move from the anchor state, so queries on the wrong side of the anchor
    (below it for a wetting branch, above for drying) are rejected.
    """
    if not math.isfinite(u):
        raise ValueError(f"input must be finite, got {u}")
    if anchor.direction == "wetting" and u < anchor.u_anchor:
        raise ValueError(
            f"wetting branch queried below its anchor ({u} < {anchor.u_anchor})"
        )
    if anchor.direction == "drying" and u > anchor.u_anchor:
        raise ValueError(
            f"drying branch queried above its anchor ({u} > {anchor.u_anchor})"
        )
    if u == anchor.u_anchor:
        return preisach_output(anchor.memory, density)
    return preisach_output(memory_update(anchor.memory, u), density)


def limit_wetting(density, lambda_max: float, u: float) -> float:
    """Wetting branch from the completely dry state, the lower envelope of outputs."""
    if abs(u) > lambda_max:
        raise ValueError(f"|u|={abs(u)} exceeds lambda_max={lambda_max}")
    dry = make_initial_memory(-lambda_max, lambda_max)
    if u == -lambda_max:
        return preisach_output(dry, density)
    return preisach_output(memory_update(dry, u), density)


def limit_drying(density, lambda_max: float, u: float) -> float:
    """Drying branch from the completely wet state, the upper envelope of outputs."""
    if abs(u) > lambda_max:
        raise ValueError(f"|u|={abs(u)} exceeds lambda_max={lambda_max}")
    wet = make_initial_memory(lambda_max, lambda_max)
    if u == lambda_max:
        return preisach_output(wet, density)
    return preisach_output(memory_update(wet, u), density)


# ── Validation ─────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class ValidationEntry:
    name: str
    status: str  # "pass", "pass (sampled)", "warn", "fail"
    message: str = ""

    def __str__(self):
        suffix = f": {self.message}" if self.message else ""
        return f"[{self.status}] {self.name}{suffix}"


@dataclass
class ValidationReport:
    entries: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(e.status == "fail" for e in self.entries)

    @property
    def warnings(self) -> list:
        return [e for e in self.entries if e.status == "warn"]

    @property
    def failures(self) -> list:
        return [e for e in self.entries if e.status == "fail"]

    def add(self, name, status, message=""):
        self.entries.append(ValidationEntry(name, status, message))

    def __str__(self):
        return "\n".join(str(e) for e in self.entries)


def validate_hysteresis_inputs(density, curve: MemoryCurve | None,
                               lambda_max: float, samples: int = 64
                               ) -> ValidationReport:
    """Check density regularity, saturation headroom, and curve admissibility.

    Density positivity/regularity and the saturation inequality are sampled
    checks over (0, U) x (-U, U) with U = lambda_max; they report
    "pass (sampled)".  The saturation inequality is warning-level: the
    output staying in [0, 1] needs it, existence of solutions does not.
    Curve checks (1-Lipschitz corners, zero tail within lambda_max, band
    compatibility with the anchor) are exact and failure-level.
    """
    rep = ValidationReport()
    U = float(lambda_max)
    if not (math.isfinite(U) and U > 0.0):
        rep.add("input-bound", "fail", f"lambda_max must be positive, got {U}")
        return rep

    # density regularity: 0 < rho0(U) < rho < rho1 on the open box
    lo = density.rho_lower(U)
    hi = density.rho_upper(U)
    rr = np.linspace(0.0, U, samples + 2)[1:-1]
    vv = np.linspace(-U, U, 2 * samples + 2)[1:-1]
    vals = np.asarray(density.rho(rr[:, None], vv[None, :]), dtype=float)
    if not np.all(np.isfinite(vals)):
        rep.add("density-regularity", "fail", "density is not finite on the box")
    elif lo <= 0.0:
        rep.add("density-regularity", "fail",
                f"lower bound rho0({U:g})={lo:g} is not positive")
    elif np.any(vals <= lo) or np.any(vals >= hi):
        bad = np.unravel_index(
            int(np.argmin(np.minimum(vals - lo, hi - vals))), vals.shape)
        rep.add("density-regularity", "fail",
                f"rho({rr[bad[0]]:.4g}, {vv[bad[1]]:.4g})={vals[bad]:.4g} "
                f"escapes ({lo:.4g}, {hi:.4g})")
    else:
        rep.add("density-regularity", "pass (sampled)",
                f"{lo:.4g} < rho < {hi:.4g} on {samples}x{2 * samples} samples")

    # saturation inequality (warning-level): wetting and drying mass headroom
    grid_r = np.linspace(0.0, U, 257)
    grid_v = np.linspace(0.0, U, 257)
    wet = np.asarray(density.rho(grid_r[:, None], grid_v[None, :]), dtype=float)
    dry = np.asarray(density.rho(grid_r[:, None], -grid_v[None, :]), dtype=float)
    i_wet = float(np.trapezoid(np.trapezoid(wet, grid_v, axis=1), grid_r))
    i_dry = float(np.trapezoid(np.trapezoid(dry, grid_v, axis=1), grid_r))
    head_wet = 1.0 - density.gbar
    head_dry = density.gbar
    if i_wet > head_wet or i_dry > head_dry:
        rep.add("saturation-headroom", "warn",
                f"wetting mass {i_wet:.4g} vs headroom {head_wet:.4g}, "
                f"drying mass {i_dry:.4g} vs headroom {head_dry:.4g}; "
                "outputs may leave [0, 1]")
    else:
        rep.add("saturation-headroom", "pass (sampled)",
                f"wetting mass {i_wet:.4g} <= {head_wet:.4g}, "
                f"drying mass {i_dry:.4g} <= {head_dry:.4g}")

    if curve is not None:
        r, xi = curve.r, curve.xi
        dr = np.diff(r)
        dxi = np.abs(np.diff(xi))
        slack = 1e-12 * (1.0 + float(np.abs(xi).max()))
        if np.any(dxi > dr + slack):
            k = int(np.argmax(dxi > dr + slack))
            rep.add("memory-lipschitz", "fail",
                    f"segment {k} has |dxi|={dxi[k]:.4g} > dr={dr[k]:.4g}")
        else:
            rep.add("memory-lipschitz", "pass", "")
        if xi[-1] != 0.0 or r[-1] > U + slack:
            rep.add("memory-zero-tail", "fail",
                    f"curve must vanish from r_last <= lambda_max: "
                    f"r_last={r[-1]:.6g}, xi_last={xi[-1]:.6g}, lambda_max={U:g}")
        else:
            rep.add("memory-zero-tail", "pass", "")
        band = np.abs(curve.anchor - xi) - r
        if np.any(band > slack):
            k = int(np.argmax(band > slack))
            rep.add("memory-band", "fail",
                    f"|anchor - xi({r[k]:.4g})| exceeds r by {band[k]:.3g}")
        else:
            rep.add("memory-band", "pass", "")
    return rep
