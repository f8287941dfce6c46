"""Traveling waves and the propagation envelope of the degenerate flow.

A planar wave u(x, t) = U(c t + R - e.x) with speed c > 0 solves the flow
with flux kappa |grad u|^(p-2) grad u and primary-wetting saturation
Gamma0(u) exactly when the profile satisfies

    c * Gamma0(U(z)) = kappa * U'(z)^(p-1),    U(0) = 0, U' > 0.

Separating variables gives U implicitly through

    F(u) = int_0^u Gamma0(s)^(-1/(p-1)) ds,    U(z) = F^(-1)(c* z),

with c* = (c/kappa)^(1/(p-1)).  Near u = 0 the integrand behaves like
s^(-2/(p-1)) because Gamma0(s) ~ rho(0,0) s^2 / 2, so F is finite exactly
when 2/(p-1) < 1, i.e. p > 3: the slow-diffusion regime (comparing the
equivalent doubly nonlinear form with exponent m = 2 against p - 1).  Then
U(z) ~ z^((p-1)/(p-3)) at the front and the wave has a genuine free
boundary at z = 0.

A wave dominates every solution that starts inside the ball of radius R0
with values up to lambda_max provided its speed clears the selection bound

    c^(1/(p-1)) * (R - R0) >= kappa^(1/(p-1)) * F(lambda_max) =: lambda_bar.

Taking the envelope of the dominating lines R + c t over all admissible
speeds c yields the propagation bound

    R(t) = R0 + C_p * t^(1/p),    C_p = p * (lambda_bar / (p-1))^((p-1)/p),

which satisfies the tangency equation R - t R' = R0 + lambda_bar R'^(-1/(p-1)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from ._quad import QuadratureError, adaptive_simpson
from .hysteresis import primary_wetting

__all__ = [
    "WaveIntegral",
    "WaveProfile",
    "FrontEnvelope",
    "wave_integral_F",
    "build_wave_profile",
    "min_wave_speed",
    "envelope_radius",
    "evaluate_wave",
]


# ── The wave integral F ────────────────────────────────────────────────────


@dataclass(frozen=True)
class WaveIntegral:
    """Result of the profile integral F(u*): a value or a divergence witness.

    exponent is the near-zero integrand exponent 2/(p-1); the integral is
    finite exactly when it is below 1.
    """

    finite: bool
    value: float | None
    exponent: float

    def __str__(self):
        if self.finite:
            return f"F = {self.value:.12g} (exponent {self.exponent:.4g} < 1)"
        return f"divergent: near-zero exponent {self.exponent:.4g} >= 1"


def _head_integral(density, p: float, delta: float, tol: float) -> float:
    """int_0^delta Gamma0(u)^(-1/(p-1)) du with the singularity removed.

    Substituting u = w^eta with eta = (p-1)/(p-3) makes the integrand
    continuous at w = 0 with limit eta * (rho(0,0)/2)^(-1/(p-1)); for
    constant densities it is constant and the quadrature is exact.
    """
    eta = (p - 1.0) / (p - 3.0)
    q = 1.0 / (p - 1.0)
    limit0 = eta * (0.5 * density.rho_at_origin()) ** (-q)

    def g(w):
        if w == 0.0:
            return limit0
        u = w ** eta
        return eta * w ** (eta - 1.0) * primary_wetting(density, u) ** (-q)

    return adaptive_simpson(g, 0.0, delta ** (1.0 / eta), tol)


def wave_integral_F(density, p: float, u_star: float,
                    tol: float = 1e-13) -> WaveIntegral:
    """F(u*) = int_0^{u*} Gamma0(u)^(-1/(p-1)) du, or a divergence marker.

    The divergence decision is analytic (exponent comparison at u = 0), not
    a quadrature timeout.  For finite cases the integral is split at
    delta = 1e-3 u*: the singular head is integrated with an exact
    substitution and the tail by adaptive Simpson.  tol is relative.
    """
    if not (math.isfinite(p) and p > 2.0):
        raise ValueError(f"flux exponent must satisfy p > 2, got p={p}")
    if not (math.isfinite(u_star) and u_star >= 0.0):
        raise ValueError(f"upper limit must be nonnegative, got {u_star}")
    exponent = 2.0 / (p - 1.0)
    if exponent >= 1.0:  # p <= 3
        return WaveIntegral(False, None, exponent)
    if u_star == 0.0:
        return WaveIntegral(True, 0.0, exponent)

    q = 1.0 / (p - 1.0)
    delta = 1e-3 * u_star
    head = _head_integral(density, p, delta, 0.5 * tol * delta ** (1.0 - exponent))

    def f(u):
        return primary_wetting(density, u) ** (-q)

    scale = head + f(u_star) * (u_star - delta)
    tail = adaptive_simpson(f, delta, u_star, tol * scale)
    return WaveIntegral(True, head + tail, exponent)


# ── Wave profiles ──────────────────────────────────────────────────────────


@dataclass
class WaveProfile:
    """Tabulated increasing wave profile U with its defining constants.

    The table stores F(u) on log-spaced u nodes; evaluation inverts the C2
    spline of F against c* z by bisection (to 1e-12 relative in u).  Below
    the first node the exact near-zero power law U = K z^((p-1)/(p-3))
    continues the table; beyond z_max the profile extends linearly.  F is
    convex, so the linear tail underestimates U: comparison checks built on
    this profile may report spurious violations but can never hide one.
    """

    density: object
    p: float
    kappa: float
    c: float
    lambda_max: float
    z_max: float
    u_nodes: np.ndarray
    f_nodes: np.ndarray
    _t_nodes: np.ndarray = field(repr=False, default=None)
    _spline: CubicSpline = field(repr=False, default=None)

    def __post_init__(self):
        self.c_star = (self.c / self.kappa) ** (1.0 / (self.p - 1.0))
        self._t_nodes = np.log(self.u_nodes)
        self._spline = CubicSpline(self._t_nodes, self.f_nodes)
        self._dspline = self._spline.derivative()
        self.z_low = float(self.f_nodes[0]) / self.c_star
        self.z_high = float(self.f_nodes[-1]) / self.c_star
        self.u_high = float(self.u_nodes[-1])
        eta = (self.p - 1.0) / (self.p - 3.0)
        # continuity-matched front coefficient (exact for constant density)
        self._front_coef = float(self.u_nodes[0]) / self.z_low ** eta
        self._eta = eta
        # slope of the linear extension, taken from the spline at the top node
        self._end_slope = self.c_star * self.u_high / float(
            self._dspline(self._t_nodes[-1]))

    # -- evaluation --

    def _invert(self, targets: np.ndarray) -> np.ndarray:
        """Solve F(u) = target on the table range by bisection in log u."""
        lo = np.full(targets.shape, self._t_nodes[0])
        hi = np.full(targets.shape, self._t_nodes[-1])
        # 53 halvings shrink the log-u bracket below 1e-12
        for _ in range(53):
            mid = 0.5 * (lo + hi)
            below = self._spline(mid) < targets
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo < 1e-12):
                break
        return np.exp(0.5 * (lo + hi))

    def evaluate(self, z) -> np.ndarray:
        """Profile value U(z); zero for z <= 0 (vectorized)."""
        z = np.asarray(z, dtype=float)
        scalar = z.ndim == 0
        z = np.atleast_1d(z)
        out = np.zeros(z.shape)
        front = (z > 0.0) & (z < self.z_low)
        out[front] = self._front_coef * z[front] ** self._eta
        mid = (z >= self.z_low) & (z <= self.z_high)
        if np.any(mid):
            out[mid] = self._invert(self.c_star * z[mid])
        beyond = z > self.z_high
        out[beyond] = self.u_high + self._end_slope * (z[beyond] - self.z_high)
        return float(out[0]) if scalar else out

    def derivative(self, z) -> np.ndarray:
        """dU/dz from the tabulated interpolant (not the defining identity).

        Inside the table this is c* u / S'(log u) with S the spline of F, so
        the residual c Gamma0(U) - kappa (U')^(p-1) genuinely measures table
        and interpolant fidelity.
        """
        z = np.asarray(z, dtype=float)
        scalar = z.ndim == 0
        z = np.atleast_1d(z)
        out = np.zeros(z.shape)
        front = (z > 0.0) & (z < self.z_low)
        out[front] = (self._front_coef * self._eta
                      * z[front] ** (self._eta - 1.0))
        mid = (z >= self.z_low) & (z <= self.z_high)
        if np.any(mid):
            u = self._invert(self.c_star * z[mid])
            out[mid] = self.c_star * u / self._dspline(np.log(u))
        out[z > self.z_high] = self._end_slope
        return float(out[0]) if scalar else out

    def ode_residual(self, z) -> np.ndarray:
        """c*Gamma0(U(z)) - kappa*U'(z)^(p-1), normalized by max(1, c*Gamma0)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        u = np.atleast_1d(self.evaluate(z))
        du = np.atleast_1d(self.derivative(z))
        gam = np.array([primary_wetting(self.density, ui) for ui in u])
        res = self.c * gam - self.kappa * du ** (self.p - 1.0)
        return res / np.maximum(1.0, self.c * gam)

    def to_csv(self, path, n: int = 512):
        """Write (z, U, dU/dz, ODE residual) over [0, z_max] as deterministic CSV."""
        from .io import write_timeseries

        z = np.linspace(0.0, self.z_max, n)
        write_timeseries(path, {"z": z, "u": self.evaluate(z),
                                "du_dz": self.derivative(z),
                                "residual": self.ode_residual(z)}, first="z")


def build_wave_profile(density, p: float, kappa: float, c: float,
                       lambda_max: float, z_max: float | None = None,
                       n_table: int = 4096) -> WaveProfile:
    """Construct the traveling-wave profile for speed c.

    The table covers u up to 1.05*lambda_max by default, or up to
    F^(-1)(c* z_max) when z_max is given.  Requires p > 3 (otherwise F
    diverges and no finite wave exists), c > 0, kappa > 0.
    """
    if not (math.isfinite(p) and p > 3.0):
        raise ValueError(
            f"a bounded wave profile requires p > 3 (F diverges otherwise), got p={p}"
        )
    if not (math.isfinite(c) and c > 0.0):
        raise ValueError(f"wave speed must be positive, got c={c}")
    if not (math.isfinite(kappa) and kappa > 0.0):
        raise ValueError(f"permeability scale must be positive, got kappa={kappa}")
    if not (math.isfinite(lambda_max) and lambda_max > 0.0):
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")

    c_star = (c / kappa) ** (1.0 / (p - 1.0))
    q = 1.0 / (p - 1.0)

    def f(u):
        return primary_wetting(density, u) ** (-q)

    u_max = 1.05 * lambda_max
    F_max = wave_integral_F(density, p, u_max).value
    if z_max is not None:
        if not (math.isfinite(z_max) and z_max > 0.0):
            raise ValueError(f"z_max must be positive, got {z_max}")
        target = c_star * z_max
        for _ in range(60):
            if F_max >= target:
                break
            new_u = 2.0 * u_max
            F_max += adaptive_simpson(f, u_max, new_u, 1e-13 * F_max)
            u_max = new_u
        else:
            raise QuadratureError("could not extend the wave table to z_max",
                                  target - F_max, F_max)

    u_nodes = np.geomspace(1e-12 * u_max, u_max, n_table)
    f_vals = np.empty(n_table)
    f_vals[0] = wave_integral_F(density, p, float(u_nodes[0])).value
    for k in range(1, n_table):
        a, b = float(u_nodes[k - 1]), float(u_nodes[k])
        f_vals[k] = f_vals[k - 1] + adaptive_simpson(
            f, a, b, 1e-13 * max(f_vals[k - 1], 1e-300) + 1e-16 * f(b) * (b - a))
    if np.any(np.diff(f_vals) <= 0.0):
        raise QuadratureError("wave table is not strictly increasing", 0.0,
                              float(f_vals[-1]))

    if z_max is None:
        z_max = float(f_vals[-1]) / c_star

    profile = WaveProfile(density, p, kappa, c, lambda_max, float(z_max),
                          u_nodes, f_vals)
    # the spline of F must be monotone for bisection to be meaningful
    probe = np.linspace(profile._t_nodes[0], profile._t_nodes[-1],
                        8 * n_table)
    if np.any(np.diff(profile._spline(probe)) <= 0.0):
        raise QuadratureError("spline of the wave table lost monotonicity",
                              0.0, float(f_vals[-1]))
    return profile


# ── Speed selection and the envelope ───────────────────────────────────────


def min_wave_speed(R: float, R0: float, lambda_max: float, kappa: float,
                   p: float, density) -> float:
    """Smallest speed whose wave started at radius R dominates the data.

    Equality case of c^(1/(p-1)) (R - R0) >= kappa^(1/(p-1)) F(lambda_max):

        c = kappa * (F(lambda_max) / (R - R0))^(p-1).
    """
    if not (R > R0):
        raise ValueError(f"wave offset requires R > R0, got R={R}, R0={R0}")
    if not (math.isfinite(kappa) and kappa > 0.0):
        raise ValueError(f"permeability scale must be positive, got kappa={kappa}")
    F = wave_integral_F(density, p, lambda_max)
    if not F.finite:
        raise ValueError(
            f"no finite wave speed: F diverges for p={p} (requires p > 3)"
        )
    return kappa * (F.value / (R - R0)) ** (p - 1.0)


@dataclass(frozen=True)
class FrontEnvelope:
    """The propagation bound R(t) = R0 + C_p t^(1/p).

    lambda_bar = kappa^(1/(p-1)) * F(lambda_max) is the invariant of the
    speed selection; the envelope is tangent from below to every admissible
    dominating line R_c + c t and satisfies the tangency equation
    R - t R' = R0 + lambda_bar R'^(-1/(p-1)).
    """

    R0: float
    lambda_bar: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.lambda_bar) and self.lambda_bar > 0.0):
            raise ValueError(f"lambda_bar must be positive, got {self.lambda_bar}")
        if not (math.isfinite(self.p) and self.p > 3.0):
            raise ValueError(f"the envelope requires p > 3, got p={self.p}")

    @property
    def C_p(self) -> float:
        p = self.p
        return p * (self.lambda_bar / (p - 1.0)) ** ((p - 1.0) / p)

    def radius(self, t):
        """Envelope radius at time t >= 0 (vectorized)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0):
            raise ValueError("envelope times must be nonnegative")
        out = self.R0 + self.C_p * t ** (1.0 / self.p)
        return float(out) if out.ndim == 0 else out

    def rate(self, t):
        """dR/dt for t > 0."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0.0):
            raise ValueError("envelope rate needs t > 0")
        out = self.C_p / self.p * t ** (1.0 / self.p - 1.0)
        return float(out) if out.ndim == 0 else out

    def ode_residual(self, t):
        """Tangency defect (R - t R') - (R0 + lambda_bar R'^(-1/(p-1))), t > 0."""
        t = np.asarray(t, dtype=float)
        rp = self.rate(t)
        lhs = self.radius(t) - t * rp
        rhs = self.R0 + self.lambda_bar * rp ** (-1.0 / (self.p - 1.0))
        out = lhs - rhs
        return float(out) if out.ndim == 0 else out

    def dominating_line(self, c: float):
        """Start radius R(c) of the admissible line R + c t tangent to the envelope."""
        if c <= 0.0:
            raise ValueError(f"line speed must be positive, got {c}")
        return self.R0 + self.lambda_bar * c ** (-1.0 / (self.p - 1.0))


def envelope_radius(t, R0: float, lambda_bar: float, p: float):
    """Functional form R0 + C_p t^(1/p) without building the dataclass."""
    return FrontEnvelope(R0, lambda_bar, p).radius(t)


def envelope_from_problem(density, p: float, kappa: float, lambda_max: float,
                          R0: float) -> FrontEnvelope:
    """Envelope with lambda_bar = kappa^(1/(p-1)) F(lambda_max) from the data."""
    F = wave_integral_F(density, p, lambda_max)
    if not F.finite:
        raise ValueError(f"envelope undefined: F diverges for p={p} (requires p > 3)")
    lam_bar = kappa ** (1.0 / (p - 1.0)) * F.value
    return FrontEnvelope(R0, lam_bar, p)


def evaluate_wave(profile: WaveProfile, x, t: float, e, R: float):
    """Planar wave u_e(x, t) = U(c t + R - e.x) for a unit direction e.

    x may be an (n, N) array of points or an (n,) array of 1-D coordinates.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if abs(float(np.linalg.norm(e)) - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector, |e|={np.linalg.norm(e)}")
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1 and e.size == 1:
        proj = x * e[0]
    else:
        proj = np.atleast_2d(x) @ e
    return profile.evaluate(profile.c * t + R - proj)
