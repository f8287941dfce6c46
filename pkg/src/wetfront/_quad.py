"""Small quadrature helpers shared by the hysteresis and wave modules.

Two workhorses: an adaptive Simpson rule for smooth scalar integrands and a
doubling trapezoid rule with one Richardson extrapolation step for vectorized
integrands.  Both raise QuadratureError (carrying the achieved error estimate)
instead of silently returning a value outside tolerance.
"""
from __future__ import annotations


class QuadratureError(RuntimeError):
    """Quadrature failed to reach the requested tolerance.

    Attributes
    ----------
    achieved : float
        Error estimate of the best value computed before giving up.
    value : float
        That best value, for diagnostics.
    """

    def __init__(self, message: str, achieved: float, value: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved
        self.value = value


def adaptive_simpson(f, a: float, b: float, tol: float, max_depth: int = 48) -> float:
    """Integrate f over [a, b] by adaptive Simpson subdivision.

    f is called with scalars.  tol is an absolute tolerance for the whole
    interval; it is split in half on each subdivision.  The standard
    one-level Richardson correction (S2 + (S2 - S1)/15) is returned on each
    accepted panel.
    """
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_simpson(f, b, a, tol, max_depth)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    # Iterative stack of (a, fa, m, fm, b, fb, panel_estimate, tol, depth).
    total = 0.0
    worst = 0.0
    stack = [(a, fa, m, fm, b, fb, whole, tol, 0)]
    while stack:
        a0, fa0, m0, fm0, b0, fb0, s0, t0, depth = stack.pop()
        lm = 0.5 * (a0 + m0)
        rm = 0.5 * (m0 + b0)
        flm, frm = f(lm), f(rm)
        sl = (m0 - a0) / 6.0 * (fa0 + 4.0 * flm + fm0)
        sr = (b0 - m0) / 6.0 * (fm0 + 4.0 * frm + fb0)
        err = (sl + sr - s0) / 15.0
        if abs(err) <= t0 or depth >= max_depth:
            if abs(err) > t0:
                worst = max(worst, abs(err))
            total += sl + sr + err
        else:
            half = 0.5 * t0
            stack.append((a0, fa0, lm, flm, m0, fm0, sl, half, depth + 1))
            stack.append((m0, fm0, rm, frm, b0, fb0, sr, half, depth + 1))
    if worst > 0.0:
        raise QuadratureError(
            "adaptive Simpson hit the depth cap before converging", worst, total
        )
    return total


def trapezoid_richardson(
    f,
    a: float,
    b: float,
    tol_rel: float = 1e-10,
    tol_abs: float = 1e-14,
    n0: int = 8,
    max_doublings: int = 16,
) -> float:
    """Composite trapezoid with doubling and one Richardson check.

    f must accept a numpy array of abscissae and return the values.  Stops
    when the Richardson-extrapolated value agrees with the fine trapezoid
    value within max(tol_abs, tol_rel*|value|).
    """
    import numpy as np

    if b == a:
        return 0.0
    n = n0
    xs = np.linspace(a, b, n + 1)
    coarse = np.trapezoid(f(xs), xs)
    for _ in range(max_doublings):
        n *= 2
        xs = np.linspace(a, b, n + 1)
        fine = np.trapezoid(f(xs), xs)
        rich = fine + (fine - coarse) / 3.0
        err = abs(rich - fine)
        if err <= max(tol_abs, tol_rel * abs(rich)):
            return float(rich)
        coarse = fine
    raise QuadratureError(
        "trapezoid refinement exhausted its doubling budget", err, float(rich)
    )
