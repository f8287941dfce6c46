"""Time-discrete scheme: nodal oracle, rest states, invariants, geometry."""
import dataclasses

import numpy as np
import pytest
from scipy.optimize import brentq

from wetfront.hysteresis import ConstantDensity, MemoryCurve, make_initial_memory
from wetfront.solver import (
    BoundaryCondition,
    Geometry,
    InvariantViolation,
    Permeability,
    Problem,
    SimulationState,
    SolverConfig,
    SolverConvergenceError,
    initial_state,
    preisach_output,
    run_simulation,
    support_radius,
    time_step,
    validate_initial_state,
)

RHO2 = ConstantDensity(2.0)


def make_problem(half_length=3.0, nodes=61, omega=1.0, p=4.0, kappa=1.0,
                 lambda_max=1.0, density=RHO2):
    return Problem(Geometry.interval(half_length, nodes), density,
                   Permeability.constant(kappa), BoundaryCondition(omega),
                   p, lambda_max)


def bump(x, height, radius):
    out = height * (1.0 - (x / radius) ** 2)
    return np.where(np.abs(x) < radius, out, 0.0)


def test_single_unknown_step_against_scalar_oracle():
    """Three nodes, Dirichlet ends: the middle node solves a scalar equation
    whose residual we can write down from first principles (drying branch of
    the wedge memory plus signed-cube flux) and root-find independently."""
    prob = make_problem(half_length=1.0, nodes=2, omega=0.0)
    a, tau = 0.5, 0.1
    u0 = np.array([0.0, a, 0.0])

    def theta_drying(v):
        # wedge anchored at a, then one reversal down to v <= a
        r_star = 0.5 * (a - v)
        return 2.0 * v * r_star + r_star ** 2 + (a - r_star) ** 2

    def residual(v):
        # unit volume, unit spacing; both neighbours pinned at zero
        return (theta_drying(v) - a * a) / tau + 2.0 * v ** 3

    root = brentq(residual, 0.0, a, xtol=1e-15)
    for method in ("newton", "picard"):
        st = initial_state(prob, u0, tau)
        st = time_step(st, tau, SolverConfig(method=method))
        assert st.u[1] == pytest.approx(root, abs=1e-10), method
        assert st.u[0] == 0.0 and st.u[2] == 0.0
        assert st.theta[1] == pytest.approx(theta_drying(root), abs=1e-9)


def test_rest_states_are_bitwise_stationary():
    prob = make_problem()
    for u0 in (np.zeros(121), np.full(121, 0.3)):
        st = initial_state(prob, u0, 1e-3)
        for _ in range(5):
            st = time_step(st, 1e-3, SolverConfig())
        assert np.array_equal(st.u, u0)
        assert st.diagnostics.residual == 0.0
        assert st.diagnostics.inner_iterations == 0


def test_methods_agree_on_nontrivial_step():
    prob = make_problem()
    u0 = bump(prob.geometry.x, 1.0, 1.0)
    states = {}
    for method in ("newton", "picard"):
        st = initial_state(prob, u0, 1e-3)
        for _ in range(3):
            st = time_step(st, 1e-3, SolverConfig(method=method))
        states[method] = st.u
    assert np.max(np.abs(states["newton"] - states["picard"])) <= 1e-9


def test_vector_memory_matches_scalar_outputs():
    prob = make_problem()
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
    for _ in range(20):
        st = time_step(st, 1e-3, SolverConfig())
    mems = st.memories
    assert len(mems) == prob.geometry.n_nodes
    for j in (0, 20, 60, 75, 120):
        th = preisach_output(mems[j], RHO2)
        assert abs(th - st.theta[j]) <= 4e-16
        assert mems[j].anchor == st.u[j]


def test_neumann_mass_is_conserved():
    prob = make_problem(omega=1.0)
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
    res = run_simulation(st, 1e-3, 50, SolverConfig())
    m0 = res.mass[0]
    assert np.max(np.abs(res.mass - m0)) <= 1e-10 * m0


def test_robin_leaks_mass_monotonically():
    prob = make_problem(omega=0.5)
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 2.9), 1e-3)
    res = run_simulation(st, 1e-3, 30, SolverConfig())
    assert np.all(np.diff(res.mass) <= 1e-14)
    assert res.mass[-1] < res.mass[0]


def test_energy_decays_and_dissipation_balances():
    prob = make_problem()
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
    res = run_simulation(st, 1e-3, 40, SolverConfig())
    dE = np.diff(res.energy) / 1e-3
    # gradient_p_norm stores sum |grad u|^p vol; kappa = 1 here
    assert np.all(dE + res.gradient_p_norm[1:] <= 1e-7)
    assert np.all(np.diff(res.energy) <= 1e-12)


def test_max_norm_stays_below_saturation():
    prob = make_problem()
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
    res = run_simulation(st, 1e-3, 40, SolverConfig())
    assert np.all(res.max_abs_u <= 1.0 + 1e-12)
    assert np.all(np.diff(res.max_abs_u) <= 1e-12)


def test_radial_slab_matches_interval_half():
    """dimension-1 radial geometry is the symmetric half of the interval."""
    n = 41
    interval = make_problem(half_length=2.0, nodes=n)
    radial = Problem(Geometry.radial(2.0, n, dimension=1), RHO2,
                     Permeability.constant(1.0), BoundaryCondition(1.0),
                     4.0, 1.0)
    u_full = bump(interval.geometry.x, 0.9, 1.0)
    u_half = bump(radial.geometry.x, 0.9, 1.0)
    st_f = initial_state(interval, u_full, 1e-3)
    st_h = initial_state(radial, u_half, 1e-3)
    for _ in range(20):
        st_f = time_step(st_f, 1e-3, SolverConfig())
        st_h = time_step(st_h, 1e-3, SolverConfig())
    center = n - 1  # interval node at x = 0
    assert np.max(np.abs(st_f.u[center:] - st_h.u)) <= 1e-9


def test_spherical_spreading_is_slower_than_slab():
    slab = Problem(Geometry.radial(3.0, 61, dimension=1), RHO2,
                   Permeability.constant(1.0), BoundaryCondition(1.0), 4.0, 1.0)
    ball = Problem(Geometry.radial(3.0, 61, dimension=3), RHO2,
                   Permeability.constant(1.0), BoundaryCondition(1.0), 4.0, 1.0)
    out = {}
    for name, prob in (("slab", slab), ("ball", ball)):
        st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
        for _ in range(100):
            st = time_step(st, 1e-3, SolverConfig())
        out[name] = support_radius(prob.geometry, st.u, 1e-12)
    assert out["ball"] <= out["slab"] + 1e-12


def test_support_radius_basics():
    g = Geometry.interval(3.0, 61)
    assert support_radius(g, np.zeros(121), 1e-12) == 0.0
    u = bump(g.x, 1.0, 1.0)
    r = support_radius(g, u, 1e-12)
    assert 1.0 - g.dx <= r <= 1.0 + g.dx
    full = np.full(121, 0.5)
    assert support_radius(g, full, 1e-12) == pytest.approx(3.0)


def test_convergence_error_when_budget_exhausted():
    prob = make_problem()
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
    cfg = SolverConfig(tol=0.0, step_tol=0.0, max_iters=3, max_sweeps=1)
    with pytest.raises(SolverConvergenceError):
        time_step(st, 1e-3, cfg)


def test_invariant_violation_raised_on_impossible_budget():
    prob = make_problem()
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
    with pytest.raises(InvariantViolation):
        run_simulation(st, 1e-3, 3, SolverConfig(energy_tol=-1.0))


def test_validate_initial_state_tiers():
    g = Geometry.interval(3.0, 61)
    perm = Permeability.constant(1.0)
    bc = BoundaryCondition(1.0)
    ok = validate_initial_state(bump(g.x, 0.8, 1.0), None, RHO2, perm, bc, g,
                                1.0, 4.0, support_R0=1.0)
    assert ok.ok
    over = validate_initial_state(bump(g.x, 1.2, 1.0), None, RHO2, perm, bc, g,
                                  1.0, 4.0)
    assert not over.ok
    assert any(e.status == "fail" for e in over.entries)
    wide = validate_initial_state(bump(g.x, 0.8, 2.0), None, RHO2, perm, bc, g,
                                  1.0, 4.0, support_R0=1.0)
    assert not wide.ok


def test_memory_tail_guard():
    g = Geometry.interval(1.0, 2)
    prob = Problem(g, RHO2, Permeability.constant(1.0), BoundaryCondition(1.0),
                   4.0, 1.0)
    bad = MemoryCurve([0.0, 0.5], [0.5, 0.25], 1.0, validate=False)
    mems = [make_initial_memory(0.0, 1.0), bad, make_initial_memory(0.0, 1.0)]
    with pytest.raises(ValueError):
        initial_state(prob, np.array([0.0, 0.5, 0.0]), 1e-3, memories=mems)


def test_initial_state_validation():
    prob = make_problem()
    with pytest.raises(ValueError):
        initial_state(prob, np.zeros(7), 1e-3)          # wrong length
    st = initial_state(prob, np.zeros(121), 1e-3)
    with pytest.raises(ValueError):
        time_step(st, 0.0, SolverConfig())
    with pytest.raises(ValueError):
        time_step(st, -1e-3, SolverConfig())


def test_geometry_validation_and_round_trip():
    g = Geometry.interval(3.0, 61)
    g2 = Geometry.from_dict(g.to_dict())
    assert g2.to_dict() == g.to_dict()
    assert np.array_equal(g2.x, g.x)
    r = Geometry.radial(2.0, 31, dimension=3)
    assert Geometry.from_dict(r.to_dict()).to_dict() == r.to_dict()
    with pytest.raises(ValueError):
        Geometry.interval(3.0, 1)
    with pytest.raises(ValueError):
        Geometry.interval(-1.0, 61)
    with pytest.raises(ValueError):
        Geometry.radial(2.0, 31, dimension=0)
    # vertex-centered layout facts
    assert g.n_nodes == 121
    assert g.dx == pytest.approx(0.05)
    assert g.volumes.sum() == pytest.approx(6.0)


def test_problem_validation():
    g = Geometry.interval(1.0, 11)
    perm = Permeability.constant(1.0)
    with pytest.raises(ValueError):
        Problem(g, RHO2, perm, BoundaryCondition(1.0), 1.0, 1.0)   # p too small
    with pytest.raises(ValueError):
        Problem(g, RHO2, perm, BoundaryCondition(1.0), 4.0, 0.0)   # saturation
    with pytest.raises(ValueError):
        Permeability.constant(0.0)
    with pytest.raises(ValueError):
        BoundaryCondition(1.5)


def test_position_dependent_permeability_speeds_spreading():
    g = Geometry.interval(3.0, 61)
    fast = Problem(g, RHO2, Permeability.of_x(lambda x: 4.0 + 0.0 * x, 4.0, 4.0),
                   BoundaryCondition(1.0), 4.0, 1.0)
    slow = make_problem()
    radii = {}
    for name, prob in (("fast", fast), ("slow", slow)):
        st = initial_state(prob, bump(g.x, 1.0, 1.0), 1e-3)
        for _ in range(60):
            st = time_step(st, 1e-3, SolverConfig())
        radii[name] = support_radius(g, st.u, 1e-12)
    assert radii["fast"] >= radii["slow"]


def test_theta_dependent_permeability_runs_and_conserves_mass():
    g = Geometry.interval(3.0, 61)
    perm = Permeability.of_x_theta(lambda x, th: 1.0 + 0.5 * th, 1.0, 2.0)
    prob = Problem(g, RHO2, perm, BoundaryCondition(1.0), 4.0, 1.0)
    st = initial_state(prob, bump(g.x, 1.0, 1.0), 1e-3)
    res = run_simulation(st, 1e-3, 20, SolverConfig())
    assert np.max(np.abs(res.mass - res.mass[0])) <= 1e-10 * res.mass[0]


def test_run_simulation_bookkeeping():
    prob = make_problem()
    st = initial_state(prob, bump(prob.geometry.x, 1.0, 1.0), 1e-3)
    res = run_simulation(st, 1e-3, 10, SolverConfig(), store_every=5)
    assert np.array_equal(res.steps, np.arange(11))
    assert np.allclose(res.times, 1e-3 * np.arange(11))
    assert len(res.mass) == 11 and len(res.energy) == 11
    assert len(res.snapshots) == 3           # steps 0, 5, 10
    assert res.final_state.step == 10
    assert res.final_state.time == pytest.approx(0.01)


def test_ordered_initial_data_stays_ordered_briefly():
    prob = make_problem()
    lo = initial_state(prob, bump(prob.geometry.x, 0.8, 1.0), 1e-3)
    hi = initial_state(prob, bump(prob.geometry.x, 0.88, 1.0), 1e-3)
    for _ in range(20):
        lo = time_step(lo, 1e-3, SolverConfig())
        hi = time_step(hi, 1e-3, SolverConfig())
    assert np.max(lo.u - hi.u) <= 1e-9
