import math
import time

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from supertransport import grassmann as gr
from supertransport.flows import (FlowMap, NonPositiveSpeedError, PreconditionError, UnsupportedGeneratorError,
                                  OddReparam, compose_odd_flows, even_flow, flow_f_iota, odd_flow, pit_flow,
                                  pit_odd_flow, pullback_along_even_flow, reparam_flow_even, super_flow,
                                  trajectory_equivalence_check, trotter_derivative_residual, trotter_flow,
                                  trotter_group_law_residual, trotter_table, verify_odd_reparam)
from supertransport.integrate import DivergenceError, solve
from supertransport.manifold_forms import DifferentialForm, PiTDerivation, ScalarField, VectorField, contract
from supertransport.probes import random_form, random_vector_field

import oracles as o

seeds = st.integers(0, 2 ** 32 - 1)


def _rng(seed):
    return np.random.default_rng(seed)


def rotation():
    x, y = ScalarField.coordinate(2, 0), ScalarField.coordinate(2, 1)
    return VectorField([-y, x])


def translation():
    return VectorField([ScalarField.constant(2, 1.0), ScalarField.zero(2)])


def _scipy_flow(X, t, x0):
    sol = solve_ivp(lambda _, y: X(y), (0.0, t), x0, method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


# -- integrator and even flows --------------------------------------------------------


def test_solve_exponential():
    traj = solve(lambda t, y: y, np.array([1.0]), 0.0, 1.0, 1e-12)
    assert traj.final[0] == pytest.approx(math.e, abs=1e-11)
    assert traj(0.5)[0] == pytest.approx(math.exp(0.5), abs=1e-10)


def test_solve_reports_divergence_near_blowup():
    with pytest.raises(DivergenceError) as info:
        solve(lambda t, y: y * y, np.array([1.0]), 0.0, 2.0)
    assert info.value.last_time == pytest.approx(1.0, abs=1e-3)


def test_rotation_closed_form():
    got = even_flow(rotation(), 0.8, [1.0, 0.5])
    c, s = math.cos(0.8), math.sin(0.8)
    np.testing.assert_allclose(got, [c - 0.5 * s, s + 0.5 * c], atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_even_flow_matches_scipy(seed):
    rng = _rng(seed)
    X = random_vector_field(2, 2, rng)
    x0 = rng.integers(-4, 5, 2) / 8.0
    np.testing.assert_allclose(even_flow(X, 0.3, x0), _scipy_flow(X, 0.3, x0), atol=1e-9)


def test_even_flow_at_super_point_matches_variational_equation():
    # (e0 e1)^2 = 0, so a(p + e0e1 v) = a(p) + e0e1 J(p) v with J the flow Jacobian
    X = VectorField.from_polys(2, [{(0, 1): 1.0}, {(1, 0): -1.0, (3, 0): -0.125}])
    p, v, t = np.array([0.5, -0.25]), np.array([1.0, 2.0]), 0.7
    xs = o.symbols(2)
    jac = sp.lambdify(xs, sp.Matrix(o.field_to_sym(X)).jacobian(xs))

    def rhs(_, z):
        J = z[2:].reshape(2, 2)
        return np.concatenate([X(z[:2]), (np.array(jac(*z[:2]), dtype=float) @ J).ravel()])
    sol = solve_ivp(rhs, (0, t), np.concatenate([p, np.eye(2).ravel()]), rtol=1e-13, atol=1e-13, method="DOP853")
    end, J = sol.y[:2, -1], sol.y[2:, -1].reshape(2, 2)
    x0 = gr.embed(p, 2)
    x0[:, 3] = v
    got = even_flow(X, t, x0)
    np.testing.assert_allclose(got[:, 0], end, atol=1e-9)
    np.testing.assert_allclose(got[:, 3], J @ v, atol=1e-8)
    assert not np.any(got[:, 1:3])


def test_flow_map_group_law_and_pullback():
    F = FlowMap(rotation())
    assert F.group_law_residual(0.3, 0.4, np.array([1.0, 0.0])) <= 1e-9
    area = F.pullback(0.6, DifferentialForm.dx(2, 0, 1))
    pts = np.array([[0.1, 0.2], [-0.5, 0.3]])
    assert area.max_abs_diff_at(DifferentialForm.dx(2, 0, 1), pts) <= 1e-9


# -- Trotter products ------------------------------------------------------------------


def test_trotter_single_factor_is_composite():
    X, Y = rotation(), translation()
    one = trotter_flow(X, Y, 0.5, [1.0, 0.0], 1)
    np.testing.assert_allclose(one, even_flow(X, 0.5, even_flow(Y, 0.5, [1.0, 0.0])), atol=1e-10)


def test_trotter_commuting_fields_exact():
    x = ScalarField.coordinate(2, 0)
    X = VectorField([x, ScalarField.zero(2)])
    Y = VectorField([ScalarField.zero(2), ScalarField.coordinate(2, 1)])
    rep = trotter_table(X, Y, 1.0, [1.0, 1.0], levels=3)
    assert max(r.error for r in rep.rows) <= 1e-8  # integrator tolerance only


def test_trotter_first_order_convergence():
    start = time.perf_counter()
    rep = trotter_table(rotation(), translation(), 1.0, [1.0, 0.0], levels=10)
    assert time.perf_counter() - start < 10
    assert rep.fitted_order >= 0.9
    assert rep.error_at(1024) < 5e-3
    assert [r.n for r in rep.rows] == [2 ** j for j in range(11)]


def test_trotter_group_law_and_derivative():
    res = trotter_group_law_residual(rotation(), translation(), 0.4, 0.3, [1.0, 0.0], 4)
    assert res["limit"] <= 1e-9 and res["discrete"] <= 1e-9
    assert trotter_derivative_residual(rotation(), translation(), [0.5, 0.5], 3) <= 1e-6


# -- odd flows ----------------------------------------------------------------------------


def test_odd_flow_hand_instance():
    # flow of iota_{d/dx} on dx^dy: dx^dy + theta dy
    w = DifferentialForm.dx(2, 0, 1)
    out = odd_flow(VectorField.coordinate(2, 0))(w)
    assert out.coefficient(0).max_abs_diff(w) == 0.0
    assert out.coefficient(1).max_abs_diff(DifferentialForm.dx(2, 1)) == 0.0


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 3))
def test_odd_flow_is_homomorphism(seed, n):
    rng = _rng(seed)
    a = odd_flow(random_vector_field(n, 2, rng))
    w, e = random_form(n, rng), random_form(n, rng)
    assert a(w.wedge(e)).max_abs_diff(a(w) * a(e)) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 3))
def test_odd_flow_composition(seed, n):
    rng = _rng(seed)
    X, Y = random_vector_field(n, 2, rng), random_vector_field(n, 2, rng)
    comp = compose_odd_flows(odd_flow(X), odd_flow(Y))
    assert comp.max_abs_diff(odd_flow(X + Y), [random_form(n, rng) for _ in range(3)]) <= 1e-12


def test_composition_needs_vanishing_bracket():
    with pytest.raises(UnsupportedGeneratorError):
        compose_odd_flows(odd_flow(PiTDerivation.exterior_d(1)), odd_flow(VectorField.coordinate(1, 0)))


# -- reparametrized even flows ------------------------------------------------------------


def test_reparam_tan_closed_form():
    f = ScalarField(1, {(0,): 1.0, (2,): 1.0})
    X = VectorField.coordinate(1, 0)
    got, s = reparam_flow_even(f, X, 1.0, [0.0], return_time=True)
    assert got[0] == pytest.approx(math.tan(1.0), abs=1e-6)
    assert s == pytest.approx(math.tan(1.0), abs=1e-6)  # X is the unit field, so time equals displacement


def test_reparam_matches_flow_of_product():
    rng = _rng(7)
    X = random_vector_field(2, 1, rng)
    f = ScalarField(2, {(0, 0): 1.0, (2, 0): 0.25})
    np.testing.assert_allclose(reparam_flow_even(f, X, 0.4, [0.25, 0.5]),
                               even_flow(X.scaled(f), 0.4, [0.25, 0.5]), atol=1e-8)


def test_reparam_at_super_point():
    f = ScalarField(1, {(0,): 1.0, (2,): 1.0})
    X = VectorField.coordinate(1, 0)
    x0 = gr.embed([0.0], 2)
    x0[0, 3] = 1.0
    got = reparam_flow_even(f, X, 0.5, x0)
    # flow of (1 + x^2) d/dx from e0e1 is tan(0.5 + arctan(e0e1)) = tan 0.5 + sec^2(0.5) e0e1
    assert got[0][0] == pytest.approx(math.tan(0.5), abs=1e-8)
    assert got[0][3] == pytest.approx(1 / math.cos(0.5) ** 2, abs=1e-7)


def test_reparam_rejects_nonpositive_speed():
    with pytest.raises(NonPositiveSpeedError):
        reparam_flow_even(ScalarField.coordinate(1, 0), VectorField.coordinate(1, 0), 1.0, [0.0])


def test_trajectory_equivalence():
    X = rotation()
    f = ScalarField(2, {(0, 0): 1.0, (2, 0): 0.5})
    good = trajectory_equivalence_check(X, X.scaled(f), [[1.0, 0.0], [0.3, -0.2]], horizon=0.5, grid=6)
    assert good.parallel and good.residual <= 1e-7
    bad = trajectory_equivalence_check(X, translation(), [[1.0, 0.0]])
    assert not bad.parallel and bad.counterexample is not None


# -- flows of f iota_X -------------------------------------------------------------------


def test_f_iota_hand_instances():
    dx, dy = DifferentialForm.dx(2, 0), DifferentialForm.dx(2, 1)
    a = flow_f_iota(dy, VectorField.coordinate(2, 0), "Xf0", 0.6)
    assert a(dx).max_abs_diff(dx + dy.scale(0.6)) <= 1e-15
    b = flow_f_iota(DifferentialForm.dx(1, 0), VectorField.coordinate(1, 0), "Xf1", 0.6)
    assert b(DifferentialForm.dx(1, 0)).max_abs_diff(DifferentialForm.dx(1, 0).scale(math.exp(0.6))) <= 1e-15


@settings(max_examples=15, deadline=None)
@given(seeds, st.floats(-1, 1), st.floats(-1, 1))
def test_f_iota_group_law(seed, s, t):
    rng = _rng(seed)
    w = random_form(2, rng)
    for f, mode in ((DifferentialForm.dx(2, 1), "Xf0"), (DifferentialForm.dx(2, 0), "Xf1")):
        a = flow_f_iota(f, VectorField.coordinate(2, 0), mode, s)
        assert a(a.at(t)(w)).max_abs_diff(a.at(s + t)(w)) <= 1e-12
        assert a.flow_property_residual(w) <= 1e-8


def test_f_iota_precondition():
    with pytest.raises(PreconditionError):
        flow_f_iota(DifferentialForm.dx(2, 0), VectorField.coordinate(2, 0), "Xf0", 1.0)
    with pytest.raises(gr.ParityError):
        flow_f_iota(DifferentialForm.dx(2, 0, 1), VectorField.coordinate(2, 0), "Xf0", 1.0)


# -- R^{1|1}-actions ------------------------------------------------------------------------


def test_super_flow_regimes_and_closed_form():
    d = PiTDerivation.exterior_d(1)
    assert super_flow(d).regime == "square-zero"
    V = d + PiTDerivation.contraction(VectorField.coordinate(1, 0))
    sf = super_flow(V)
    assert sf.regime == "lie"
    x = ScalarField.coordinate(1, 0)
    # (d + iota)^2 = L_{d/dx}, so the body part is translation by -t
    out = sf(0.3, DifferentialForm.function(x).wedge(DifferentialForm.dx(1, 0)))
    shifted = DifferentialForm.function(x - ScalarField.constant(1, 0.3))
    assert out.coefficient(0).max_abs_diff(shifted.wedge(DifferentialForm.dx(1, 0))) <= 1e-12
    assert out.coefficient(1).max_abs_diff(shifted) <= 1e-12


def test_super_flow_nilpotent_regime():
    # iota_{d/dx} + x dx L_{d/dy} squares to x L_{d/dy}, which is not a Lie derivative
    x = ScalarField.coordinate(2, 0)
    odd_lie = PiTDerivation([DifferentialForm.zero(2), DifferentialForm.function(x).wedge(DifferentialForm.dx(2, 0))],
                            [DifferentialForm.zero(2)] * 2, 1)
    X = PiTDerivation.contraction(VectorField.coordinate(2, 0)) + odd_lie
    sf = super_flow(X)
    assert sf.regime == "nilpotent"
    w = DifferentialForm.from_polys(2, {(): {(0, 3): 1.0}, (0,): {(1, 2): 1.0}})
    assert sf.flow_equation_residual(0.4, w) <= 1e-6
    exp_y = ScalarField.from_oracle(2, lambda p: math.exp(p[1]), lambda p, a: math.exp(p[1]), order=8)
    with pytest.raises(UnsupportedGeneratorError):
        sf.evolve(0.4, DifferentialForm.function(exp_y))


@settings(max_examples=8, deadline=None)
@given(seeds)
def test_super_flow_equation(seed):
    rng = _rng(seed)
    X = PiTDerivation.exterior_d(2) + PiTDerivation.contraction(random_vector_field(2, 1, rng))
    sf = super_flow(X)
    w = random_form(2, rng)
    assert sf.flow_equation_residual(0.25, w) <= 1e-6
    assert sf(0.0, w).coefficient(1).max_abs_diff(X(w)) == 0.0


def test_pullback_along_rotation():
    dx, dy = DifferentialForm.dx(2, 0), DifferentialForm.dx(2, 1)
    got = pullback_along_even_flow(rotation(), 0.5, dx)
    pts = np.array([[0.2, -0.1], [0.7, 0.4]])
    expect = dx.scale(math.cos(0.5)) - dy.scale(math.sin(0.5))
    assert got.max_abs_diff_at(expect, pts) <= 1e-9


def test_odd_reparam_flow_rescaling():
    probes = [random_form(2, _rng(s)) for s in range(3)]
    X = PiTDerivation.exterior_d(2) + PiTDerivation.contraction(VectorField.coordinate(2, 1))
    good = verify_odd_reparam(1.5, X, probes=probes)
    assert good.residual <= 1e-6 and good.offending_probe is None
    bad = verify_odd_reparam(1.5, X, OddReparam(lambda t: t, lambda t: 1.0, lambda t: 1.5), probes=probes)
    assert bad.distribution_residual > 1.0 and bad.offending_probe is not None
    with pytest.raises(NonPositiveSpeedError):
        verify_odd_reparam(-1.0, X)


# -- flows on Pi T R^n -------------------------------------------------------------------


def test_pit_flow_of_lie_derivative_moves_xi_by_jacobian():
    x = gr.embed([1.0, 0.5], 2)
    xi = np.zeros((2, 4))
    xi[0, 1], xi[1, 2] = 1.0, 1.0
    xt, xit = pit_flow(PiTDerivation.lie(rotation()), 0.4, x, xi)
    R = np.array([[math.cos(0.4), -math.sin(0.4)], [math.sin(0.4), math.cos(0.4)]])
    np.testing.assert_allclose(xt[:, 0], R @ [1.0, 0.5], atol=1e-10)
    np.testing.assert_allclose(xit[:, 1:3], R, atol=1e-10)


def test_pit_odd_flow_of_d():
    x = gr.embed([0.25], 1)
    xi = np.zeros((1, 2))
    xi[0, 1] = 1.0
    c0, c1 = pit_odd_flow(PiTDerivation.exterior_d(1), 0.3, x, xi)
    # d moves x in the xi direction and kills xi
    np.testing.assert_array_equal(c0, np.concatenate([x, xi]))
    np.testing.assert_array_equal(c1, np.concatenate([xi, np.zeros((1, 2))]))
