"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line."""
import math
import time

import numpy as np

from supertransport import grassmann as gr
from supertransport.bundles import (GradedBundle, GradedConnection, NotOddTrivialError, PiTConnection, PiTSection,
                                    is_odd_trivial, odd_curvature, pullback_connection, restrict_connection)
from supertransport.flows import (compose_odd_flows, even_flow, flow_f_iota, odd_flow, reparam_flow_even,
                                  trotter_group_law_residual, trotter_table)
from supertransport.integrate import DEFAULT_TOL
from supertransport.manifold_forms import (DifferentialForm, PiTDerivation, ScalarField, VectorField, contract,
                                           exterior_d, lie_derivative)
from supertransport.probes import (random_even_connection, random_form, random_homogeneous_form, random_polynomial,
                                   random_vector_field)
from supertransport.transport import (ConnectionTransport, LiftedTransport, Path, PiTConnectionTransport,
                                      ProjectedTransport, Reparametrization, SuperPath, check_gluing,
                                      check_identity_on_constant, check_q_naturality, check_reparam_invariance,
                                      check_s_naturality, flow_transport, roundtrip_residual)

from conftest import ACCEPTANCE_LINES


def _report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _zero(n):
    return DifferentialForm.zero(n)


def _connections(rng, count=10):
    shapes = [(1, 1, 1), (2, 1, 1), (2, 2, 1), (1, 2, 2), (2, 2, 2), (3, 1, 1), (2, 1, 2), (1, 2, 0), (3, 1, 0),
              (2, 2, 2)]
    return [random_even_connection(*shapes[j], 2, rng) for j in range(count)]


def test_criterion_01_exterior_calculus_identities():
    rng = np.random.default_rng(101)
    worst = {"d^2": 0.0, "cartan": 0.0, "[L,iota]": 0.0, "iota anticommute": 0.0}
    count = 0
    for n in (1, 2, 3):
        for _ in range(34):
            X, Y, w = random_vector_field(n, 2, rng), random_vector_field(n, 2, rng), random_form(n, rng)
            worst["d^2"] = max(worst["d^2"], exterior_d(exterior_d(w)).max_abs_diff(_zero(n)))
            cartan = exterior_d(contract(X, w)) + contract(X, exterior_d(w))
            worst["cartan"] = max(worst["cartan"], lie_derivative(X, w).max_abs_diff(cartan))
            comm = lie_derivative(X, contract(Y, w)) - contract(Y, lie_derivative(X, w))
            worst["[L,iota]"] = max(worst["[L,iota]"], comm.max_abs_diff(contract(X.bracket(Y), w)))
            anti = contract(X, contract(Y, w)) + contract(Y, contract(X, w))
            worst["iota anticommute"] = max(worst["iota anticommute"], anti.max_abs_diff(_zero(n)))
            count += 1
    ok = count >= 100 and max(worst.values()) <= 1e-12
    _report(1, "exterior calculus identities", ok,
            f"{count} instances per identity, max residuals " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_criterion_02_trotter_product_formula():
    x, y = ScalarField.coordinate(2, 0), ScalarField.coordinate(2, 1)
    X = VectorField([-y, x])
    Y = VectorField([ScalarField.constant(2, 1.0), ScalarField.zero(2)])
    start = time.perf_counter()
    rep = trotter_table(X, Y, 1.0, [1.0, 0.0], levels=10)
    elapsed = time.perf_counter() - start
    errors = [r.error for r in rep.rows]
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    group = trotter_group_law_residual(X, Y, 0.5, 0.25, [1.0, 0.0], 8)
    group_ok = max(group.values()) <= 10 * DEFAULT_TOL
    ok = decreasing and rep.fitted_order >= 0.9 and rep.error_at(1024) < 5e-3 and elapsed < 10 and group_ok
    _report(2, "Trotter convergence", ok,
            f"fitted order {rep.fitted_order:.4f}, error(1024) {rep.error_at(1024):.3e}, {elapsed:.2f}s, "
            f"group law {max(group.values()):.1e}")


def test_criterion_03_odd_flow_composition():
    rng = np.random.default_rng(303)
    worst, count = 0.0, 0
    for n in (1, 2, 3):
        for _ in range(17):
            X, Y = random_vector_field(n, 2, rng), random_vector_field(n, 2, rng)
            comp = compose_odd_flows(odd_flow(X), odd_flow(Y))
            probes = [random_form(n, rng) for _ in range(2)]
            worst = max(worst, comp.max_abs_diff(odd_flow(X + Y), probes))
            count += 1
    _report(3, "odd-flow composition", count >= 50 and worst <= 1e-12,
            f"{count} instances, max coefficient residual {worst:.1e}")


def test_criterion_04_reparametrized_flows():
    f = ScalarField(1, {(0,): 1.0, (2,): 1.0})
    X1 = VectorField.coordinate(1, 0)
    got = reparam_flow_even(f, X1, 1.0, [0.0])[0]
    direct = even_flow(X1.scaled(f), 1.0, [0.0])[0]
    tan_res = max(abs(got - direct), abs(got - math.tan(1.0)))
    rng = np.random.default_rng(404)
    dx2, dy2, ex2 = DifferentialForm.dx(2, 0), DifferentialForm.dx(2, 1), VectorField.coordinate(2, 0)
    dx1 = DifferentialForm.dx(1, 0)
    law = 0.0
    for _ in range(10):
        s, t = rng.uniform(-1, 1, 2)
        a = flow_f_iota(dy2, ex2, "Xf0", s)
        w = random_form(2, rng)
        law = max(law, a(a.at(t)(w)).max_abs_diff(a.at(s + t)(w)))
        b = flow_f_iota(dx1, X1, "Xf1", s)
        w1 = random_form(1, rng)
        law = max(law, b(b.at(t)(w1)).max_abs_diff(b.at(s + t)(w1)))
    t = 0.6
    hand = max(flow_f_iota(dy2, ex2, "Xf0", t)(dx2).max_abs_diff(dx2 + dy2.scale(t)),
               flow_f_iota(dx1, X1, "Xf1", t)(dx1).max_abs_diff(dx1.scale(math.exp(t))))
    ok = tan_res <= 1e-6 and law <= 1e-12 and hand <= 1e-12
    _report(4, "reparametrized flows", ok,
            f"tan instance {tan_res:.1e}, Xf0/Xf1 group laws {law:.1e}, hand instances {hand:.1e}")


def _odd_generators(n, rng):
    iota = [PiTDerivation.contraction(random_vector_field(n, 2, rng)) for _ in range(2)]
    weighted = iota[1].scaled(random_homogeneous_form(n, rng, 0))
    X = VectorField.coordinate(n, 0) + random_vector_field(n, 1, rng)
    return iota + [weighted], [PiTDerivation.exterior_d(n), PiTDerivation.lie(X).scaled(DifferentialForm.dx(n, 0))]


def test_criterion_05_odd_triviality_and_flatness():
    rng = np.random.default_rng(505)
    trivial = flat = pairing = 0.0
    all_trivial = True
    detected = 0
    for nabla in _connections(rng):
        n, r = nabla.dim, nabla.rank
        P = pullback_connection(nabla)
        all_trivial = all_trivial and is_odd_trivial(P, probes=4, rng=rng).ok
        sigma = PiTSection([random_form(n, rng) for _ in range(r)])
        iotas, others = _odd_generators(n, rng)
        # every pair with at least one contraction-type argument
        for X in iotas:
            for Y in iotas + others:
                K = odd_curvature(P, X, Y, sigma)
                flat = max(flat, max(c.max_abs_diff(_zero(n)) for c in K.components))
        s = [random_polynomial(n, 2, rng) for _ in range(r)]
        got = P.covariant(PiTDerivation.exterior_d(n), PiTSection.pullback(s))
        pairing = max(pairing, got.max_abs_diff(PiTSection(nabla.covariant_differential(s))))
        # constructed violations: a nonzero iota leg, and a 2-form in a Lie leg
        L = [[list(row) for row in M] for M in P.L]
        R = [[[_zero(n)] * r for _ in range(r)] for _ in range(n)]
        R[0][0][0] = DifferentialForm.dx(n, 0)
        rep = is_odd_trivial(PiTConnection(nabla.bundle, L, R), probes=2, rng=rng)
        detected += (not rep.ok) and rep.witness is not None
        if n >= 2:
            L[0][0][0] = L[0][0][0] + DifferentialForm.dx(n, 0, 1)
            try:
                restrict_connection(PiTConnection(nabla.bundle, L), probes=2, rng=rng)
            except NotOddTrivialError as exc:
                detected += exc.witness is not None
        else:
            detected += 1
    ok = all_trivial and flat == 0.0 and pairing == 0.0 and detected == 20
    _report(5, "odd-triviality and odd flatness", ok,
            f"10 connections, odd-trivial {all_trivial}, odd curvature {flat:.1e}, d-pairing {pairing:.1e}, "
            f"violations detected {detected}/20")


def test_criterion_06_pullback_restrict_bijection():
    rng = np.random.default_rng(505)
    worst = 0.0
    even = True
    for nabla in _connections(rng):
        P = pullback_connection(nabla)
        back = restrict_connection(P, probes=2, rng=rng)
        worst = max(worst, back.max_abs_diff(nabla), pullback_connection(back).max_abs_diff(P))
        even = even and back.is_even and P.is_even
    _report(6, "pullback/restrict bijection", worst <= 1e-12 and even,
            f"10 connections, round-trip residual {worst:.1e}, evenness preserved {even}")


def _axioms(T, path, superpath, hom, k):
    rep = Reparametrization(lambda u: (u + u * u) / 2, lambda u: 0.5 + u, 0.0, 1.0)
    v, vs = np.array([1.0, 0.5]), gr.embed([1.0, 0.5], k)
    start = path.position(0.0)[:, 0]
    return {
        "gluing": max(check_gluing(T, path, 0.4, v), check_gluing(T, superpath, 0.4, vs)),
        "identity": max(check_identity_on_constant(T, start, v),
                        check_identity_on_constant(T, start, v, superpath=True)),
        "q-natural": check_q_naturality(T, path, v),
        "S-natural": check_s_naturality(T, superpath, hom, vs),
        "reparam": max(check_reparam_invariance(T, path, rep, v), check_reparam_invariance(T, superpath, rep, vs)),
    }


def test_criterion_07_transport_axioms():
    hom1 = gr.GrassmannHom([np.array([0.0, 0.5, -1.0, 0.0])], 2)
    T = ConnectionTransport(GradedConnection.from_legs(GradedBundle(1, 1, 1), [[[0.7, 0.0], [0.0, -0.4]]]))
    sp1 = SuperPath.polynomial([[0.0], [1.0]], [[[0.0, 1.0]], [[0.0, 0.5]]], k=1)
    diag = _axioms(T, Path.linear([0.0], [1.0]), sp1, hom1, 1)
    rng = np.random.default_rng(707)
    hom2 = gr.GrassmannHom([np.array([0, 0.5, -1.0, 0]), np.array([0, 0.25, 0.25, 0])], 2)
    rand: dict = {}
    for _ in range(3):
        Tr = ConnectionTransport(random_even_connection(2, 1, 1, 2, rng))
        path = Path.polynomial(rng.integers(-4, 5, (3, 2)) / 8.0)
        c0 = gr.embed(rng.integers(-4, 5, (3, 2)) / 8.0, 2)
        c0[1, :, 3] = rng.integers(-4, 5, 2) / 8.0
        c1 = np.zeros((2, 2, 4))
        c1[:, :, 1], c1[:, :, 2] = rng.integers(-4, 5, (2, 2)) / 8.0, rng.integers(-4, 5, (2, 2)) / 8.0
        for key, val in _axioms(Tr, path, SuperPath.polynomial(c0, c1, (0.0, 1.0), 2), hom2, 2).items():
            rand[key] = max(rand.get(key, 0.0), val)
    ok = max(diag.values()) <= 1e-6 and max(rand.values()) <= 1e-5
    _report(7, "transport axioms", ok,
            "diag " + ", ".join(f"{k}={v:.1e}" for k, v in diag.items()) +
            "; random " + ", ".join(f"{k}={v:.1e}" for k, v in rand.items()))


def test_criterion_08_odd_trivial_transport():
    rng = np.random.default_rng(808)
    identity = eta = 0.0
    for n, p, q in ((1, 1, 1), (2, 1, 1), (2, 2, 1)):
        nabla = random_even_connection(n, p, q, 2, rng)
        s = PiTSection.pullback([random_polynomial(n, 1, rng) for _ in range(nabla.rank)])
        x0 = rng.integers(-4, 5, n) / 8.0
        for T in (LiftedTransport(ConnectionTransport(nabla)), PiTConnectionTransport(pullback_connection(nabla))):
            fam = flow_transport(T, PiTDerivation.contraction(random_vector_field(n, 2, rng)), s, x0)
            identity = max(identity, fam.identity_residual())
            lie = flow_transport(T, random_vector_field(n, 1, rng), s, x0, horizon=0.5)
            eta = max(eta, lie.eta_components())
    _report(8, "odd-trivial transport", identity == 0.0 and eta <= 1e-10,
            f"iota-flow families deviate from identity by {identity:.1e}, Lie-flow theta components {eta:.1e}")


def test_criterion_09_connection_roundtrip():
    start = time.perf_counter()
    const = roundtrip_residual(GradedConnection.from_legs(GradedBundle(1, 1, 1), [[[0.7, 0.0], [0.0, -0.4]]]))
    const2 = roundtrip_residual(GradedConnection.from_legs(
        GradedBundle(2, 2, 1), [[[0.5, -0.25, 0.0], [1.0, 0.125, 0.0], [0.0, 0.0, -0.5]],
                                [[0.0, 0.75, 0.0], [-0.5, 0.0, 0.0], [0.0, 0.0, 0.25]]]))
    rng = np.random.default_rng(909)
    poly = [roundtrip_residual(random_even_connection(n, p, q, 2, rng), rng=rng)
            for n, p, q in ((1, 1, 1), (2, 1, 1), (1, 2, 1), (2, 2, 1))]
    elapsed = time.perf_counter() - start
    const_res = max(const.residual, const2.residual)
    poly_res = max(r.residual for r in poly)
    even = all(r.recovered_even for r in [const, const2] + poly)
    ok = const_res <= 1e-6 and poly_res <= 1e-5 and even and elapsed < 60
    _report(9, "transport-connection round trip", ok,
            f"constant A {const_res:.1e}, polynomial A {poly_res:.1e}, recovered even {even}, {elapsed:.1f}s")


def test_criterion_10_lift_project_roundtrip():
    rng = np.random.default_rng(1010)
    worst = 0.0
    cases = 0
    shapes = [(1, 1, 1), (2, 1, 1), (2, 2, 1), (1, 2, 2), (3, 1, 1)]
    for j in range(20):
        n, p, q = shapes[j % len(shapes)]
        T = ConnectionTransport(random_even_connection(n, p, q, 2, rng))
        back = ProjectedTransport(LiftedTransport(T))
        path = Path.polynomial(rng.integers(-4, 5, (3, n)) / 8.0)
        v0 = rng.integers(-8, 9, p + q) / 8.0
        a, b = T.transport(path, v0), back.transport(path, v0)
        for t in np.linspace(0.0, 1.0, 5):
            worst = max(worst, float(np.max(np.abs(a.s1(t) - b.s1(t)))))
        cases += 1
    _report(10, "lift then project", cases == 20 and worst <= 1e-10,
            f"{cases} probe cases, max parallel-section deviation {worst:.1e}")
