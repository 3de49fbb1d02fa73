"""Catalog of named numerical checks, each tied to the result it exercises."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from . import grassmann as gr
from .bundles import (GradedBundle, GradedConnection, PiTConnection, PiTSection, is_odd_trivial, odd_curvature,
                      pullback_connection, restrict_connection)
from .flows import (compose_odd_flows, even_flow, flow_f_iota, odd_flow, reparam_flow_even, super_flow,
                    trotter_derivative_residual, trotter_group_law_residual, trotter_table,
                    verify_odd_reparam, OddReparam)
from .integrate import DEFAULT_TOL
from .manifold_forms import (DifferentialForm, PiTDerivation, ScalarField, VectorField, contract,
                             decompose_derivation, exterior_d, graded_bracket, lie_derivative)
from .probes import (random_even_connection, random_form, random_homogeneous_form, random_polynomial,
                     random_vector_field)
from .transport import (ConnectionTransport, LiftedTransport, Path, PiTConnectionTransport, ProjectedTransport,
                        Reparametrization, SuperPath, TimeSuperFunction, check_gluing,
                        check_identity_on_constant, check_q_naturality, check_reparam_invariance,
                        check_s_naturality, d_squared_residual, flow_transport, recover_connection,
                        roundtrip_residual)


@dataclass
class CheckResult:
    name: str
    anchor: str
    residual: float
    threshold: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.threshold)

    def to_json(self) -> dict:
        return {"name": self.name, "anchor": self.anchor, "residual": float(self.residual),
                "threshold": self.threshold, "passed": self.passed, "detail": self.detail}


@dataclass(frozen=True)
class Check:
    name: str
    anchor: str
    threshold: float
    run: Callable  # (rng, tol) -> (residual, detail)


CATALOG: dict[str, Check] = {}


def check(name: str, anchor: str, threshold: float):
    def register(fn):
        CATALOG[name] = Check(name, anchor, threshold, fn)
        return fn
    return register


def run_check(name: str, seed: int = 0, tol: float = DEFAULT_TOL) -> CheckResult:
    c = CATALOG[name]
    residual, detail = c.run(np.random.default_rng(seed), tol)
    return CheckResult(c.name, c.anchor, float(residual), c.threshold, detail)


def _zero(n):
    return DifferentialForm.zero(n)


# -- algebra and exterior calculus ---------------------------------------------


@check("grassmann-graded-commutativity", "Grassmann algebra sign rules", 1e-12)
def _graded_comm(rng, tol):
    worst = 0.0
    for _ in range(30):
        k = 4
        a = gr.GrassmannElement(gr.odd_part(rng.integers(-8, 9, 16) / 8.0))
        b = gr.GrassmannElement(gr.even_part(rng.integers(-8, 9, 16) / 8.0))
        c = gr.GrassmannElement(rng.integers(-8, 9, 16) / 8.0)
        worst = max(worst, float(np.max(np.abs((a * b - b * a).coeffs))),
                    float(np.max(np.abs((a * a).coeffs))),
                    float(np.max(np.abs(((a * b) * c - a * (b * c)).coeffs))))
    return worst, {"instances": 30, "generators": k}


@check("super-eval-homomorphism", "evaluation of functions at super points", 1e-12)
def _super_eval_hom(rng, tol):
    worst = 0.0
    for _ in range(20):
        f = random_polynomial(2, 2, rng)
        g = random_polynomial(2, 2, rng)
        args = gr.embed(rng.integers(-4, 5, 2) / 8.0, 3)
        args[:, 3] = rng.integers(-4, 5, 2) / 8.0
        args[:, 6] = rng.integers(-4, 5, 2) / 8.0
        lhs = (f * g).super_value(args)
        rhs = gr.gmul(f.super_value(args), g.super_value(args))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst, {"instances": 20}


@check("d-squared-zero", "exterior derivative on functions of the odd tangent bundle", 1e-12)
def _d_squared(rng, tol):
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(10):
            w = random_form(n, rng)
            worst = max(worst, exterior_d(exterior_d(w)).max_abs_diff(_zero(n)))
    return worst, {"instances": 30}


@check("cartan-formula", "Lie derivative as a derivation of forms", 1e-12)
def _cartan(rng, tol):
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(10):
            X, w = random_vector_field(n, 2, rng), random_form(n, rng)
            rhs = exterior_d(contract(X, w)) + contract(X, exterior_d(w))
            worst = max(worst, lie_derivative(X, w).max_abs_diff(rhs))
    return worst, {"instances": 30}


@check("lie-iota-bracket", "contraction and Lie derivative as vector fields on the odd tangent bundle", 1e-12)
def _lie_iota(rng, tol):
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(6):
            X, Y = random_vector_field(n, 2, rng), random_vector_field(n, 2, rng)
            lhs = graded_bracket(PiTDerivation.lie(X), PiTDerivation.contraction(Y))
            worst = max(worst, lhs.max_abs_diff(PiTDerivation.contraction(X.bracket(Y))))
    return worst, {"instances": 18}


@check("iota-anticommutation", "contraction by vector fields", 1e-12)
def _iota_anti(rng, tol):
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(10):
            X, Y, w = random_vector_field(n, 2, rng), random_vector_field(n, 2, rng), random_form(n, rng)
            worst = max(worst, (contract(X, contract(Y, w)) + contract(Y, contract(X, w))).max_abs_diff(_zero(n)))
    return worst, {"instances": 30}


@check("derivation-normal-form", "even-odd decomposition of derivations", 1e-12)
def _normal_form(rng, tol):
    from .probes import random_derivation
    worst = 0.0
    for n in (1, 2, 3):
        for parity in (0, 1):
            V = random_derivation(n, rng, parity)
            probes = [random_form(n, rng) for _ in range(3)]
            W = decompose_derivation(V, n, probes)
            worst = max(worst, W.max_abs_diff(V))
    return worst, {"instances": 6}


# -- flows --------------------------------------------------------------------------


def _rotation_translation():
    x, y = ScalarField.coordinate(2, 0), ScalarField.coordinate(2, 1)
    return VectorField([-y, x]), VectorField([ScalarField.constant(2, 1.0), ScalarField.zero(2)])


@check("trotter-convergence", "Trotter product formula for the flow of a sum", 5e-3)
def _trotter(rng, tol):
    X, Y = _rotation_translation()
    rep = trotter_table(X, Y, 1.0, [1.0, 0.0], 10, tol)
    err = rep.error_at(1024)
    # order below 0.9 fails the check outright
    residual = err if rep.fitted_order >= 0.9 else math.inf
    return residual, {"fitted_order": rep.fitted_order, "error_at_1024": err}


@check("trotter-group-law", "Trotter formula proof, flow of the sum", 1e-9)
def _trotter_group(rng, tol):
    X, Y = _rotation_translation()
    res = trotter_group_law_residual(X, Y, 0.5, 0.25, [1.0, 0.0], 8, tol)
    return max(res.values()), res


@check("trotter-derivative", "Trotter formula proof, derivative at zero", 1e-6)
def _trotter_derivative(rng, tol):
    X, Y = _rotation_translation()
    worst = max(trotter_derivative_residual(X, Y, [0.5, -0.25], n, 1e-4, tol) for n in (1, 2, 4))
    return worst, {"n": [1, 2, 4]}


@check("odd-flow-homomorphism", "flow of a contraction", 1e-12)
def _odd_hom(rng, tol):
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(5):
            a = odd_flow(random_vector_field(n, 2, rng))
            w, e = random_form(n, rng), random_form(n, rng)
            worst = max(worst, a(w.wedge(e)).max_abs_diff(a(w) * a(e)))
    return worst, {"instances": 15}


@check("odd-flow-composition", "composition of flows of commuting odd fields", 1e-12)
def _odd_comp(rng, tol):
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(5):
            X, Y = random_vector_field(n, 2, rng), random_vector_field(n, 2, rng)
            comp = compose_odd_flows(odd_flow(X), odd_flow(Y))
            worst = max(worst, comp.max_abs_diff(odd_flow(X + Y), [random_form(n, rng) for _ in range(2)]))
    return worst, {"instances": 15}


@check("reparam-flow-even", "flow of a function multiple of an even field", 1e-6)
def _reparam_even(rng, tol):
    f = ScalarField(1, {(0,): 1.0, (2,): 1.0})
    X = VectorField.coordinate(1, 0)
    got = reparam_flow_even(f, X, 1.0, [0.0], tol)
    direct = even_flow(X.scaled(f), 1.0, [0.0], tol)
    return max(abs(got[0] - math.tan(1.0)), abs(got[0] - direct[0])), {"value": float(got[0])}


@check("f-iota-flow-laws", "explicit flows of f times a contraction", 1e-12)
def _f_iota(rng, tol):
    dx2, dy2 = DifferentialForm.dx(2, 0), DifferentialForm.dx(2, 1)
    ex2 = VectorField.coordinate(2, 0)
    dx1, ex1 = DifferentialForm.dx(1, 0), VectorField.coordinate(1, 0)
    worst = flow_f_iota(dy2, ex2, "Xf0", 0.7)(dx2).max_abs_diff(dx2 + dy2.scale(0.7))
    worst = max(worst, flow_f_iota(dx1, ex1, "Xf1", 0.7)(dx1).max_abs_diff(dx1.scale(math.exp(0.7))))
    for _ in range(5):
        w = random_form(2, rng)
        a = flow_f_iota(dy2, ex2, "Xf0", 0.3)
        worst = max(worst, a(a.at(0.4)(w)).max_abs_diff(a.at(0.7)(w)))
        w1 = random_form(1, rng)
        b = flow_f_iota(dx1, ex1, "Xf1", 0.3)
        worst = max(worst, b(b.at(0.4)(w1)).max_abs_diff(b.at(0.7)(w1)))
    return worst, {}


@check("super-flow-equation", "flow of an odd field with nonzero square", 1e-6)
def _super_flow(rng, tol):
    X = PiTDerivation.exterior_d(2) + PiTDerivation.contraction(random_vector_field(2, 1, rng))
    sf = super_flow(X, tol)
    worst = 0.0
    for _ in range(3):
        w = random_form(2, rng)
        worst = max(worst, sf.flow_equation_residual(0.3, w))
        worst = max(worst, sf(0.0, w).coefficient(1).max_abs_diff(X(w)))
    return worst, {"regime": sf.regime}


@check("odd-reparam-flow", "reparametrization of flows of odd fields", 1e-10)
def _odd_reparam(rng, tol):
    d = PiTDerivation.exterior_d(2)
    probes = [random_form(2, rng) for _ in range(3)]
    good = verify_odd_reparam(1.5, d, probes=probes)
    bad = verify_odd_reparam(1.5, d, OddReparam(lambda t: t, lambda t: 1.0, lambda t: 1.5), probes=probes)
    detected = bad.residual > 1e-3
    return (good.residual if detected else math.inf), {"violation_residual": bad.residual}


# -- bundles ---------------------------------------------------------------------------


def _connections(rng, count=4):
    shapes = [(1, 1, 1), (2, 2, 1), (2, 1, 1), (3, 1, 1), (2, 2, 2)]
    return [random_even_connection(*shapes[j % len(shapes)], 2, rng) for j in range(count)]


@check("odd-trivial-criterion", "odd-triviality criterion for connections on the pullback bundle", 0.0)
def _odd_trivial(rng, tol):
    failures = 0
    for nabla in _connections(rng):
        P = pullback_connection(nabla)
        failures += not is_odd_trivial(P, probes=4, rng=rng).ok
        n, r = nabla.dim, nabla.rank
        dx = DifferentialForm.dx(n, 0)
        R = [[[dx if c == a else _zero(n) for a in range(r)] for c in range(r)]] + \
            [[[_zero(n)] * r for _ in range(r)] for _ in range(n - 1)]
        failures += is_odd_trivial(PiTConnection(nabla.bundle, [[list(row) for row in M] for M in P.L], R),
                                   probes=2, rng=rng).ok
    return float(failures), {"connections": 4}


@check("odd-flatness", "flatness of the pullback connection in odd directions", 1e-12)
def _odd_flat(rng, tol):
    worst = 0.0
    for nabla in _connections(rng):
        P = pullback_connection(nabla)
        n = nabla.dim
        sigma = PiTSection([random_form(n, rng) for _ in range(nabla.rank)])
        X = PiTDerivation.contraction(random_vector_field(n, 2, rng))
        Y = PiTDerivation.contraction(random_vector_field(n, 2, rng)).scaled(random_homogeneous_form(n, rng, 0))
        K = odd_curvature(P, X, Y, sigma)
        worst = max(worst, max(c.max_abs_diff(_zero(n)) for c in K.components))
    return worst, {}


@check("d-pairing", "pairing of the pullback connection with the exterior derivative", 1e-12)
def _d_pairing(rng, tol):
    worst = 0.0
    for nabla in _connections(rng):
        n = nabla.dim
        s = [random_polynomial(n, 2, rng) for _ in range(nabla.rank)]
        got = pullback_connection(nabla).covariant(PiTDerivation.exterior_d(n), PiTSection.pullback(s))
        worst = max(worst, max(a.max_abs_diff(b) for a, b in zip(got.components, nabla.covariant_differential(s))))
    return worst, {}


@check("pullback-restrict-bijection", "correspondence of even and odd-trivial connections", 1e-12)
def _bijection(rng, tol):
    worst = 0.0
    for nabla in _connections(rng):
        back = restrict_connection(pullback_connection(nabla), probes=2, rng=rng)
        worst = max(worst, back.max_abs_diff(nabla), 0.0 if back.is_even else math.inf)
        P = pullback_connection(nabla)
        worst = max(worst, pullback_connection(restrict_connection(P, probes=2, rng=rng)).max_abs_diff(P))
    return worst, {}


# -- transport ------------------------------------------------------------------------


def _diag_connection(a=0.7, b=-0.4):
    return GradedConnection.from_legs(GradedBundle(1, 1, 1), [[[a, 0.0], [0.0, b]]])


@check("transport-closed-form", "parallel sections along paths", 1e-8)
def _closed_form(rng, tol):
    sec = ConnectionTransport(_diag_connection(), tol).transport(Path.linear([0.0], [1.0]), [1.0, 1.0])
    return float(np.max(np.abs(sec.endpoint[:, 0] - np.exp([-0.7, 0.4])))), {}


@check("transport-gluing", "gluing of parallel transport", 1e-6)
def _gluing(rng, tol):
    T = ConnectionTransport(_diag_connection(), tol)
    sp = SuperPath.polynomial([[0.0], [1.0]], [[[0.0, 1.0]], [[0.0, 0.5]]], k=1)
    return max(check_gluing(T, Path.linear([0.0], [1.0]), 0.4, [1.0, 1.0]),
               check_gluing(T, sp, 0.4, gr.embed([1.0, 1.0], 1))), {}


@check("transport-identity-on-constant", "transport along constant paths", 0.0)
def _constant(rng, tol):
    T = ConnectionTransport(random_even_connection(2, 1, 1, 2, rng), tol)
    return max(check_identity_on_constant(T, np.array([0.25, 0.5]), [1.0, -1.0]),
               check_identity_on_constant(T, np.array([0.25, 0.5]), [1.0, -1.0], superpath=True)), {}


@check("q-naturality", "naturality with respect to the projection to the time line", 1e-6)
def _q_nat(rng, tol):
    T = ConnectionTransport(random_even_connection(2, 1, 1, 2, rng), tol)
    return check_q_naturality(T, Path.polynomial([[0.0, 0.0], [0.5, -0.25], [0.25, 0.5]]), [1.0, 0.5]), {}


@check("s-naturality", "naturality in the parametrizing superpoint", 1e-9)
def _s_nat(rng, tol):
    T = ConnectionTransport(random_even_connection(1, 1, 1, 2, rng), tol)
    g = np.zeros(4)
    g[1], g[2] = 0.5, -1.0
    hom = gr.GrassmannHom([g], 2)
    sp = SuperPath.polynomial([[0.0], [1.0]], [[[0.0, 1.0]], [[0.0, 0.25]]], k=1)
    return check_s_naturality(T, sp, hom, gr.embed([1.0, 1.0], 1)), {}


@check("reparam-invariance", "invariance under reparametrization", 1e-6)
def _reparam(rng, tol):
    from scipy.optimize import brentq
    u1 = brentq(lambda u: u ** 3 / 3 + u - 1.0, 0.0, 1.0, xtol=1e-15)
    rep = Reparametrization(lambda u: u ** 3 / 3 + u, lambda u: u * u + 1, 0.0, u1)
    T = ConnectionTransport(_diag_connection(), tol)
    sp = SuperPath.polynomial([[0.0], [1.0]], [[[0.0, 1.0]], [[0.0, 0.0]]], k=1)
    return max(check_reparam_invariance(T, Path.linear([0.0], [1.0]), rep, [1.0, 1.0]),
               check_reparam_invariance(T, sp, rep, gr.embed([1.0, 1.0], 1))), {}


@check("d-squared-equals-dt", "the standard odd vector field on the super time line", 0.0)
def _d_sq(rng, tol):
    worst = 0.0
    for _ in range(10):
        F = TimeSuperFunction(Polynomial(rng.integers(-8, 9, 5) / 8.0), Polynomial(rng.integers(-8, 9, 5) / 8.0))
        worst = max(worst, d_squared_residual(F))
    return worst, {}


@check("odd-trivial-transport", "transport along flows of contractions is the identity", 0.0)
def _odd_trivial_transport(rng, tol):
    nabla = random_even_connection(2, 1, 1, 2, rng)
    T = LiftedTransport(ConnectionTransport(nabla, tol))
    s = PiTSection.pullback([random_polynomial(2, 1, rng) for _ in range(2)])
    fam = flow_transport(T, PiTDerivation.contraction(random_vector_field(2, 2, rng)), s, [0.25, -0.125])
    return fam.identity_residual(), {"kind": fam.kind}


@check("lie-flow-transport-pulled-back", "transport along flows of Lie derivatives", 1e-10)
def _lie_transport(rng, tol):
    nabla = random_even_connection(2, 1, 1, 2, rng)
    T = PiTConnectionTransport(pullback_connection(nabla), tol)
    s = PiTSection.pullback([random_polynomial(2, 1, rng) for _ in range(2)])
    fam = flow_transport(T, random_vector_field(2, 1, rng), s, [0.25, -0.125], horizon=0.5)
    return fam.eta_components(), {}


@check("connection-roundtrip", "correspondence between transport and even connections", 1e-5)
def _roundtrip(rng, tol):
    worst = 0.0
    even = True
    for n, p, q in ((1, 1, 1), (2, 2, 1)):
        rep = roundtrip_residual(random_even_connection(n, p, q, 2, rng), rng=rng, tol=tol)
        worst = max(worst, rep.residual)
        even = even and rep.recovered_even
    return (worst if even else math.inf), {"recovered_even": even}


@check("lift-project-roundtrip", "lifting transport from the base to the odd tangent bundle", 1e-10)
def _lift_project(rng, tol):
    nabla = random_even_connection(2, 1, 1, 2, rng)
    T = ConnectionTransport(nabla, tol)
    back = ProjectedTransport(LiftedTransport(T))
    c = Path.polynomial([[0.0, 0.25], [0.5, -0.5], [0.25, 0.125]])
    a, b = T.transport(c, [1.0, -0.5]), back.transport(c, [1.0, -0.5])
    return max(float(np.max(np.abs(a.s1(t) - b.s1(t)))) for t in np.linspace(0, 1, 5)), {}


@check("recovery-consistency", "construction of a connection from transport via the even-odd rules", 1e-6)
def _recovery(rng, tol):
    nabla = random_even_connection(2, 1, 1, 1, rng)
    rec = recover_connection(PiTConnectionTransport(pullback_connection(nabla), tol))
    res = rec.check_consistency([0.25, -0.125], [random_vector_field(2, 1, rng)], [random_polynomial(2, 1, rng)])
    return res, {}


def list_checks() -> list[tuple[str, str]]:
    return [(c.name, c.anchor) for c in CATALOG.values()]
