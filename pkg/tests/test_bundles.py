import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from supertransport import grassmann as gr
from supertransport.bundles import (ConnectionFormatError, GradedBundle, GradedConnection, NotOddTrivialError,
                                    PiTConnection, PiTSection, is_odd_trivial, odd_curvature, pullback_connection,
                                    restrict_connection)
from supertransport.manifold_forms import DifferentialForm, PiTDerivation, ScalarField, VectorField
from supertransport.probes import (random_even_connection, random_form, random_homogeneous_form, random_polynomial,
                                   random_vector_field)

seeds = st.integers(0, 2 ** 32 - 1)
shapes = st.sampled_from([(1, 1, 1), (2, 1, 1), (2, 2, 1), (1, 2, 2), (2, 2, 2), (3, 1, 1)])
fast = settings(max_examples=12, deadline=None)


def _rng(seed):
    return np.random.default_rng(seed)


def _zeros(n, r):
    return [[DifferentialForm.zero(n) for _ in range(r)] for _ in range(r)]


def random_pit_connection(n, p, q, rng):
    bundle = GradedBundle(n, p, q)
    r = bundle.rank
    L = [[[random_homogeneous_form(n, rng, 0, 1) for _ in range(r)] for _ in range(r)] for _ in range(n)]
    R = [[[random_homogeneous_form(n, rng, 1, 1) for _ in range(r)] for _ in range(r)] for _ in range(n)]
    return PiTConnection(bundle, L, R)


def _section(n, r, rng):
    return PiTSection([random_form(n, rng) for _ in range(r)])


def test_block_mask_marks_parity_changing_entries():
    mask = GradedBundle(1, 1, 2).block_mask()
    assert mask.tolist() == [[False, True, True], [True, False, False], [True, False, False]]


def test_connection_json_roundtrip_and_validation():
    nabla = random_even_connection(2, 1, 1, 2, _rng(0))
    back = GradedConnection.from_json(nabla.to_json())
    assert back.max_abs_diff(nabla) == 0.0 and back.is_even
    data = nabla.to_json()
    data["A"][0][1] = DifferentialForm.dx(2, 0).to_json()
    with pytest.raises(ConnectionFormatError):
        GradedConnection.from_json(data)
    with pytest.raises(ConnectionFormatError):
        GradedConnection(GradedBundle(2, 1, 0), [[DifferentialForm.dx(2, 0, 1)]])


def test_pit_connection_parity_validation():
    b = GradedBundle(1, 1, 0)
    with pytest.raises(gr.ParityError):
        PiTConnection(b, [[[DifferentialForm.dx(1, 0)]]])
    with pytest.raises(gr.ParityError):
        PiTConnection(b, [_zeros(1, 1)], [[[DifferentialForm.function(ScalarField.constant(1, 1.0))]]])


def test_curvature_of_rank_one_constant_connection_vanishes():
    nabla = GradedConnection.from_legs(GradedBundle(2, 1, 0), [[[0.5]], [[-1.0]]])
    assert all(w.is_zero() for row in nabla.curvature() for w in row)


# -- covariant derivatives on Pi T R^n ----------------------------------------------------


@fast
@given(seeds, shapes)
def test_pit_connection_is_graded_leibniz(seed, shape):
    rng = _rng(seed)
    n, p, q = shape
    conn = random_pit_connection(n, p, q, rng)
    parity = int(rng.integers(0, 2))
    V = PiTDerivation(*[[random_homogeneous_form(n, rng, (parity + j) % 2, 1) for _ in range(n)] for j in (0, 1)],
                      parity)
    w_par = int(rng.integers(0, 2))
    w = random_homogeneous_form(n, rng, w_par)
    sigma = _section(n, conn.rank, rng)
    lhs = conn.covariant(V, sigma.scaled(w))
    rhs = PiTSection([V(w).wedge(s) for s in sigma.components]) + \
        conn.covariant(V, sigma).scaled(w.scale((-1) ** (parity * w_par)))
    assert lhs.max_abs_diff(rhs) <= 1e-12


@fast
@given(seeds, shapes)
def test_pit_connection_linear_in_derivation(seed, shape):
    rng = _rng(seed)
    n, p, q = shape
    conn = random_pit_connection(n, p, q, rng)
    V = PiTDerivation.contraction(random_vector_field(n, 1, rng))
    w = random_homogeneous_form(n, rng, 0)
    sigma = _section(n, conn.rank, rng)
    assert conn.covariant(V.scaled(w), sigma).max_abs_diff(conn.covariant(V, sigma).scaled(w)) <= 1e-12


@fast
@given(seeds, shapes)
def test_pullback_is_odd_trivial_and_flat_in_odd_directions(seed, shape):
    rng = _rng(seed)
    nabla = random_even_connection(*shape, 2, rng)
    P = pullback_connection(nabla)
    assert is_odd_trivial(P, probes=3, rng=rng).ok
    n = nabla.dim
    sigma = _section(n, nabla.rank, rng)
    X = PiTDerivation.contraction(random_vector_field(n, 2, rng))
    Y = PiTDerivation.contraction(random_vector_field(n, 2, rng)).scaled(random_homogeneous_form(n, rng, 0))
    K = odd_curvature(P, X, Y, sigma)
    assert all(c.is_zero() for c in K.components)


@fast
@given(seeds, shapes)
def test_odd_curvature_along_d_is_twice_curvature(seed, shape):
    # nabla_d nabla_d = F acting on pulled back sections, and [d, d] = 0
    rng = _rng(seed)
    nabla = random_even_connection(*shape, 2, rng)
    n, r = nabla.dim, nabla.rank
    s = [random_polynomial(n, 2, rng) for _ in range(r)]
    d = PiTDerivation.exterior_d(n)
    K = odd_curvature(pullback_connection(nabla), d, d, PiTSection.pullback(s))
    F = nabla.curvature()
    expect = [sum((F[c][a].wedge(DifferentialForm.function(s[a])) for a in range(r)), DifferentialForm.zero(n))
              for c in range(r)]
    assert K.max_abs_diff(PiTSection(expect).scaled(DifferentialForm.function(ScalarField.constant(n, 2.0)))) \
        <= 1e-12


@fast
@given(seeds, shapes)
def test_d_pairing_reproduces_covariant_differential(seed, shape):
    rng = _rng(seed)
    nabla = random_even_connection(*shape, 2, rng)
    n = nabla.dim
    s = [random_polynomial(n, 2, rng) for _ in range(nabla.rank)]
    got = pullback_connection(nabla).covariant(PiTDerivation.exterior_d(n), PiTSection.pullback(s))
    assert got.max_abs_diff(PiTSection(nabla.covariant_differential(s))) == 0.0


@fast
@given(seeds, shapes)
def test_lie_pairing_of_pullback_is_covariant_derivative(seed, shape):
    rng = _rng(seed)
    nabla = random_even_connection(*shape, 2, rng)
    n = nabla.dim
    X = random_vector_field(n, 2, rng)
    s = [random_polynomial(n, 2, rng) for _ in range(nabla.rank)]
    got = pullback_connection(nabla).covariant(PiTDerivation.lie(X), PiTSection.pullback(s))
    assert got.max_abs_diff(PiTSection.pullback(nabla.covariant_derivative(X, s))) <= 1e-12


@fast
@given(seeds, shapes)
def test_restrict_inverts_pullback(seed, shape):
    rng = _rng(seed)
    nabla = random_even_connection(*shape, 2, rng)
    P = pullback_connection(nabla)
    back = restrict_connection(P, probes=2, rng=rng)
    assert back.max_abs_diff(nabla) == 0.0 and back.is_even
    assert pullback_connection(back).max_abs_diff(P) == 0.0


def test_violations_are_detected_with_witnesses():
    rng = _rng(11)
    nabla = random_even_connection(2, 1, 1, 2, rng)
    P = pullback_connection(nabla)
    n, r = 2, 2
    iota_leg = [[[DifferentialForm.dx(n, 0) if c == a else DifferentialForm.zero(n) for a in range(r)]
                 for c in range(r)]] + [_zeros(n, r)]
    rep = is_odd_trivial(PiTConnection(nabla.bundle, [[list(row) for row in M] for M in P.L], iota_leg))
    assert not rep.ok and rep.witness["condition"] == "iota pairing vanishes"
    L = [[list(row) for row in M] for M in P.L]
    L[1][0][0] = L[1][0][0] + DifferentialForm.dx(n, 0, 1)
    bad = PiTConnection(nabla.bundle, L)
    rep = is_odd_trivial(bad)
    assert not rep.ok and rep.witness["condition"] == "Lie pairing is pulled back"
    with pytest.raises(NotOddTrivialError) as info:
        restrict_connection(bad)
    assert info.value.witness is not None


def test_pullback_section_basis():
    e = PiTSection.basis(2, 3, 1)
    assert e.is_pulled_back()
    assert [c.function_part().poly for c in e.components] == [{}, {(0, 0): 1.0}, {}]
    assert not PiTSection([DifferentialForm.dx(2, 0)]).is_pulled_back()
