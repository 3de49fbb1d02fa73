"""Random polynomial test data with dyadic coefficients, so products stay exact in floats."""
from __future__ import annotations

import itertools

import numpy as np

from .manifold_forms import DifferentialForm, PiTDerivation, ScalarField, VectorField


def _dyadic(rng, size=None):
    return rng.integers(-8, 9, size=size) / 8.0


def exponents(n: int, degree: int) -> list[tuple]:
    return [e for e in itertools.product(range(degree + 1), repeat=n) if sum(e) <= degree]


def random_polynomial(n: int, degree: int, rng, density: float = 0.6) -> ScalarField:
    terms = {}
    for e in exponents(n, degree):
        if rng.random() < density:
            terms[e] = float(_dyadic(rng))
    return ScalarField(n, terms)


def random_form(n: int, rng, degree: int = 2, form_degrees=None, density: float = 0.6) -> DifferentialForm:
    form_degrees = range(n + 1) if form_degrees is None else form_degrees
    terms = {}
    for d in form_degrees:
        for idx in itertools.combinations(range(n), d):
            if rng.random() < density:
                terms[idx] = random_polynomial(n, degree, rng)
    return DifferentialForm(n, terms)


def random_homogeneous_form(n: int, rng, parity: int, degree: int = 2) -> DifferentialForm:
    return random_form(n, rng, degree, [d for d in range(n + 1) if d % 2 == parity])


def random_vector_field(n: int, degree: int, rng) -> VectorField:
    return VectorField([random_polynomial(n, degree, rng) for _ in range(n)])


def random_derivation(n: int, rng, parity: int, degree: int = 1) -> PiTDerivation:
    a = [random_homogeneous_form(n, rng, parity, degree) for _ in range(n)]
    b = [random_homogeneous_form(n, rng, 1 - parity, degree) for _ in range(n)]
    return PiTDerivation(a, b, parity)


def random_even_connection(n: int, p: int, q: int, degree: int, rng):
    from .bundles import GradedBundle, GradedConnection

    bundle = GradedBundle(n, p, q)
    mask = bundle.block_mask()
    r = bundle.rank
    legs = [[[ScalarField.zero(n) if mask[c, a] else random_polynomial(n, degree, rng)
              for a in range(r)] for c in range(r)] for _ in range(n)]
    return GradedConnection.from_legs(bundle, legs)


def random_point(n: int, rng, scale: float = 0.5) -> np.ndarray:
    return _dyadic(rng, n) * scale
