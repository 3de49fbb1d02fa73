"""Graded vector bundles over R^n, their connections, and pullback connections on Pi T R^n.

A bundle is trivial, ``E = R^n x R^{p|q}``; a connection is ``d + A`` with
``A`` an ``(p+q) x (p+q)`` matrix of 1-forms.  A connection on the pullback
bundle over Pi T R^n is stored through its pairings with the coordinate
derivations: ``L_i`` pairs with ``L_{d_i}`` and ``R_i`` with ``iota_{d_i}``, so

    nabla_V sigma = V(sigma) + sum_i a_i ^ L_i sigma + sum_i b_i ^ R_i sigma

for ``V = sum a_i L_{d_i} + sum b_i iota_{d_i}``.  Sections of the pullback
bundle are vectors of forms, with the form coefficient written to the left
of the frame vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import grassmann as gr
from .manifold_forms import (DifferentialForm, DimensionError, FormArray, PiTDerivation, ScalarField,
                             VectorField, exterior_d, graded_bracket)


class NotOddTrivialError(ValueError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConnectionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GradedBundle:
    n: int
    p: int
    q: int

    def __post_init__(self):
        if self.n < 1 or self.p < 0 or self.q < 0 or self.p + self.q < 1:
            raise ValueError(f"invalid bundle data n={self.n}, p={self.p}, q={self.q}")

    @property
    def rank(self) -> int:
        return self.p + self.q

    def parity(self, a: int) -> int:
        return 0 if a < self.p else 1

    def block_mask(self) -> np.ndarray:
        """True where an entry links components of different parity."""
        par = np.array([self.parity(a) for a in range(self.rank)])
        return par[:, None] != par[None, :]


def _zero_matrix(n: int, r: int):
    return [[DifferentialForm.zero(n) for _ in range(r)] for _ in range(r)]


def _matvec(M, sigma: Sequence[DifferentialForm]) -> list[DifferentialForm]:
    out = []
    for row in M:
        acc = DifferentialForm.zero(sigma[0].dim)
        for m, s in zip(row, sigma):
            if not m.is_zero() and not s.is_zero():
                acc = acc + m.wedge(s)
        out.append(acc)
    return out


def _matmul(M, N):
    r = len(M)
    n = M[0][0].dim
    out = _zero_matrix(n, r)
    for c in range(r):
        for a in range(r):
            acc = DifferentialForm.zero(n)
            for b in range(r):
                if not M[c][b].is_zero() and not N[b][a].is_zero():
                    acc = acc + M[c][b].wedge(N[b][a])
            out[c][a] = acc
    return out


class GradedConnection:
    """``nabla = d + A`` on a trivialized graded bundle."""

    def __init__(self, bundle: GradedBundle, A: Sequence[Sequence[DifferentialForm]]):
        r, n = bundle.rank, bundle.n
        if len(A) != r or any(len(row) != r for row in A):
            raise DimensionError(f"connection matrix must be {r} x {r}")
        for row in A:
            for w in row:
                if w.dim != n:
                    raise DimensionError("connection entry on the wrong space")
                if w.degrees() - {1}:
                    raise ConnectionFormatError("connection entries must be 1-forms")
        self.bundle = bundle
        self.A = tuple(tuple(row) for row in A)

    @classmethod
    def zero(cls, bundle: GradedBundle) -> GradedConnection:
        return cls(bundle, _zero_matrix(bundle.n, bundle.rank))

    @classmethod
    def from_legs(cls, bundle: GradedBundle, legs) -> GradedConnection:
        """``legs[i][c][a]`` is the coefficient of ``dx^i`` in ``A[c][a]``."""
        n, r = bundle.n, bundle.rank
        A = [[DifferentialForm(n, {(i,): _field(legs[i][c][a], n) for i in range(n)})
              for a in range(r)] for c in range(r)]
        return cls(bundle, A)

    @property
    def rank(self) -> int:
        return self.bundle.rank

    @property
    def dim(self) -> int:
        return self.bundle.n

    @property
    def is_even(self) -> bool:
        mask = self.bundle.block_mask()
        return all(self.A[c][a].is_zero() for c, a in zip(*np.nonzero(mask)))

    def leg(self, i: int) -> list[list[ScalarField]]:
        return [[w.coefficient((i,)) for w in row] for row in self.A]

    @cached_property
    def _legs(self) -> FormArray:
        n = self.dim
        return FormArray([[[DifferentialForm.function(f) for f in row] for row in self.leg(i)]
                          for i in range(n)], n)

    def matrices(self, x_s: np.ndarray) -> np.ndarray:
        """Leg matrices at even S-point coordinates: shape ``(n, r, r, 2**k)``."""
        return self._legs.super_value(x_s)

    def matrices_at(self, x) -> np.ndarray:
        return self._legs.value(x)

    def pairing(self, X: VectorField) -> list[list[ScalarField]]:
        """``A(X)`` as a matrix of functions."""
        r, n = self.rank, self.dim
        return [[sum((self.A[c][a].coefficient((i,)) * X[i] for i in range(n)), ScalarField.zero(n))
                 for a in range(r)] for c in range(r)]

    def covariant_derivative(self, X: VectorField, s: Sequence[ScalarField]) -> list[ScalarField]:
        AX = self.pairing(X)
        return [X.apply(s[c]) + sum((AX[c][a] * s[a] for a in range(self.rank)), ScalarField.zero(self.dim))
                for c in range(self.rank)]

    def covariant_differential(self, s: Sequence[ScalarField]) -> list[DifferentialForm]:
        """``nabla s`` as a vector of 1-forms."""
        comps = [DifferentialForm.function(f) for f in s]
        return [exterior_d(comps[c]) + _matvec(self.A, comps)[c] for c in range(self.rank)]

    def curvature(self) -> list[list[DifferentialForm]]:
        """``dA + A ^ A``."""
        AA = _matmul(self.A, self.A)
        return [[exterior_d(self.A[c][a]) + AA[c][a] for a in range(self.rank)]
                for c in range(self.rank)]

    def max_abs_diff(self, other: GradedConnection) -> float:
        return max(x.max_abs_diff(y) for r1, r2 in zip(self.A, other.A) for x, y in zip(r1, r2))

    def to_json(self) -> dict:
        return {"p": self.bundle.p, "q": self.bundle.q, "even": self.is_even,
                "A": [[w.to_json() for w in row] for row in self.A]}

    @classmethod
    def from_json(cls, data: Mapping) -> GradedConnection:
        rows = [[DifferentialForm.from_json(w) for w in row] for row in data["A"]]
        if not rows or not rows[0]:
            raise ConnectionFormatError("empty connection matrix")
        n = rows[0][0].dim
        conn = cls(GradedBundle(n, int(data["p"]), int(data["q"])), rows)
        if data.get("even", False) and not conn.is_even:
            raise ConnectionFormatError("connection flagged even but A mixes parities")
        return conn

    def __repr__(self):
        return f"GradedConnection(n={self.dim}, p={self.bundle.p}, q={self.bundle.q})"


def _field(f, n: int) -> ScalarField:
    return f if isinstance(f, ScalarField) else ScalarField.constant(n, float(f))


def covariant_derivative_M(nabla: GradedConnection, X: VectorField,
                           s: Sequence[ScalarField]) -> list[ScalarField]:
    return nabla.covariant_derivative(X, s)


# -- sections and connections over Pi T R^n ----------------------------------


class PiTSection:
    """Section of the pullback bundle: one form per frame vector."""

    def __init__(self, components: Sequence[DifferentialForm]):
        self.components = tuple(components)
        if not self.components:
            raise DimensionError("section needs at least one component")
        self.dim = self.components[0].dim

    @classmethod
    def pullback(cls, s: Sequence[ScalarField | float], n: int | None = None) -> PiTSection:
        """``pi* s`` for a section ``s`` of E over R^n."""
        return cls([DifferentialForm.function(_field(f, n) if n else f) for f in s])

    @classmethod
    def basis(cls, n: int, r: int, a: int) -> PiTSection:
        return cls.pullback([1.0 if b == a else 0.0 for b in range(r)], n)

    @property
    def rank(self) -> int:
        return len(self.components)

    def is_pulled_back(self) -> bool:
        return all(not (c.degrees() - {0}) for c in self.components)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def scaled(self, w: DifferentialForm) -> PiTSection:
        return PiTSection([w.wedge(c) for c in self.components])

    def __add__(self, other: PiTSection) -> PiTSection:
        return PiTSection([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: PiTSection) -> PiTSection:
        return PiTSection([a - b for a, b in zip(self.components, other.components)])

    def max_abs_diff(self, other: PiTSection) -> float:
        return max(a.max_abs_diff(b) for a, b in zip(self.components, other.components))

    def super_value(self, x_s: np.ndarray, xi_s: np.ndarray) -> np.ndarray:
        return FormArray(list(self.components), self.dim).super_value(x_s, xi_s)

    def __repr__(self):
        return "PiTSection(" + ", ".join(repr(c) for c in self.components) + ")"


class PiTConnection:
    """Connection on the pullback of E to Pi T R^n, stored by its coordinate legs.

    ``L[i]`` and ``R[i]`` are ``r x r`` matrices of forms.  For the Leibniz
    rule to hold with the form coefficient on the left, ``L`` entries must be
    even forms and ``R`` entries odd forms.
    """

    def __init__(self, bundle: GradedBundle, L, R=None):
        n, r = bundle.n, bundle.rank
        if R is None:
            R = [_zero_matrix(n, r) for _ in range(n)]
        if len(L) != n or len(R) != n:
            raise DimensionError("need one leg matrix per coordinate")
        for legs, want, name in ((L, 0, "L"), (R, 1, "R")):
            for M in legs:
                if len(M) != r or any(len(row) != r for row in M):
                    raise DimensionError(f"{name} legs must be {r} x {r}")
                for row in M:
                    for w in row:
                        if not w.is_zero() and w.parity != want:
                            raise gr.ParityError(
                                f"{name} entries must be {'even' if want == 0 else 'odd'} forms")
        self.bundle = bundle
        self.L = tuple(tuple(tuple(row) for row in M) for M in L)
        self.R = tuple(tuple(tuple(row) for row in M) for M in R)

    @property
    def dim(self) -> int:
        return self.bundle.n

    @property
    def rank(self) -> int:
        return self.bundle.rank

    @property
    def is_even(self) -> bool:
        mask = self.bundle.block_mask()
        return all(M[c][a].is_zero() for M in self.L + self.R for c, a in zip(*np.nonzero(mask)))

    def pairing(self, V: PiTDerivation) -> list[list[DifferentialForm]]:
        """``<A~, V> = sum a_i L_i + sum b_i R_i``."""
        n, r = self.dim, self.rank
        out = _zero_matrix(n, r)
        for i in range(n):
            for coeff, M in ((V.a[i], self.L[i]), (V.b[i], self.R[i])):
                if coeff.is_zero():
                    continue
                for c in range(r):
                    for a in range(r):
                        if not M[c][a].is_zero():
                            out[c][a] = out[c][a] + coeff.wedge(M[c][a])
        return out

    def covariant(self, V: PiTDerivation, sigma: PiTSection) -> PiTSection:
        if sigma.rank != self.rank:
            raise DimensionError("section rank differs from bundle rank")
        extra = _matvec(self.pairing(V), list(sigma.components))
        return PiTSection([V(s) + e for s, e in zip(sigma.components, extra)])

    @cached_property
    def coefficients(self) -> FormArray:
        """Leg matrices stacked ``(L_0..L_{n-1}, R_0..R_{n-1})`` as one form array."""
        return FormArray([[list(row) for row in M] for M in self.L + self.R], self.dim)

    def max_abs_diff(self, other: PiTConnection) -> float:
        return max(x.max_abs_diff(y) for M1, M2 in zip(self.L + self.R, other.L + other.R)
                   for r1, r2 in zip(M1, M2) for x, y in zip(r1, r2))

    def __repr__(self):
        return f"PiTConnection(n={self.dim}, p={self.bundle.p}, q={self.bundle.q})"


def pullback_connection(nabla: GradedConnection) -> PiTConnection:
    """``pi* nabla``: the legs along ``L_{d_i}`` are the components of ``A``; nothing pairs with ``iota``."""
    L = [[[DifferentialForm.function(f) for f in row] for row in nabla.leg(i)] for i in range(nabla.dim)]
    return PiTConnection(nabla.bundle, L)


@dataclass
class OddTrivialityReport:
    ok: bool
    witness: dict | None = None

    def __bool__(self):
        return self.ok


def is_odd_trivial(conn: PiTConnection, probes: int = 16, rng=None, degree: int = 2,
                   tol: float = 1e-12) -> OddTrivialityReport:
    """Check ``<nabla(pi*s), iota_X> = 0`` and ``<nabla(pi*s), L_X>`` pulled back.

    Probes are the coordinate sections against the coordinate fields plus
    ``probes`` random polynomial fields.
    """
    from .probes import random_vector_field

    rng = np.random.default_rng(0) if rng is None else rng
    n, r = conn.dim, conn.rank
    fields = [VectorField.coordinate(n, i) for i in range(n)]
    fields += [random_vector_field(n, degree, rng) for _ in range(probes)]
    for a in range(r):
        s = PiTSection.basis(n, r, a)
        for X in fields:
            along_iota = conn.covariant(PiTDerivation.contraction(X), s)
            if not along_iota.max_abs_diff(PiTSection.pullback([0.0] * r, n)) <= tol:
                return OddTrivialityReport(False, {"condition": "iota pairing vanishes", "section": a,
                                                   "field": X, "value": along_iota})
            along_lie = conn.covariant(PiTDerivation.lie(X), s)
            if not along_lie.is_pulled_back():
                return OddTrivialityReport(False, {"condition": "Lie pairing is pulled back",
                                                   "section": a, "field": X, "value": along_lie})
    return OddTrivialityReport(True)


def restrict_connection(conn: PiTConnection, **probe_args) -> GradedConnection:
    """Inverse of :func:`pullback_connection` on odd-trivial connections."""
    report = is_odd_trivial(conn, **probe_args)
    if not report:
        raise NotOddTrivialError(f"connection is not odd-trivial: {report.witness['condition']} fails",
                                 report.witness)
    n, r = conn.dim, conn.rank
    legs = [[[conn.L[i][c][a].function_part() for a in range(r)] for c in range(r)] for i in range(n)]
    return GradedConnection.from_legs(conn.bundle, legs)


def odd_curvature(conn: PiTConnection, X: PiTDerivation, Y: PiTDerivation,
                  sigma: PiTSection) -> PiTSection:
    """``nabla_X nabla_Y + nabla_Y nabla_X - nabla_[X,Y]`` for odd ``X, Y``."""
    if X.parity != 1 or Y.parity != 1:
        raise gr.ParityError("odd_curvature takes two odd derivations")
    xy = conn.covariant(X, conn.covariant(Y, sigma))
    yx = conn.covariant(Y, conn.covariant(X, sigma))
    return xy + yx - conn.covariant(graded_bracket(X, Y), sigma)
