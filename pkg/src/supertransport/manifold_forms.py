"""Fields and differential forms on R^n, viewed as functions on the odd tangent bundle.

Forms are polynomial (or oracle) coefficient maps keyed by strictly increasing
index tuples.  Derivations of the form algebra are kept in the coordinate
normal form ``sum a_i L_{d_i} + sum b_i iota_{d_i}``, so two derivations are
equal exactly when their coefficient forms agree.

Sign conventions: interior products and odd derivations act from the left.
Odd parameters (``theta``) in :class:`SuperForm` are written to the left of
their form coefficients, which makes pullbacks such as
``omega -> omega + theta * iota_X(omega)`` algebra homomorphisms.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import grassmann as gr


class DimensionError(ValueError):
    pass


class LeibnizError(ValueError):
    """A raw operator fails to act as a derivation on probe forms."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


Exp = tuple


def _mask(indices: Sequence[int]) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


def _indices(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


# -- scalar fields ---------------------------------------------------------


class ScalarField:
    """Smooth function on R^n: polynomial, or opaque with a derivative oracle.

    Polynomials are stored as ``{exponent tuple: coefficient}`` with zero
    terms removed.  Oracle fields carry ``value(x)`` and
    ``partial(x, alpha)`` valid for ``|alpha| <= derivative_order``.
    """

    __slots__ = ("dim", "_poly", "_value", "_partial", "_order", "_domain", "__dict__")

    def __init__(self, dim: int, poly: Mapping[Exp, float] | None = None, *,
                 value: Callable | None = None, partial: Callable | None = None,
                 order: int = 0, domain: Callable | None = None):
        self.dim = dim
        if poly is not None:
            clean = {}
            for e, c in poly.items():
                e = tuple(int(v) for v in e)
                if len(e) != dim:
                    raise DimensionError(f"exponent {e} does not match dimension {dim}")
                if any(v < 0 for v in e):
                    raise ValueError("negative exponent")
                c = float(c)
                if c != 0.0:
                    clean[e] = clean.get(e, 0.0) + c
            self._poly = dict(sorted((e, c) for e, c in clean.items() if c != 0.0))
            self._value = None
            self._partial = None
            self._order = None
        else:
            if value is None:
                raise ValueError("oracle field needs a value function")
            self._poly = None
            self._value = value
            self._partial = partial
            self._order = order if partial is not None else 0
        self._domain = domain

    # construction
    @classmethod
    def constant(cls, dim: int, c: float) -> ScalarField:
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def zero(cls, dim: int) -> ScalarField:
        return cls(dim, {})

    @classmethod
    def coordinate(cls, dim: int, i: int) -> ScalarField:
        e = [0] * dim
        e[i] = 1
        return cls(dim, {tuple(e): 1.0})

    @classmethod
    def from_oracle(cls, dim: int, value: Callable, partial: Callable | None = None,
                    order: int = 0, domain: Callable | None = None) -> ScalarField:
        return cls(dim, None, value=value, partial=partial, order=order, domain=domain)

    # introspection
    @property
    def is_polynomial(self) -> bool:
        return self._poly is not None

    @property
    def poly(self) -> dict:
        if self._poly is None:
            raise TypeError("oracle field has no polynomial representation")
        return dict(self._poly)

    @property
    def derivative_order(self) -> int | None:
        return None if self._poly is not None else self._order

    def in_domain(self, x) -> bool:
        return True if self._domain is None else bool(self._domain(np.asarray(x, dtype=float)))

    def is_zero(self) -> bool:
        if self._poly is None:
            return False
        return not self._poly

    def degree(self) -> int:
        if self._poly is None:
            raise TypeError("oracle field has no degree")
        return max((sum(e) for e in self._poly), default=0)

    def is_constant(self) -> bool:
        return self._poly is not None and all(sum(e) == 0 for e in self._poly)

    # evaluation
    @cached_property
    def _compiled(self):
        if not self._poly:
            return np.zeros((0, self.dim), dtype=int), np.zeros(0)
        exps = np.array(list(self._poly.keys()), dtype=int).reshape(-1, self.dim)
        coeffs = np.array(list(self._poly.values()))
        return exps, coeffs

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self._domain is not None and not self._domain(x):
            raise gr.DomainError(f"point {x.tolist()} is outside the field's domain")
        if self._poly is None:
            return float(self._value(x))
        exps, coeffs = self._compiled
        if not len(coeffs):
            return 0.0
        return float(coeffs @ np.prod(x[None, :] ** exps, axis=1))

    __call__ = value

    def partial(self, x, alpha: Sequence[int]) -> float:
        alpha = tuple(alpha)
        if not any(alpha):
            return self.value(x)
        if self._poly is None:
            if self._partial is None or sum(alpha) > self._order:
                raise gr.DerivativeOrderError(
                    f"derivative of order {sum(alpha)} requested, field supplies {self._order or 0}")
            return float(self._partial(np.asarray(x, dtype=float), alpha))
        return self.derivative(alpha).value(x)

    def derivative(self, alpha: Sequence[int]) -> ScalarField:
        out = self
        for i, a in enumerate(alpha):
            for _ in range(a):
                out = out.diff(i)
        return out

    def diff(self, i: int) -> ScalarField:
        if self._poly is None:
            if self._partial is None or self._order < 1:
                raise gr.DerivativeOrderError("oracle field has no derivative oracle")
            unit = tuple(1 if j == i else 0 for j in range(self.dim))
            part = self._partial
            return ScalarField.from_oracle(
                self.dim,
                lambda x: part(x, unit),
                lambda x, a: part(x, tuple(u + v for u, v in zip(a, unit))),
                self._order - 1, self._domain)
        out = {}
        for e, c in self._poly.items():
            if e[i]:
                ne = list(e)
                ne[i] -= 1
                out[tuple(ne)] = out.get(tuple(ne), 0.0) + c * e[i]
        return ScalarField(self.dim, out)

    def super_value(self, args: np.ndarray) -> np.ndarray:
        """Value at even Grassmann arguments of shape ``(n, 2**k)``."""
        args = np.asarray(args, dtype=float)
        if self._poly is not None:
            return poly_super_eval(*self._compiled, args)
        if not self.in_domain(args[:, 0]):
            raise gr.DomainError("body point outside the field's domain")
        return gr.taylor_eval(self.value, self.partial, args, self._order if self._partial else 0)

    # arithmetic
    def _coerce(self, other) -> ScalarField:
        if isinstance(other, ScalarField):
            if other.dim != self.dim:
                raise DimensionError(f"dimensions differ: {self.dim} vs {other.dim}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return ScalarField.constant(self.dim, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self._poly is not None and other._poly is not None:
            out = dict(self._poly)
            for e, c in other._poly.items():
                out[e] = out.get(e, 0.0) + c
            return ScalarField(self.dim, out)
        return _oracle_sum(self, other, 1.0)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self._poly is not None and other._poly is not None:
            return self + (-other)
        return _oracle_sum(self, other, -1.0)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            if self._poly is not None:
                return ScalarField(self.dim, {e: c * float(other) for e, c in self._poly.items()})
            other = ScalarField.constant(self.dim, float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self._poly is not None and other._poly is not None:
            out: dict = {}
            for e1, c1 in self._poly.items():
                for e2, c2 in other._poly.items():
                    e = tuple(a + b for a, b in zip(e1, e2))
                    out[e] = out.get(e, 0.0) + c1 * c2
            return ScalarField(self.dim, out)
        return _oracle_product(self, other)

    __rmul__ = __mul__

    def max_abs_diff(self, other: ScalarField) -> float:
        """Largest coefficient discrepancy between two polynomial fields."""
        d = (self - other).poly
        return max((abs(c) for c in d.values()), default=0.0)

    def __repr__(self):
        if self._poly is None:
            return f"ScalarField(dim={self.dim}, oracle, order={self._order})"
        if not self._poly:
            return "0"
        names = "xyzuvw" if self.dim <= 6 else None
        parts = []
        for e, c in self._poly.items():
            mono = "".join(
                (names[i] if names else f"x{i}") + (f"^{p}" if p > 1 else "")
                for i, p in enumerate(e) if p)
            parts.append(f"{c:g}{'*' + mono if mono else ''}")
        return " + ".join(parts)

    # serialization
    def to_json(self) -> list[dict]:
        return [{"exp": list(e), "c": c} for e, c in self.poly.items()]

    @classmethod
    def from_json(cls, dim: int, data: Sequence[Mapping]) -> ScalarField:
        return cls(dim, {tuple(d["exp"]): float(d["c"]) for d in data})


def _oracle_sum(f: ScalarField, g: ScalarField, sign: float) -> ScalarField:
    orders = [h.derivative_order for h in (f, g)]
    order = min(o for o in orders if o is not None) if any(o is not None for o in orders) else 0
    return ScalarField.from_oracle(
        f.dim, lambda x: f.value(x) + sign * g.value(x),
        lambda x, a: f.partial(x, a) + sign * g.partial(x, a), order)


def _oracle_product(f: ScalarField, g: ScalarField) -> ScalarField:
    orders = [h.derivative_order for h in (f, g)]
    order = min(o for o in orders if o is not None)

    def partial(x, alpha):
        total = 0.0
        for beta in itertools.product(*(range(a + 1) for a in alpha)):
            rest = tuple(a - b for a, b in zip(alpha, beta))
            binom = math.prod(math.comb(a, b) for a, b in zip(alpha, beta))
            total += binom * f.partial(x, beta) * g.partial(x, rest)
        return total

    return ScalarField.from_oracle(f.dim, lambda x: f.value(x) * g.value(x), partial, order)


def poly_super_eval(exps: np.ndarray, coeffs: np.ndarray, args: np.ndarray) -> np.ndarray:
    """Evaluate ``sum_t coeffs[t] * prod_i args_i**exps[t, i]`` in the Grassmann algebra.

    ``coeffs`` may carry trailing axes (matrix-valued polynomials); the result
    has shape ``coeffs.shape[1:] + (2**k,)``.
    """
    size = args.shape[-1]
    if not len(coeffs):
        return np.zeros(coeffs.shape[1:] + (size,))
    if size == 1:
        mono = np.prod(args[None, :, 0] ** exps, axis=1)[:, None]
    else:
        top = int(exps.max(initial=0))
        pw = np.zeros((args.shape[0], top + 1, size))
        pw[:, 0, 0] = 1.0
        for p in range(1, top + 1):
            pw[:, p] = gr.gmul(pw[:, p - 1], args)
        mono = pw[0, exps[:, 0]]
        for i in range(1, args.shape[0]):
            mono = gr.gmul(mono, pw[i, exps[:, i]])
    return np.tensordot(coeffs, mono, axes=(0, 0)) if coeffs.ndim > 1 else coeffs @ mono


# -- vector fields ---------------------------------------------------------


class VectorField:
    """Vector field ``sum X^i d_i`` on R^n."""

    def __init__(self, components: Sequence[ScalarField]):
        components = tuple(components)
        if not components:
            raise DimensionError("vector field needs at least one component")
        n = components[0].dim
        if len(components) != n or any(c.dim != n for c in components):
            raise DimensionError("component count must equal the dimension")
        self.components = components
        self.dim = n

    @classmethod
    def from_polys(cls, dim: int, polys: Sequence[Mapping]) -> VectorField:
        return cls([ScalarField(dim, p) for p in polys])

    @classmethod
    def coordinate(cls, dim: int, i: int) -> VectorField:
        return cls([ScalarField.constant(dim, 1.0 if j == i else 0.0) for j in range(dim)])

    @classmethod
    def zero(cls, dim: int) -> VectorField:
        return cls([ScalarField.zero(dim) for _ in range(dim)])

    @property
    def is_polynomial(self) -> bool:
        return all(c.is_polynomial for c in self.components)

    def __getitem__(self, i: int) -> ScalarField:
        return self.components[i]

    @cached_property
    def _compiled(self):
        exps = sorted({e for c in self.components for e in c.poly})
        index = {e: t for t, e in enumerate(exps)}
        coeffs = np.zeros((len(exps), self.dim))
        for i, c in enumerate(self.components):
            for e, v in c.poly.items():
                coeffs[index[e], i] = v
        jac_fields = [[c.diff(j) for j in range(self.dim)] for c in self.components]
        return np.array(exps, dtype=int).reshape(-1, self.dim), coeffs, jac_fields

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.is_polynomial:
            return np.array([c.value(x) for c in self.components])
        exps, coeffs, _ = self._compiled
        if not len(exps):
            return np.zeros(self.dim)
        return np.prod(x[None, :] ** exps, axis=1) @ coeffs

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.is_polynomial:
            return np.array([[c.partial(x, tuple(int(k == j) for k in range(self.dim)))
                              for j in range(self.dim)] for c in self.components])
        _, _, jac = self._compiled
        return np.array([[f.value(x) for f in row] for row in jac])

    def super_value(self, args: np.ndarray) -> np.ndarray:
        """Components at even Grassmann arguments, shape ``(n, 2**k)``."""
        if not self.is_polynomial:
            return np.stack([c.super_value(args) for c in self.components])
        exps, coeffs, _ = self._compiled
        return poly_super_eval(exps, coeffs, np.asarray(args, dtype=float))

    def apply(self, f: ScalarField) -> ScalarField:
        """Directional derivative ``X(f)``."""
        out = ScalarField.zero(self.dim)
        for i, c in enumerate(self.components):
            out = out + c * f.diff(i)
        return out

    def bracket(self, other: VectorField) -> VectorField:
        return VectorField([self.apply(other[i]) - other.apply(self[i]) for i in range(self.dim)])

    def scaled(self, f: ScalarField | float) -> VectorField:
        return VectorField([f * c if isinstance(f, ScalarField) else c * f for c in self.components])

    def __add__(self, other: VectorField) -> VectorField:
        return VectorField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: VectorField) -> VectorField:
        return VectorField([a - b for a, b in zip(self.components, other.components)])

    def __neg__(self):
        return self.scaled(-1.0)

    def __repr__(self):
        return "VectorField(" + ", ".join(repr(c) for c in self.components) + ")"

    def to_json(self) -> dict:
        return {"dim": self.dim, "components": [c.to_json() for c in self.components]}

    @classmethod
    def from_json(cls, data: Mapping) -> VectorField:
        n = int(data["dim"])
        return cls([ScalarField.from_json(n, c) for c in data["components"]])


# -- differential forms ----------------------------------------------------


class DifferentialForm:
    """Element of Omega*(R^n) = C^inf(Pi T R^n).

    ``terms`` maps strictly increasing index tuples to coefficient fields; the
    empty tuple is the 0-form part.
    """

    def __init__(self, dim: int, terms: Mapping[tuple, ScalarField] | None = None):
        self.dim = dim
        clean: dict[tuple, ScalarField] = {}
        for idx, f in (terms or {}).items():
            idx = tuple(int(i) for i in idx)
            if any(b <= a for a, b in zip(idx, idx[1:])):
                raise ValueError(f"index tuple {idx} must be strictly increasing")
            if idx and (idx[0] < 0 or idx[-1] >= dim):
                raise DimensionError(f"index tuple {idx} out of range for dimension {dim}")
            if f.dim != dim:
                raise DimensionError("coefficient dimension mismatch")
            if f.is_zero():
                continue
            clean[idx] = clean[idx] + f if idx in clean else f
        self.terms = {k: clean[k] for k in sorted(clean, key=lambda t: (len(t), t))
                      if not clean[k].is_zero()}

    # construction
    @classmethod
    def zero(cls, dim: int) -> DifferentialForm:
        return cls(dim, {})

    @classmethod
    def function(cls, f: ScalarField | float, dim: int | None = None) -> DifferentialForm:
        if not isinstance(f, ScalarField):
            f = ScalarField.constant(dim, float(f))
        return cls(f.dim, {(): f})

    @classmethod
    def dx(cls, dim: int, *indices: int) -> DifferentialForm:
        """``dx^{i1} ^ dx^{i2} ^ ...`` in the given order."""
        out = cls.function(ScalarField.constant(dim, 1.0))
        for i in indices:
            out = out.wedge(cls(dim, {(i,): ScalarField.constant(dim, 1.0)}))
        return out

    @classmethod
    def from_polys(cls, dim: int, terms: Mapping[tuple, Mapping]) -> DifferentialForm:
        return cls(dim, {idx: ScalarField(dim, p) for idx, p in terms.items()})

    # structure
    def degrees(self) -> set[int]:
        return {len(k) for k in self.terms}

    @property
    def parity(self) -> int | None:
        """Degree mod 2 for homogeneous-parity forms (zero counts as even)."""
        ps = {d % 2 for d in self.degrees()}
        if len(ps) > 1:
            return None
        return ps.pop() if ps else 0

    def parity_part(self, p: int) -> DifferentialForm:
        return DifferentialForm(self.dim, {k: f for k, f in self.terms.items() if len(k) % 2 == p})

    def degree_part(self, d: int) -> DifferentialForm:
        return DifferentialForm(self.dim, {k: f for k, f in self.terms.items() if len(k) == d})

    def function_part(self) -> ScalarField:
        return self.terms.get((), ScalarField.zero(self.dim))

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_polynomial(self) -> bool:
        return all(f.is_polynomial for f in self.terms.values())

    def coefficient(self, idx: tuple) -> ScalarField:
        return self.terms.get(tuple(idx), ScalarField.zero(self.dim))

    # arithmetic
    def _check(self, other: DifferentialForm):
        if not isinstance(other, DifferentialForm):
            raise TypeError(f"expected DifferentialForm, got {type(other).__name__}")
        if other.dim != self.dim:
            raise DimensionError(f"dimensions differ: {self.dim} vs {other.dim}")

    def __add__(self, other: DifferentialForm) -> DifferentialForm:
        self._check(other)
        out = dict(self.terms)
        for k, f in other.terms.items():
            out[k] = out[k] + f if k in out else f
        return DifferentialForm(self.dim, out)

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other: DifferentialForm) -> DifferentialForm:
        return self + (-other)

    def scale(self, f: ScalarField | float) -> DifferentialForm:
        return DifferentialForm(self.dim, {k: f * c if isinstance(f, ScalarField) else c * f
                                           for k, c in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, DifferentialForm):
            return self.wedge(other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def wedge(self, other: DifferentialForm) -> DifferentialForm:
        self._check(other)
        out: dict[tuple, ScalarField] = {}
        for i1, f1 in self.terms.items():
            m1 = _mask(i1)
            for i2, f2 in other.terms.items():
                m2 = _mask(i2)
                if m1 & m2:
                    continue
                idx = _indices(m1 | m2)
                term = f1 * f2 * gr.merge_sign(m1, m2)
                out[idx] = out[idx] + term if idx in out else term
        return DifferentialForm(self.dim, out)

    # calculus
    def partial(self, i: int) -> DifferentialForm:
        """Coefficientwise ``d/dx^i``, i.e. the Lie derivative along ``d_i``."""
        return DifferentialForm(self.dim, {k: f.diff(i) for k, f in self.terms.items()})

    def odd_partial(self, i: int) -> DifferentialForm:
        """Left derivative with respect to ``dx^i``: contraction with ``d_i``."""
        out = {}
        for idx, f in self.terms.items():
            if i in idx:
                pos = idx.index(i)
                rest = idx[:pos] + idx[pos + 1:]
                out[rest] = f * (-1.0 if pos % 2 else 1.0)
        return DifferentialForm(self.dim, out)

    def evaluate(self, x) -> dict[tuple, float]:
        return {k: f.value(x) for k, f in self.terms.items()}

    def super_value(self, x_s: np.ndarray, xi_s: np.ndarray) -> np.ndarray:
        """Value at an S-point of Pi T R^n.

        ``x_s`` (even) and ``xi_s`` (odd) have shape ``(n, 2**k)``; each
        ``dx^i`` is replaced by ``xi_s[i]``.
        """
        size = np.asarray(x_s).shape[-1]
        out = np.zeros(size)
        for idx, f in self.terms.items():
            val = f.super_value(x_s)
            mono = gr.scalar(1.0, gr.generators_of(size))
            for i in idx:
                mono = gr.gmul(mono, xi_s[i])
            out = out + gr.gmul(val, mono)
        return out

    def max_abs_diff(self, other: DifferentialForm) -> float:
        diff = self - other
        return max((f.max_abs_diff(ScalarField.zero(self.dim)) for f in diff.terms.values()),
                   default=0.0)

    def allclose(self, other: DifferentialForm, tol: float = 1e-12) -> bool:
        return self.max_abs_diff(other) <= tol

    def max_abs_diff_at(self, other: DifferentialForm, points) -> float:
        """Pointwise discrepancy; works for oracle coefficients too."""
        self._check(other)
        keys = set(self.terms) | set(other.terms)
        worst = 0.0
        for x in points:
            for k in keys:
                worst = max(worst, abs(self.coefficient(k).value(x) - other.coefficient(k).value(x)))
        return worst

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for idx, f in self.terms.items():
            basis = "^".join(f"d{'xyzuvw'[i] if self.dim <= 6 else 'x' + str(i)}" for i in idx)
            parts.append(f"({f!r}){basis}" if basis else f"({f!r})")
        return " + ".join(parts)

    def to_json(self) -> dict:
        return {"dim": self.dim,
                "terms": [{"indices": list(k), "poly": f.to_json()} for k, f in self.terms.items()]}

    @classmethod
    def from_json(cls, data: Mapping) -> DifferentialForm:
        n = int(data["dim"])
        terms: dict = {}
        for t in data["terms"]:
            idx = tuple(t["indices"])
            sorted_idx = tuple(sorted(idx))
            if len(set(idx)) != len(idx):
                continue
            sign = 1.0
            m = 0
            for i in idx:
                sign *= gr.merge_sign(m, 1 << i)
                m |= 1 << i
            f = ScalarField.from_json(n, t["poly"]) * sign
            terms[sorted_idx] = terms[sorted_idx] + f if sorted_idx in terms else f
        return cls(n, terms)


def wedge(omega: DifferentialForm, eta: DifferentialForm) -> DifferentialForm:
    return omega.wedge(eta)


def exterior_d(omega: DifferentialForm) -> DifferentialForm:
    out = DifferentialForm.zero(omega.dim)
    for j in range(omega.dim):
        out = out + DifferentialForm.dx(omega.dim, j).wedge(omega.partial(j))
    return out


def contract(X: VectorField, omega: DifferentialForm) -> DifferentialForm:
    """Interior product ``iota_X``: an odd derivation lowering degree by one."""
    if X.dim != omega.dim:
        raise DimensionError("vector field and form live on different spaces")
    out = DifferentialForm.zero(omega.dim)
    for i in range(X.dim):
        if not X[i].is_zero():
            out = out + omega.odd_partial(i).scale(X[i])
    return out


def lie_derivative(X: VectorField, omega: DifferentialForm) -> DifferentialForm:
    """``L_X`` as the even derivation with ``L_X f = X(f)`` and ``L_X dx^i = d(X^i)``."""
    if X.dim != omega.dim:
        raise DimensionError("vector field and form live on different spaces")
    n = omega.dim
    out = DifferentialForm.zero(n)
    for idx, f in omega.terms.items():
        out = out + DifferentialForm(n, {idx: X.apply(f)})
        for pos, i in enumerate(idx):
            piece = DifferentialForm.function(f)
            for q, j in enumerate(idx):
                factor = exterior_d(DifferentialForm.function(X[i])) if q == pos \
                    else DifferentialForm.dx(n, j)
                piece = piece.wedge(factor)
            out = out + piece
    return out


# -- derivations of the form algebra ----------------------------------------


class PiTDerivation:
    """Vector field on Pi T R^n in coordinate normal form.

    Acts on forms as ``V(w) = sum_i a_i ^ d_{x^i} w + sum_i b_i ^ iota_{d_i} w``.
    An even derivation has even ``a_i`` and odd ``b_i``; an odd one the
    reverse.
    """

    def __init__(self, a: Sequence[DifferentialForm], b: Sequence[DifferentialForm],
                 parity: int | None = None):
        a = tuple(a)
        b = tuple(b)
        if len(a) != len(b) or not a:
            raise DimensionError("need n coefficient forms for each coordinate family")
        n = a[0].dim
        if len(a) != n or any(f.dim != n for f in a + b):
            raise DimensionError("coefficient count must equal the dimension")
        self.dim = n
        self.a = a
        self.b = b
        found = set()
        for f in a:
            if f.parity is None:
                raise gr.ParityError("L-coefficient of mixed parity")
            if not f.is_zero():
                found.add(f.parity)
        for f in b:
            if f.parity is None:
                raise gr.ParityError("iota-coefficient of mixed parity")
            if not f.is_zero():
                found.add(1 - f.parity)
        if len(found) > 1:
            raise gr.ParityError("coefficients imply both parities")
        if parity is None:
            parity = found.pop() if found else 0
        elif found and found != {parity}:
            raise gr.ParityError(f"coefficients inconsistent with declared parity {parity}")
        self.parity = parity

    # standard derivations
    @classmethod
    def zero(cls, n: int, parity: int = 0) -> PiTDerivation:
        z = [DifferentialForm.zero(n)] * n
        return cls(z, z, parity)

    @classmethod
    def lie(cls, X: VectorField) -> PiTDerivation:
        n = X.dim
        a = [DifferentialForm.function(X[i]) for i in range(n)]
        b = [exterior_d(DifferentialForm.function(X[i])) for i in range(n)]
        return cls(a, b, 0)

    @classmethod
    def contraction(cls, X: VectorField) -> PiTDerivation:
        n = X.dim
        return cls([DifferentialForm.zero(n)] * n,
                   [DifferentialForm.function(X[i]) for i in range(n)], 1)

    @classmethod
    def exterior_d(cls, n: int) -> PiTDerivation:
        return cls([DifferentialForm.dx(n, i) for i in range(n)], [DifferentialForm.zero(n)] * n, 1)

    @classmethod
    def from_combination(cls, n: int, lie_terms: Iterable = (), iota_terms: Iterable = (),
                         d_coeff: DifferentialForm | None = None) -> PiTDerivation:
        """Normalize ``sum w_i L_{X_i} + sum h_j iota_{Y_j} + c d``."""
        out = None
        for w, X in lie_terms:
            out = _acc(out, cls.lie(X).scaled(w))
        for h, Y in iota_terms:
            out = _acc(out, cls.contraction(Y).scaled(h))
        if d_coeff is not None:
            out = _acc(out, cls.exterior_d(n).scaled(d_coeff))
        return out if out is not None else cls.zero(n)

    # action
    def __call__(self, omega: DifferentialForm) -> DifferentialForm:
        return apply_derivation(self, omega)

    def scaled(self, w: DifferentialForm | ScalarField | float) -> PiTDerivation:
        """Left multiple ``w * V``."""
        if not isinstance(w, DifferentialForm):
            w = DifferentialForm.function(w if isinstance(w, ScalarField)
                                          else ScalarField.constant(self.dim, float(w)))
        if w.parity is None:
            raise gr.ParityError("coefficient form must have homogeneous parity")
        return PiTDerivation([w.wedge(f) for f in self.a], [w.wedge(f) for f in self.b],
                             (self.parity + w.parity) % 2)

    def __add__(self, other: PiTDerivation) -> PiTDerivation:
        if other.dim != self.dim:
            raise DimensionError("derivations on different spaces")
        if other.parity != self.parity and not (self.is_zero() or other.is_zero()):
            raise gr.ParityError("cannot add derivations of different parity")
        parity = other.parity if self.is_zero() else self.parity
        return PiTDerivation([x + y for x, y in zip(self.a, other.a)],
                             [x + y for x, y in zip(self.b, other.b)], parity)

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def is_zero(self) -> bool:
        return all(f.is_zero() for f in self.a + self.b)

    def max_abs_diff(self, other: PiTDerivation) -> float:
        return max(x.max_abs_diff(y) for x, y in zip(self.a + self.b, other.a + other.b))

    def allclose(self, other: PiTDerivation, tol: float = 1e-12) -> bool:
        return self.max_abs_diff(other) <= tol

    def square(self) -> PiTDerivation:
        """``V^2 = [V, V] / 2`` for odd ``V``."""
        if self.parity != 1:
            raise gr.ParityError("square is only a derivation for odd V")
        half = graded_bracket(self, self).scaled(0.5)
        return half

    def as_lie(self) -> VectorField | None:
        """The vector field ``Z`` with ``self == L_Z``, if there is one."""
        if self.parity != 0:
            return None
        if any(f.degrees() - {0} for f in self.a):
            return None
        Z = VectorField([f.function_part() for f in self.a])
        return Z if PiTDerivation.lie(Z).allclose(self) else None

    def as_contraction(self) -> VectorField | None:
        if self.parity != 1 or any(not f.is_zero() for f in self.a):
            return None
        if any(f.degrees() - {0} for f in self.b):
            return None
        return VectorField([f.function_part() for f in self.b])

    def kind(self) -> str:
        """Type label in terms of even/odd coefficients times L/iota families."""
        lie_coeff = {f.parity for f in self.a if not f.is_zero()}
        iota_coeff = {f.parity for f in self.b if not f.is_zero()}
        labels = []
        if self.parity == 0:
            if lie_coeff:
                labels.append("e·ē")
            if iota_coeff:
                labels.append("o·ō")
        else:
            if iota_coeff:
                labels.append("e·ō")
            if lie_coeff:
                labels.append("o·ē")
        return "+".join(labels) or "0"

    def __repr__(self):
        parts = []
        for i, f in enumerate(self.a):
            if not f.is_zero():
                parts.append(f"[{f!r}]L{i}")
        for i, f in enumerate(self.b):
            if not f.is_zero():
                parts.append(f"[{f!r}]ι{i}")
        kind = "even" if self.parity == 0 else "odd"
        return f"PiTDerivation[{kind}](" + (" + ".join(parts) or "0") + ")"

    def to_json(self) -> dict:
        return {"dim": self.dim, "parity": self.parity,
                "a": [f.to_json() for f in self.a], "b": [f.to_json() for f in self.b]}

    @classmethod
    def from_json(cls, data: Mapping) -> PiTDerivation:
        return cls([DifferentialForm.from_json(f) for f in data["a"]],
                   [DifferentialForm.from_json(f) for f in data["b"]], data.get("parity"))


def _acc(acc, v):
    return v if acc is None else acc + v


def apply_derivation(V: PiTDerivation, omega: DifferentialForm) -> DifferentialForm:
    out = DifferentialForm.zero(V.dim)
    for i in range(V.dim):
        if not V.a[i].is_zero():
            out = out + V.a[i].wedge(omega.partial(i))
        if not V.b[i].is_zero():
            out = out + V.b[i].wedge(omega.odd_partial(i))
    return out


def graded_bracket(V: PiTDerivation, W: PiTDerivation) -> PiTDerivation:
    """``[V, W] = VW - (-1)^{|V||W|} WV``, computed on coordinates."""
    sign = -1.0 if V.parity * W.parity % 2 else 1.0
    a = [V(W.a[i]) - W(V.a[i]).scale(sign) for i in range(V.dim)]
    b = [V(W.b[i]) - W(V.b[i]).scale(sign) for i in range(V.dim)]
    return PiTDerivation(a, b, (V.parity + W.parity) % 2)


def decompose_derivation(op: Callable[[DifferentialForm], DifferentialForm], n: int,
                         probes: Sequence[DifferentialForm] = (), tol: float = 1e-10,
                         parity: int | None = None) -> PiTDerivation:
    """Normal form of a derivation given as an operator on forms.

    Reads ``a_i = op(x^i)`` and ``b_i = op(dx^i)``; the operator must agree
    with that normal form on every probe form.
    """
    a = [op(DifferentialForm.function(ScalarField.coordinate(n, i))) for i in range(n)]
    b = [op(DifferentialForm.dx(n, i)) for i in range(n)]
    V = PiTDerivation(a, b, parity)
    for w in probes:
        got = op(w)
        want = V(w)
        err = got.max_abs_diff(want)
        if err > tol:
            raise LeibnizError(f"operator is not a derivation: discrepancy {err:.3g}",
                               witness=w)
    return V


# -- forms with odd parameters ---------------------------------------------


class SuperForm:
    """Element ``sum_S theta^S w_S`` of Omega*(R^n)[theta_1..theta_m].

    The theta monomials stand to the left of their form coefficients.
    """

    def __init__(self, dim: int, num_theta: int, terms: Mapping[int, DifferentialForm] | None = None):
        self.dim = dim
        self.num_theta = num_theta
        self.terms = {m: w for m, w in sorted((terms or {}).items()) if not w.is_zero()}
        for m in self.terms:
            if m >> num_theta:
                raise IndexError("theta monomial out of range")

    @classmethod
    def from_form(cls, omega: DifferentialForm, num_theta: int = 1) -> SuperForm:
        return cls(omega.dim, num_theta, {0: omega})

    @classmethod
    def theta(cls, dim: int, i: int, num_theta: int = 1) -> SuperForm:
        return cls(dim, num_theta, {1 << i: DifferentialForm.function(ScalarField.constant(dim, 1.0))})

    def coefficient(self, mask: int = 0) -> DifferentialForm:
        return self.terms.get(mask, DifferentialForm.zero(self.dim))

    def __add__(self, other: SuperForm) -> SuperForm:
        self._check(other)
        out = dict(self.terms)
        for m, w in other.terms.items():
            out[m] = out[m] + w if m in out else w
        return SuperForm(self.dim, self.num_theta, out)

    def __neg__(self):
        return SuperForm(self.dim, self.num_theta, {m: -w for m, w in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def _check(self, other):
        if other.dim != self.dim or other.num_theta != self.num_theta:
            raise DimensionError("super forms over different spaces")

    def __mul__(self, other: SuperForm) -> SuperForm:
        self._check(other)
        out: dict[int, DifferentialForm] = {}
        for m1, w1 in self.terms.items():
            for m2, w2 in other.terms.items():
                if m1 & m2:
                    continue
                sign = gr.merge_sign(m1, m2)
                # w1 moves past theta^{m2}
                for p in (0, 1):
                    piece = w1.parity_part(p)
                    if piece.is_zero():
                        continue
                    s = sign * (-1 if p and gr.popcount(m2) % 2 else 1)
                    term = piece.wedge(w2).scale(float(s))
                    m = m1 | m2
                    out[m] = out[m] + term if m in out else term
        return SuperForm(self.dim, self.num_theta, out)

    def map_forms(self, hom: Callable[[DifferentialForm], DifferentialForm]) -> SuperForm:
        """Apply a theta-linear map to every coefficient."""
        return SuperForm(self.dim, self.num_theta, {m: hom(w) for m, w in self.terms.items()})

    def substitute(self, images: Sequence[Mapping[int, float]], num_theta: int) -> SuperForm:
        """Algebra map on the theta part: ``theta_i -> sum_j c_ij theta'_j``."""
        if len(images) != self.num_theta:
            raise DimensionError("need one image per theta generator")
        k = num_theta
        img = [gr.GrassmannElement.from_terms({(j,): c for j, c in im.items()}, k) for im in images]
        out: dict[int, DifferentialForm] = {}
        for m, w in self.terms.items():
            mono = gr.GrassmannElement.constant(1.0, k)
            for i in range(self.num_theta):
                if m >> i & 1:
                    mono = mono * img[i]
            for m2, c in enumerate(mono.coeffs):
                if c != 0.0:
                    term = w.scale(float(c))
                    out[m2] = out[m2] + term if m2 in out else term
        return SuperForm(self.dim, num_theta, out)

    def max_abs_diff(self, other: SuperForm) -> float:
        self._check(other)
        keys = set(self.terms) | set(other.terms)
        return max((self.coefficient(m).max_abs_diff(other.coefficient(m)) for m in keys),
                   default=0.0)

    def max_abs_diff_at(self, other: SuperForm, points) -> float:
        keys = set(self.terms) | set(other.terms)
        return max((self.coefficient(m).max_abs_diff_at(other.coefficient(m), points) for m in keys),
                   default=0.0)

    def allclose(self, other: SuperForm, tol: float = 1e-12) -> bool:
        return self.max_abs_diff(other) <= tol

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for m, w in self.terms.items():
            th = "".join(f"θ{i + 1}" for i in range(self.num_theta) if m >> i & 1)
            parts.append(f"{th}·[{w!r}]" if th else f"[{w!r}]")
        return " + ".join(parts)


# -- canonical maps ---------------------------------------------------------


@dataclass(frozen=True)
class SuperFunction:
    """Function ``F0(t) + theta F1(t)`` on R^{1|1} with callable components."""

    f0: Callable[[float], float]
    f1: Callable[[float], float]


class CanonicalMaps:
    """Pullbacks along the standard maps between R^n, Pi T R^n and R^{1|1}."""

    @staticmethod
    def pi_star(f: ScalarField) -> DifferentialForm:
        """``pi: Pi TM -> M`` on functions: include as a 0-form."""
        return DifferentialForm.function(f)

    @staticmethod
    def i_star(omega: DifferentialForm) -> ScalarField:
        """``i: M -> Pi TM`` on functions: the degree-0 part."""
        return omega.function_part()

    @staticmethod
    def q_star(g: Callable[[float], float]) -> SuperFunction:
        """``q: R^{1|1} -> R``."""
        return SuperFunction(g, lambda t: 0.0)

    @staticmethod
    def p_star(a: float, b: float) -> SuperFunction:
        """``p: R^{1|1} -> R^{0|1}`` applied to ``a + theta b``."""
        return SuperFunction(lambda t: a, lambda t: b)

    @staticmethod
    def j_star(F: SuperFunction) -> float:
        """Restriction to the point ``(0, 0)``."""
        return F.f0(0.0)

    @staticmethod
    def diagonal_star(form: SuperForm) -> SuperForm:
        """``Delta: R^{0|1} -> R^{0|1} x R^{0|1}``: every theta becomes the same theta."""
        return form.substitute([{0: 1.0}] * form.num_theta, 1)


class FormArray:
    """Array of differential forms compiled for fast evaluation at S-points.

    Terms are grouped by their ``dx`` monomial; each group becomes one
    polynomial with tensor-valued coefficients.
    """

    def __init__(self, forms, dim: int):
        items = np.array(forms, dtype=object)
        self.shape = items.shape
        self.dim = dim
        flat = items.reshape(-1)
        groups: dict[int, dict[tuple, np.ndarray]] = {}
        self.oracle = False
        for pos, w in enumerate(flat):
            if w.dim != dim:
                raise DimensionError("form dimension mismatch")
            for idx, f in w.terms.items():
                if not f.is_polynomial:
                    self.oracle = True
                    continue
                m = _mask(idx)
                bucket = groups.setdefault(m, {})
                for e, c in f.poly.items():
                    row = bucket.setdefault(e, np.zeros(len(flat)))
                    row[pos] += c
        self._forms = flat
        self._groups = []
        for m, bucket in sorted(groups.items()):
            exps = np.array(list(bucket.keys()), dtype=int).reshape(-1, dim)
            coeffs = np.stack(list(bucket.values())).reshape((len(bucket),) + self.shape)
            self._groups.append((m, exps, coeffs))

    @property
    def max_degree(self) -> int:
        return max((gr.popcount(m) for m, _, _ in self._groups), default=0)

    def super_value(self, x_s: np.ndarray, xi_s: np.ndarray | None = None) -> np.ndarray:
        x_s = np.asarray(x_s, dtype=float)
        if self.oracle:
            flat = [w.super_value(x_s, xi_s if xi_s is not None else np.zeros_like(x_s))
                    for w in self._forms]
            return np.array(flat).reshape(self.shape + (x_s.shape[-1],))
        size = x_s.shape[-1]
        k = gr.generators_of(size)
        out = np.zeros(self.shape + (size,))
        for m, exps, coeffs in self._groups:
            if m and xi_s is None:
                continue
            val = poly_super_eval(exps, coeffs, x_s)
            if m:
                mono = gr.scalar(1.0, k)
                for i in _indices(m):
                    mono = gr.gmul(mono, xi_s[i])
                val = gr.gmul(val, mono)
            out = out + val
        return out

    def value(self, x) -> np.ndarray:
        """Function parts at a real point."""
        return self.super_value(np.asarray(x, dtype=float)[:, None])[..., 0]
