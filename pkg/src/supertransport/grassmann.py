"""Finite Grassmann algebras over the reals.

Elements of the exterior algebra on ``k`` odd generators are stored densely as
coefficient vectors of length ``2**k``; index ``m`` is the coefficient of the
monomial whose generators are the set bits of ``m``, multiplied in ascending
order.  Most numerical code works directly on ``ndarray`` values whose last
axis is this coefficient axis (see :func:`gmul`, :func:`gmatmul`), while
:class:`GrassmannElement` and :class:`SuperNumber` are the immutable
user-facing wrappers.
"""
from __future__ import annotations

import math
from functools import lru_cache
from itertools import product
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

MAX_GENERATORS = 8


class IncompatibleAlgebraError(ValueError):
    """Operands live in Grassmann algebras with different generator counts."""


class ParityError(ValueError):
    """An element does not have the parity required by the caller."""


class DerivativeOrderError(ValueError):
    """A scalar field cannot supply the derivatives a nilpotent argument needs."""


class DomainError(ValueError):
    """Evaluation point lies outside a field's declared domain."""


def popcount(m: int) -> int:
    return bin(m).count("1")


def merge_sign(a: int, b: int) -> int:
    """Sign of reordering the monomial ``e_a e_b`` into ascending order."""
    swaps = 0
    bb = b
    while bb:
        low = bb & -bb
        j = low.bit_length() - 1
        swaps += popcount(a >> (j + 1))
        bb ^= low
    return -1 if swaps & 1 else 1


@lru_cache(maxsize=None)
def _table(k: int):
    if k < 0 or k > MAX_GENERATORS:
        raise ValueError(f"generator count must be in [0, {MAX_GENERATORS}], got {k}")
    size = 1 << k
    ia, ib = [], []
    signs = []
    for a in range(size):
        for b in range(size):
            if a & b:
                continue
            ia.append(a)
            ib.append(b)
            signs.append(merge_sign(a, b))
    ia = np.array(ia, dtype=np.intp)
    ib = np.array(ib, dtype=np.intp)
    scatter = np.zeros((len(ia), size))
    scatter[np.arange(len(ia)), ia | ib] = signs
    return ia, ib, scatter


@lru_cache(maxsize=None)
def _parity_mask(k: int) -> np.ndarray:
    return np.array([popcount(m) & 1 for m in range(1 << k)], dtype=bool)


def generators_of(size: int) -> int:
    k = size.bit_length() - 1
    if 1 << k != size:
        raise ValueError(f"coefficient axis of length {size} is not a power of two")
    return k


def gmul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Broadcasting product of Grassmann arrays (last axis = coefficients)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise IncompatibleAlgebraError(
            f"cannot multiply elements with {x.shape[-1]} and {y.shape[-1]} coefficients")
    ia, ib, scatter = _table(generators_of(x.shape[-1]))
    return (x[..., ia] * y[..., ib]) @ scatter


def gmatmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of Grassmann matrices ``(r, m, S) @ (m, c, S)``.

    ``b`` may also be a Grassmann vector of shape ``(m, S)``.
    """
    vec = b.ndim == 2
    if vec:
        b = b[:, None, :]
    if a.shape[-1] != b.shape[-1]:
        raise IncompatibleAlgebraError("matrix entries live in different algebras")
    ia, ib, scatter = _table(generators_of(a.shape[-1]))
    out = np.einsum("rmp,mcp->rcp", a[..., ia], b[..., ib]) @ scatter
    return out[:, 0, :] if vec else out


def scalar(value: float, k: int) -> np.ndarray:
    out = np.zeros(1 << k)
    out[0] = value
    return out


def embed(values, k: int) -> np.ndarray:
    """Real array -> Grassmann array with the values as bodies."""
    values = np.asarray(values, dtype=float)
    out = np.zeros(values.shape + (1 << k,))
    out[..., 0] = values
    return out


def body(x: np.ndarray) -> np.ndarray:
    return np.asarray(x)[..., 0]


def soul(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float)
    out[..., 0] = 0.0
    return out


def even_part(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    mask = _parity_mask(generators_of(x.shape[-1]))
    return np.where(mask, 0.0, x)


def odd_part(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    mask = _parity_mask(generators_of(x.shape[-1]))
    return np.where(mask, x, 0.0)


def gpow(x: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(np.asarray(x, dtype=float))
    out[..., 0] = 1.0
    for _ in range(n):
        out = gmul(out, x)
    return out


@lru_cache(maxsize=None)
def _split_index(k: int, i: int):
    bit = 1 << i
    free = np.array([m for m in range(1 << k) if not m & bit], dtype=np.intp)
    src = free | bit
    sign = np.array([merge_sign(bit, int(m)) for m in free], dtype=float)
    return free, src, sign


def drop_generator(x: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x = x0 + g_i * x1`` with ``x0, x1`` free of generator ``i``.

    The generator is pulled out to the left, so ``x1`` is the left derivative
    of ``x`` with respect to ``g_i``.
    """
    x = np.asarray(x, dtype=float)
    free, src, sign = _split_index(generators_of(x.shape[-1]), i)
    x0 = np.zeros_like(x)
    x1 = np.zeros_like(x)
    x0[..., free] = x[..., free]
    x1[..., free] = x[..., src] * sign
    return x0, x1


def with_generator(x0: np.ndarray, x1: np.ndarray, i: int) -> np.ndarray:
    """Inverse of :func:`drop_generator`: ``x0 + g_i * x1``."""
    k = generators_of(np.asarray(x0).shape[-1])
    g = np.zeros(1 << k)
    g[1 << i] = 1.0
    return np.asarray(x0, dtype=float) + gmul(g, x1)


def left_mult_matrix(x: np.ndarray) -> np.ndarray:
    """Real ``2**k x 2**k`` matrix of ``y -> x * y`` in the monomial basis."""
    x = np.asarray(x, dtype=float)
    size = x.shape[-1]
    eye = np.eye(size)
    return np.stack([gmul(x, eye[j]) for j in range(size)], axis=-1)


# -- homomorphisms --------------------------------------------------------


class GrassmannHom:
    """Algebra homomorphism ``Lambda_k -> Lambda_k'`` fixed by generator images.

    Images must be odd so that the anticommutation relations are preserved.
    Models superpoint maps ``S' -> S`` acting on functions.
    """

    def __init__(self, images: Sequence[np.ndarray], k_target: int):
        self.k_source = len(images)
        self.k_target = k_target
        imgs = []
        for g in images:
            g = np.asarray(g, dtype=float)
            if g.shape != (1 << k_target,):
                raise IncompatibleAlgebraError("generator image has the wrong size")
            if np.any(even_part(g) != 0.0):
                raise ParityError("generator images must be odd")
            imgs.append(g)
        size = 1 << self.k_source
        matrix = np.zeros((size, 1 << k_target))
        for m in range(size):
            img = scalar(1.0, k_target)
            for i in range(self.k_source):
                if m >> i & 1:
                    img = gmul(img, imgs[i])
            matrix[m] = img
        self._matrix = matrix

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self._matrix.shape[0]:
            raise IncompatibleAlgebraError("argument lives in the wrong algebra")
        return x @ self._matrix

    @classmethod
    def relabel(cls, k_source: int, k_target: int, mapping: Mapping[int, np.ndarray]):
        """Identity on generators not in ``mapping`` (requires ``k_target >= k_source``)."""
        images = []
        for i in range(k_source):
            if i in mapping:
                images.append(np.asarray(mapping[i], dtype=float))
            else:
                g = np.zeros(1 << k_target)
                g[1 << i] = 1.0
                images.append(g)
        return cls(images, k_target)


# -- immutable wrappers ----------------------------------------------------


class GrassmannElement:
    """Immutable element of the Grassmann algebra on ``k`` generators."""

    __slots__ = ("_c",)

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim != 1:
            raise ValueError("coefficients must be one-dimensional")
        k = generators_of(c.shape[0])
        if k > MAX_GENERATORS:
            raise ValueError(f"at most {MAX_GENERATORS} generators are supported")
        c.setflags(write=False)
        self._c = c

    # construction
    @classmethod
    def zero(cls, k: int) -> GrassmannElement:
        return cls(np.zeros(1 << k))

    @classmethod
    def constant(cls, value: float, k: int) -> GrassmannElement:
        return cls(scalar(value, k))

    @classmethod
    def generator(cls, i: int, k: int) -> GrassmannElement:
        if not 0 <= i < k:
            raise IndexError(f"generator {i} out of range for k={k}")
        c = np.zeros(1 << k)
        c[1 << i] = 1.0
        return cls(c)

    @classmethod
    def from_terms(cls, terms: Mapping[Iterable[int], float] | Iterable, k: int) -> GrassmannElement:
        """Build from ``{subset: coeff}``; subsets in any order pick up the reordering sign."""
        items = terms.items() if isinstance(terms, Mapping) else terms
        c = np.zeros(1 << k)
        for subset, coeff in items:
            subset = list(subset)
            if len(set(subset)) != len(subset):
                continue
            sign = 1
            m = 0
            for j in subset:
                if not 0 <= j < k:
                    raise IndexError(f"generator {j} out of range for k={k}")
                sign *= merge_sign(m, 1 << j)
                m |= 1 << j
            c[m] += sign * coeff
        return cls(c)

    # accessors
    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def num_generators(self) -> int:
        return generators_of(self._c.shape[0])

    @property
    def body(self) -> float:
        return float(self._c[0])

    @property
    def soul(self) -> GrassmannElement:
        return GrassmannElement(soul(self._c))

    def terms(self) -> dict[tuple[int, ...], float]:
        k = self.num_generators
        return {
            tuple(i for i in range(k) if m >> i & 1): float(v)
            for m, v in enumerate(self._c) if v != 0.0
        }

    def parity(self) -> int | None:
        """0 or 1 for homogeneous elements (zero counts as even), else None."""
        ev, od = self.parity_decompose()
        if od.is_zero():
            return 0
        if ev.is_zero():
            return 1
        return None

    def parity_decompose(self) -> tuple[GrassmannElement, GrassmannElement]:
        return GrassmannElement(even_part(self._c)), GrassmannElement(odd_part(self._c))

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self._c) <= tol))

    def allclose(self, other: GrassmannElement, tol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.max(np.abs(self._c - other._c), initial=0.0) <= tol)

    # arithmetic
    def _check(self, other: GrassmannElement):
        if self._c.shape != other._c.shape:
            raise IncompatibleAlgebraError(
                f"generator counts differ: {self.num_generators} vs {other.num_generators}")

    def _coerce(self, other) -> GrassmannElement:
        if isinstance(other, GrassmannElement):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return GrassmannElement.constant(float(other), self.num_generators)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return GrassmannElement(self._c + other._c)

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement(-self._c)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return GrassmannElement(self._c - other._c)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return GrassmannElement(self._c * float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return GrassmannElement(gmul(self._c, other._c))

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return GrassmannElement(self._c * float(other))
        return NotImplemented

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not supported")
        return GrassmannElement(gpow(self._c, n))

    def __eq__(self, other):
        if not isinstance(other, GrassmannElement):
            return NotImplemented
        return self._c.shape == other._c.shape and bool(np.array_equal(self._c, other._c))

    def __hash__(self):
        return hash(self._c.tobytes())

    def __repr__(self):
        parts = []
        for subset, v in sorted(self.terms().items(), key=lambda kv: (len(kv[0]), kv[0])):
            mono = "".join(f"θ{i + 1}" for i in subset)
            parts.append(f"{v:g}{mono}" if mono else f"{v:g}")
        return "GrassmannElement(" + (" + ".join(parts) or "0") + ")"

    # serialization
    def to_json(self) -> list[dict]:
        return [{"subset": list(s), "coeff": v} for s, v in self.terms().items()]

    @classmethod
    def from_json(cls, data: Sequence[Mapping], k: int) -> GrassmannElement:
        return cls.from_terms([(d["subset"], float(d["coeff"])) for d in data], k)


def parity_decompose(a: GrassmannElement) -> tuple[GrassmannElement, GrassmannElement]:
    return a.parity_decompose()


def gr_mul(a: GrassmannElement, b: GrassmannElement) -> GrassmannElement:
    if a.num_generators != b.num_generators:
        raise IncompatibleAlgebraError(
            f"generator counts differ: {a.num_generators} vs {b.num_generators}")
    return a * b


class SuperNumber(GrassmannElement):
    """Grassmann element of declared parity, used for coordinates."""

    __slots__ = ("_parity",)

    def __init__(self, coeffs, parity: int):
        super().__init__(coeffs)
        if parity not in (0, 1):
            raise ValueError("parity must be 0 (even) or 1 (odd)")
        stray = odd_part(self._c) if parity == 0 else even_part(self._c)
        if np.any(stray != 0.0):
            kind = "even" if parity == 0 else "odd"
            raise ParityError(f"element declared {kind} has components of the other parity")
        self._parity = parity

    @classmethod
    def even(cls, value, k: int | None = None) -> SuperNumber:
        if isinstance(value, GrassmannElement):
            return cls(value.coeffs, 0)
        return cls(scalar(float(value), k or 0), 0)

    @classmethod
    def odd(cls, value: GrassmannElement) -> SuperNumber:
        return cls(value.coeffs, 1)

    @property
    def declared_parity(self) -> int:
        return self._parity

    def __repr__(self):
        kind = "even" if self._parity == 0 else "odd"
        return f"SuperNumber[{kind}]" + super().__repr__()[len("GrassmannElement"):]


def nilpotency_order(souls: Sequence[np.ndarray]) -> int:
    """Largest total order of a non-vanishing product of the given souls."""
    if not souls:
        return 0
    k = generators_of(np.asarray(souls[0]).shape[-1])
    mindeg = None
    for s in souls:
        nz = np.nonzero(np.asarray(s))[0]
        if nz.size:
            d = min(popcount(int(m)) for m in nz)
            mindeg = d if mindeg is None else min(mindeg, d)
    if mindeg is None:
        return 0
    return k // mindeg


def taylor_eval(
    value_at: Callable[[np.ndarray], float],
    partial_at: Callable[[np.ndarray, tuple[int, ...]], float],
    args: np.ndarray,
    max_order: int | None = None,
) -> np.ndarray:
    """Evaluate a smooth function at even Grassmann arguments by Taylor expansion.

    ``args`` has shape ``(n, 2**k)``.  The expansion about the body point is
    truncated where the nilpotent souls force it to vanish.  ``partial_at``
    returns the partial derivative for a multi-index; ``max_order`` is the
    highest order it supports (``None`` means unlimited).
    """
    args = np.asarray(args, dtype=float)
    n, size = args.shape
    x0 = args[:, 0]
    souls = [soul(args[i]) for i in range(n)]
    order = nilpotency_order(souls)
    if max_order is not None and order > max_order:
        raise DerivativeOrderError(
            f"nilpotent argument needs derivatives up to order {order}, "
            f"field supplies only {max_order}")
    out = scalar(value_at(x0), generators_of(size))
    if order == 0:
        return out
    # powers[i][j] = soul_i ** j
    powers = [[scalar(1.0, generators_of(size))] for _ in range(n)]
    for i in range(n):
        for _ in range(order):
            powers[i].append(gmul(powers[i][-1], souls[i]))
    for alpha in product(range(order + 1), repeat=n):
        tot = sum(alpha)
        if tot == 0 or tot > order:
            continue
        mono = scalar(1.0, generators_of(size))
        skip = False
        for i, a in enumerate(alpha):
            if a:
                if not np.any(powers[i][a]):
                    skip = True
                    break
                mono = gmul(mono, powers[i][a])
        if skip or not np.any(mono):
            continue
        fact = math.prod(math.factorial(a) for a in alpha)
        out = out + partial_at(x0, alpha) / fact * mono
    return out


def super_eval(f, args: Sequence[GrassmannElement]) -> SuperNumber:
    """Evaluate a scalar field at a vector of even super numbers.

    ``f`` must provide ``value(x)``, ``partial(x, alpha)`` and
    ``derivative_order`` (``None`` for unlimited), and optionally
    ``in_domain(x)``; :class:`~supertransport.manifold_forms.ScalarField`
    satisfies this.
    """
    arr = np.stack([np.asarray(a.coeffs if isinstance(a, GrassmannElement) else a, dtype=float)
                    for a in args])
    if np.any(odd_part(arr) != 0.0):
        raise ParityError("super_eval arguments must be even")
    check = getattr(f, "in_domain", None)
    if check is not None and not check(arr[:, 0]):
        raise DomainError(f"body point {arr[:, 0].tolist()} is outside the field's domain")
    out = taylor_eval(f.value, f.partial, arr, f.derivative_order)
    return SuperNumber(out, 0)
