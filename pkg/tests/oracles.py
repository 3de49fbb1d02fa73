"""Independent reference implementations used only by the tests.

Grassmann products are computed on sorted generator tuples with explicit
transposition counting, and exterior calculus is done symbolically with sympy.
None of this shares code with the package.
"""
from __future__ import annotations

import itertools

import numpy as np
import sympy as sp


# -- Grassmann algebra on dicts of sorted tuples -------------------------------


def _sort_sign(seq):
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0, ()
    sign = 1
    for i in range(len(seq)):
        for j in range(len(seq) - 1 - i):
            if seq[j] > seq[j + 1]:
                seq[j], seq[j + 1] = seq[j + 1], seq[j]
                sign = -sign
    return sign, tuple(seq)


def to_dict(arr):
    arr = np.asarray(arr, dtype=float)
    k = int(np.log2(arr.shape[-1]))
    return {tuple(i for i in range(k) if m >> i & 1): float(c) for m, c in enumerate(arr) if c != 0.0}


def from_dict(d, k):
    out = np.zeros(2 ** k)
    for mono, c in d.items():
        out[sum(1 << i for i in mono)] += c
    return out


def naive_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            sign, mono = _sort_sign(ma + mb)
            if sign:
                out[mono] = out.get(mono, 0.0) + sign * ca * cb
    return out


def naive_gmul(x, y):
    k = int(np.log2(np.asarray(x).shape[-1]))
    return from_dict(naive_mul(to_dict(x), to_dict(y)), k)


def naive_left_matrix(x):
    size = len(x)
    eye = np.eye(size)
    return np.stack([naive_gmul(x, eye[j]) for j in range(size)], axis=1)


# -- symbolic differential forms ------------------------------------------------


def symbols(n):
    return sp.symbols(f"x0:{n}")


def poly_expr(field, xs):
    return sum((c * sp.prod([x ** e for x, e in zip(xs, exp)]) for exp, c in field.poly.items()), sp.Integer(0))


def form_to_sym(form):
    xs = symbols(form.dim)
    return {idx: sp.expand(poly_expr(f, xs)) for idx, f in form.terms.items()}


def _clean(d):
    return {k: sp.expand(v) for k, v in d.items() if sp.expand(v) != 0}


def sym_add(a, b, sign=1):
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + sign * v
    return _clean(out)


def sym_wedge(a, b):
    out: dict = {}
    for ia, ca in a.items():
        for ib, cb in b.items():
            sign, idx = _sort_sign(ia + ib)
            if sign:
                out[idx] = out.get(idx, 0) + sign * ca * cb
    return _clean(out)


def sym_d(a, n):
    xs = symbols(n)
    out: dict = {}
    for idx, c in a.items():
        for i in range(n):
            sign, new = _sort_sign((i,) + idx)
            if sign:
                out[new] = out.get(new, 0) + sign * sp.diff(c, xs[i])
    return _clean(out)


def sym_contract(X, a):
    """``X`` is a list of sympy components."""
    out: dict = {}
    for idx, c in a.items():
        for p, i in enumerate(idx):
            new = idx[:p] + idx[p + 1:]
            out[new] = out.get(new, 0) + (-1) ** p * X[i] * c
    return _clean(out)


def sym_lie(X, a, n):
    """Lie derivative straight from its action on ``f dx_I``, no Cartan formula."""
    xs = symbols(n)
    out: dict = {}
    for idx, c in a.items():
        out[idx] = out.get(idx, 0) + sum(X[i] * sp.diff(c, xs[i]) for i in range(n))
        for p, j in enumerate(idx):
            for i in range(n):
                sign, new = _sort_sign(idx[:p] + (i,) + idx[p + 1:])
                if sign:
                    out[new] = out.get(new, 0) + sign * c * sp.diff(X[j], xs[i])
    return _clean(out)


def field_to_sym(X):
    xs = symbols(X.dim)
    return [sp.expand(poly_expr(c, xs)) for c in X.components]


def sym_equal(a, b):
    return not sym_add(a, b, -1)


def all_index_sets(n):
    return [c for d in range(n + 1) for c in itertools.combinations(range(n), d)]
