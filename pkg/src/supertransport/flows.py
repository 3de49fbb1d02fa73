"""Flows of vector fields on R^n and on its odd tangent bundle.

Even fields are integrated numerically (RK4 with step halving); odd fields
whose square vanishes act by the exact formula ``w -> w + theta * X(w)``.
Odd fields with nonzero square generate an action of R^{1|1} given by
``e^{-tX^2}(1 + theta X)``, which satisfies ``D_-(a*w) = a*(Xw)`` for
``D_- = d/dtheta - theta d/dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import grassmann as gr
from .integrate import DEFAULT_TOL, DivergenceError, Trajectory, solve
from .manifold_forms import (DifferentialForm, FormArray, PiTDerivation, ScalarField, SuperForm,
                             VectorField, contract, graded_bracket)

__all__ = [
    "DivergenceError", "UnsupportedGeneratorError", "PreconditionError", "NonPositiveSpeedError",
    "FlowMap", "even_flow", "even_flow_trajectory", "trotter_flow", "trotter_table", "TrotterReport",
    "trotter_group_law_residual", "trotter_derivative_residual", "OddFlowAction", "odd_flow",
    "compose_odd_flows", "reparam_flow_even", "trajectory_equivalence_check", "TrajectoryReport",
    "flow_f_iota", "FIotaFlow", "super_flow", "SuperFlow", "pullback_along_even_flow",
    "verify_odd_reparam", "OddReparam", "OddReparamReport", "pit_flow", "pit_odd_flow",
    "pit_flow_trajectory",
]


class UnsupportedGeneratorError(ValueError):
    pass


class PreconditionError(ValueError):
    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class NonPositiveSpeedError(ValueError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


# -- even flows on R^n -------------------------------------------------------


def _as_state(x0):
    """Point as an ndarray, remembering whether it came as GrassmannElements."""
    if len(x0) and isinstance(x0[0], gr.GrassmannElement):
        return np.stack([np.asarray(a.coeffs) for a in x0]), True
    arr = np.asarray(x0, dtype=float)
    if arr.ndim == 2 and np.any(gr.odd_part(arr) != 0.0):
        raise gr.ParityError("flow initial data must be even")
    return arr, False


def _restore(y, wrapped):
    if wrapped:
        return [gr.SuperNumber(row, 0) for row in y]
    return y


def _field_rhs(X: VectorField) -> Callable:
    def rhs(t, y):
        return X(y) if y.ndim == 1 else X.super_value(y)
    return rhs


def even_flow_trajectory(X: VectorField, x0, t: float, tol: float = DEFAULT_TOL) -> Trajectory:
    y0, _ = _as_state(x0)
    return solve(_field_rhs(X), y0, 0.0, t, tol)


def even_flow(X: VectorField, t: float, x0, tol: float = DEFAULT_TOL):
    """Flow of ``X`` for time ``t`` from a real point or an even S-point ``(n, 2**k)``."""
    y0, wrapped = _as_state(x0)
    if y0.shape[0] != X.dim:
        raise ValueError(f"point has {y0.shape[0]} coordinates, field has {X.dim}")
    if t == 0:
        return _restore(y0.copy(), wrapped)
    return _restore(solve(_field_rhs(X), y0, 0.0, t, tol).final, wrapped)


@dataclass(frozen=True)
class FlowMap:
    """Flow of an even vector field on R^n."""

    generator: VectorField
    tol: float = DEFAULT_TOL

    def evaluate(self, t: float, x) -> np.ndarray:
        return even_flow(self.generator, t, x, self.tol)

    def pullback(self, t: float, omega: DifferentialForm) -> DifferentialForm:
        return pullback_along_even_flow(self.generator, t, omega, self.tol)

    def group_law_residual(self, t: float, s: float, x) -> float:
        lhs = self.evaluate(t, self.evaluate(s, x))
        return float(np.max(np.abs(lhs - self.evaluate(t + s, x))))


# -- Trotter products --------------------------------------------------------


def trotter_flow(X: VectorField, Y: VectorField, t: float, x0, n: int,
                 tol: float = DEFAULT_TOL) -> np.ndarray:
    """``(a_{t/n} o b_{t/n})^n (x0)``: each factor runs Y's flow, then X's."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    h = t / n
    x, wrapped = _as_state(x0)
    fx, fy = _field_rhs(X), _field_rhs(Y)
    for _ in range(n):
        x = solve(fy, x, 0.0, h, tol, initial_steps=1).final
        x = solve(fx, x, 0.0, h, tol, initial_steps=1).final
    return _restore(x, wrapped)


@dataclass
class TrotterRow:
    n: int
    error: float
    observed_order: float


@dataclass
class TrotterReport:
    rows: list[TrotterRow]
    fitted_order: float
    oracle: np.ndarray

    def error_at(self, n: int) -> float:
        return next(r.error for r in self.rows if r.n == n)


def trotter_table(X: VectorField, Y: VectorField, t: float, x0, levels: int = 10,
                  tol: float = DEFAULT_TOL, oracle_tol: float = 1e-12) -> TrotterReport:
    """Errors of Trotter products for ``n = 2**j``, ``j = 0..levels``.

    The reference is the flow of ``X + Y``.  ``observed_order`` compares each
    row with the previous one; ``fitted_order`` is the least-squares slope of
    ``-log(error)`` against ``log(n)``.
    """
    x0 = np.asarray(x0, dtype=float)
    oracle = even_flow(X + Y, t, x0, oracle_tol)
    rows = []
    prev = None
    for j in range(levels + 1):
        n = 2 ** j
        err = float(np.linalg.norm(trotter_flow(X, Y, t, x0, n, tol) - oracle))
        order = math.log2(prev / err) if prev and err > 0 else float("nan")
        rows.append(TrotterRow(n, err, order))
        prev = err
    usable = [(r.n, r.error) for r in rows if r.error > 1e-14]
    if len(usable) >= 2:
        ns, errs = np.array(usable).T
        fitted = -float(np.polyfit(np.log(ns), np.log(errs), 1)[0])
    else:
        fitted = float("inf")
    return TrotterReport(rows, fitted, oracle)


def trotter_group_law_residual(X: VectorField, Y: VectorField, t: float, s: float, x0, n: int,
                               tol: float = DEFAULT_TOL) -> dict[str, float]:
    """Group-law residuals for the limit flow and for Trotter products of equal step.

    ``limit`` compares ``g_t(g_s(x))`` with ``g_{t+s}(x)`` for the flow ``g``
    of ``X + Y``.  ``discrete`` checks that ``n`` plus ``m`` factors of step
    ``t/n`` equal ``n + m`` factors, where ``m = s n / t`` must be an integer.
    """
    x0 = np.asarray(x0, dtype=float)
    Z = X + Y
    limit = float(np.max(np.abs(even_flow(Z, t, even_flow(Z, s, x0, tol), tol)
                                - even_flow(Z, t + s, x0, tol))))
    m = s * n / t
    if abs(m - round(m)) > 1e-9 or round(m) < 1:
        raise ValueError("s must be a positive multiple of the Trotter step t/n")
    m = int(round(m))
    lhs = trotter_flow(X, Y, s, trotter_flow(X, Y, t, x0, n, tol), m, tol)
    discrete = float(np.max(np.abs(lhs - trotter_flow(X, Y, t + s, x0, n + m, tol))))
    return {"limit": limit, "discrete": discrete}


def trotter_derivative_residual(X: VectorField, Y: VectorField, x0, n: int, h: float = 1e-4,
                                tol: float = DEFAULT_TOL) -> float:
    """Central difference of the Trotter product at ``t = 0`` minus ``(X + Y)(x0)``."""
    x0 = np.asarray(x0, dtype=float)
    fd = (trotter_flow(X, Y, h, x0, n, tol) - trotter_flow(X, Y, -h, x0, n, tol)) / (2 * h)
    return float(np.max(np.abs(fd - (X + Y)(x0))))


# -- odd flows with square zero ---------------------------------------------


def _act_with_theta(form: SuperForm, V: PiTDerivation, i: int) -> SuperForm:
    """Extend ``w -> w + theta_i V(w)`` theta-linearly from the left."""
    bit = 1 << i
    out = dict(form.terms)
    for m, w in form.terms.items():
        if m & bit:
            continue
        Vw = V(w)
        if Vw.is_zero():
            continue
        term = Vw.scale(float(gr.merge_sign(m, bit)))
        out[m | bit] = out[m | bit] + term if (m | bit) in out else term
    return SuperForm(form.dim, form.num_theta, out)


class OddFlowAction:
    """Pullback ``Omega* -> Omega*[theta]`` of the R^{0|1}-action of a square-zero odd field."""

    def __init__(self, generator: PiTDerivation, act: Callable | None = None):
        if generator.parity != 1:
            raise gr.ParityError("odd flow needs an odd generator")
        if act is None and not generator.square().is_zero():
            raise UnsupportedGeneratorError(
                "generator squares to a nonzero even field; use super_flow")
        self.generator = generator
        self.dim = generator.dim
        self._act = act

    def __call__(self, omega: DifferentialForm) -> SuperForm:
        if self._act is not None:
            return self._act(omega)
        return _act_with_theta(SuperForm.from_form(omega), self.generator, 0)

    def apply(self, form: SuperForm, theta: int) -> SuperForm:
        """Act on the form coefficients, introducing ``theta_theta``."""
        if self._act is not None:
            raise UnsupportedGeneratorError("composite actions only act on plain forms")
        return _act_with_theta(form, self.generator, theta)

    def max_abs_diff(self, other: OddFlowAction, probes: Sequence[DifferentialForm]) -> float:
        return max((self(w).max_abs_diff(other(w)) for w in probes), default=0.0)


def odd_flow(X: VectorField | PiTDerivation) -> OddFlowAction:
    """Exact flow of ``iota_X`` (or of any odd derivation squaring to zero)."""
    gen = PiTDerivation.contraction(X) if isinstance(X, VectorField) else X
    return OddFlowAction(gen)


def compose_odd_flows(a_x: OddFlowAction, a_y: OddFlowAction) -> OddFlowAction:
    """Composite through the diagonal: Y's action with theta_1, then X's with theta_2, then theta_1 = theta_2."""
    if not graded_bracket(a_x.generator, a_y.generator).is_zero():
        raise UnsupportedGeneratorError("odd generators with nonzero bracket have no closed-form sum flow")

    def act(omega):
        two = SuperForm.from_form(omega, 2)
        return SuperForm.substitute(a_x.apply(a_y.apply(two, 0), 1), [{0: 1.0}, {0: 1.0}], 1)

    return OddFlowAction(a_x.generator + a_y.generator, act)


# -- reparametrized flows ----------------------------------------------------


def reparam_flow_even(f: ScalarField, X: VectorField, t: float, x0, tol: float = DEFAULT_TOL,
                      return_time: bool = False):
    """Flow of ``fX`` as ``a(s(t), x0)`` where ``s' = f(a(s, x0))``, ``s(0) = 0``.

    ``x0`` may be an even S-point; positivity is checked on the body.
    """
    y0, wrapped = _as_state(x0)
    n = X.dim
    grassmann = y0.ndim == 2

    def speed(y):
        if grassmann:
            v = f.super_value(y)
            if v[0] <= 0.0:
                raise NonPositiveSpeedError(f"f = {v[0]:.6g} <= 0 along the trajectory", y[:, 0])
            return v
        v = f.value(y)
        if v <= 0.0:
            raise NonPositiveSpeedError(f"f = {v:.6g} <= 0 along the trajectory", y)
        return v

    rhs_x = _field_rhs(X)

    def rhs(_, z):
        y = z[1:]
        v = speed(y)
        if grassmann:
            return np.concatenate([v[None], gr.gmul(v, rhs_x(0, y))])
        return np.concatenate([[v], v * rhs_x(0, y)])

    z0 = np.concatenate([np.zeros((1,) + y0.shape[1:]), y0])
    speed(y0)
    s = solve(rhs, z0, 0.0, t, tol).final[0]
    if grassmann:
        # s is an even super number; a(s, x0) by Taylor expansion in the soul of s
        out = _flow_at_super_time(X, s, y0, tol)
    else:
        out = even_flow(X, float(s), y0, tol)
    out = _restore(out, wrapped)
    return (out, s) if return_time else out


def _flow_at_super_time(X: VectorField, s: np.ndarray, y0: np.ndarray, tol: float) -> np.ndarray:
    """``a(s, y0)`` for an even super number ``s``: expand in powers of its soul."""
    body = float(s[0])
    ds = gr.soul(s)
    base = even_flow(X, body, y0, tol)
    out = base.copy()
    power = gr.scalar(1.0, gr.generators_of(len(s)))
    # d^k/ds^k of a(s) is X applied k times to the coordinates, evaluated along a
    comps = [ScalarField.coordinate(X.dim, i) for i in range(X.dim)]
    k = 1
    while True:
        power = gr.gmul(power, ds)
        if not np.any(power):
            return out
        comps = [X.apply(c) for c in comps]
        term = np.stack([c.super_value(base) for c in comps])
        out = out + gr.gmul(power, term) / math.factorial(k)
        k += 1


@dataclass
class TrajectoryReport:
    parallel: bool
    residual: float
    counterexample: np.ndarray | None = None
    times: np.ndarray | None = None
    phi: np.ndarray | None = None


def trajectory_equivalence_check(X: VectorField, Y: VectorField, samples, x0=None,
                                 horizon: float = 1.0, tol: float = 1e-8,
                                 grid: int = 21) -> TrajectoryReport:
    """Check that integral curves of ``Y`` are reparametrized integral curves of ``X``.

    ``Y = fX`` is fitted pointwise on ``samples``; a point where the fields
    are not positively parallel is returned as a counterexample.
    """
    for p in np.atleast_2d(np.asarray(samples, dtype=float)):
        xv, yv = X(p), Y(p)
        nx = float(xv @ xv)
        if nx < 1e-24:
            if np.linalg.norm(yv) > tol:
                return TrajectoryReport(False, float(np.linalg.norm(yv)), p)
            continue
        f = float(yv @ xv) / nx
        off = float(np.linalg.norm(yv - f * xv))
        if off > tol * (1 + np.linalg.norm(yv)) or f <= 0:
            return TrajectoryReport(False, max(off, -f), p)
    if x0 is None:
        x0 = np.atleast_2d(np.asarray(samples, dtype=float))[0]
    x0 = np.asarray(x0, dtype=float)

    def fitted(p):
        xv = X(p)
        return float(Y(p) @ xv) / float(xv @ xv)

    f_field = ScalarField.from_oracle(X.dim, fitted)
    times = np.linspace(0.0, horizon, grid)
    curve_y = even_flow_trajectory(Y, x0, horizon)
    residual = 0.0
    phi = np.zeros(grid)
    for j, t in enumerate(times[1:], 1):
        y_x, s = reparam_flow_even(f_field, X, t, x0, return_time=True)
        phi[j] = s
        residual = max(residual, float(np.max(np.abs(curve_y(t) - y_x))))
    monotone = bool(np.all(np.diff(phi) > 0))
    return TrajectoryReport(monotone, residual, None, times, phi)


# -- flows of f * iota_X -----------------------------------------------------


class FIotaFlow:
    """Closed-form flow of the even derivation ``f iota_X`` (``f`` an odd form).

    Mode ``Xf0`` needs ``iota_X f = 0`` and gives ``w + t f iota_X w``; mode
    ``Xf1`` needs ``iota_X f = 1`` and gives ``w + (e^t - 1) f iota_X w``.
    """

    def __init__(self, f: DifferentialForm, X: VectorField, mode: str, t: float,
                 tol: float = 1e-12):
        if f.parity != 1:
            raise gr.ParityError("f must be an odd form")
        if mode not in ("Xf0", "Xf1"):
            raise ValueError(f"unknown mode {mode!r}")
        pairing = contract(X, f)
        want = DifferentialForm.zero(f.dim) if mode == "Xf0" else \
            DifferentialForm.function(ScalarField.constant(f.dim, 1.0))
        if not pairing.allclose(want, tol):
            raise PreconditionError(f"mode {mode} needs iota_X f = {0 if mode == 'Xf0' else 1}, "
                                    f"got {pairing!r}", pairing)
        self.f, self.X, self.mode, self.t = f, X, mode, t
        self.derivation = PiTDerivation.contraction(X).scaled(f)

    @property
    def factor(self) -> float:
        return self.t if self.mode == "Xf0" else math.expm1(self.t)

    def __call__(self, omega: DifferentialForm) -> DifferentialForm:
        return omega + self.f.wedge(contract(self.X, omega)).scale(self.factor)

    def at(self, t: float) -> FIotaFlow:
        return FIotaFlow(self.f, self.X, self.mode, t)

    def flow_property_residual(self, omega: DifferentialForm, h: float = 1e-5) -> float:
        """``d/dt a_t* w`` (central difference) against ``a_t*(f iota_X w)``."""
        fd = (self.at(self.t + h)(omega) - self.at(self.t - h)(omega)).scale(1 / (2 * h))
        return fd.max_abs_diff(self(self.derivation(omega)))


def flow_f_iota(f: DifferentialForm, X: VectorField, mode: str, t: float) -> FIotaFlow:
    return FIotaFlow(f, X, mode, t)


# -- R^{1|1}-actions of odd fields -------------------------------------------


class SuperFlow:
    """``(t, theta, w) -> e^{-tX^2}(1 + theta X) w`` for an odd derivation ``X``.

    ``e^{-tX^2}`` is summed exactly when ``X^2`` acts nilpotently on the input
    and otherwise, when ``X^2 = L_Z``, computed as pullback along the flow of
    ``Z`` for time ``-t``.
    """

    def __init__(self, X: PiTDerivation, tol: float = DEFAULT_TOL, max_terms: int = 64):
        if X.parity != 1:
            raise gr.ParityError("super_flow needs an odd generator")
        self.X = X
        self.tol = tol
        self.max_terms = max_terms
        self.square = X.square()
        self.lie_field = self.square.as_lie()
        if self.square.is_zero():
            self.regime = "square-zero"
        elif self.lie_field is not None:
            self.regime = "lie"
        else:
            self.regime = "nilpotent"

    def _series(self, t: float, omega: DifferentialForm) -> DifferentialForm | None:
        out = omega
        term = omega
        for k in range(1, self.max_terms + 1):
            term = self.square(term).scale(-t / k)
            if term.is_zero():
                return out
            out = out + term
        return None

    def evolve(self, t: float, omega: DifferentialForm) -> DifferentialForm:
        """``e^{-tX^2} w``."""
        if self.regime == "square-zero" or t == 0:
            return omega
        if omega.is_polynomial:
            out = self._series(t, omega)
            if out is not None:
                return out
        if self.lie_field is not None:
            return pullback_along_even_flow(self.lie_field, -t, omega, self.tol)
        raise UnsupportedGeneratorError(
            f"X^2 of type {self.square.kind()} is neither nilpotent on this form nor a Lie derivative")

    def __call__(self, t: float, omega: DifferentialForm) -> SuperForm:
        return SuperForm(omega.dim, 1, {0: self.evolve(t, omega), 1: self.evolve(t, self.X(omega))})

    def flow_equation_residual(self, t: float, omega: DifferentialForm, h: float = 1e-4,
                               points=None) -> float:
        """Residual of ``D_-(a*w) = a*(Xw)`` with a central difference in ``t``."""
        dt = (self.evolve(t + h, omega) - self.evolve(t - h, omega)).scale(1 / (2 * h))
        lhs = -dt
        rhs = self.evolve(t, self.X(self.X(omega)))
        if points is not None or not (lhs.is_polynomial and rhs.is_polynomial):
            pts = points if points is not None else _default_points(omega.dim)
            return lhs.max_abs_diff_at(rhs, pts)
        return lhs.max_abs_diff(rhs)


def _default_points(n: int):
    rng = np.random.default_rng(0)
    return rng.uniform(-1, 1, size=(5, n))


def super_flow(X: PiTDerivation, tol: float = DEFAULT_TOL) -> SuperFlow:
    return SuperFlow(X, tol)


# -- pullback of forms along even flows ---------------------------------------


def pullback_along_even_flow(Z: VectorField, t: float, omega: DifferentialForm,
                             tol: float = DEFAULT_TOL) -> DifferentialForm:
    """``(a_t)* w`` for the flow ``a`` of ``Z``.

    Each point is pushed along the flow together with its Jacobian; the
    coefficient of ``dx^J`` is ``sum_I w_I(a_t(x)) det(Da_t[I, J])``.
    """
    if t == 0:
        return omega
    n = Z.dim

    def rhs(_, state):
        y = state[:n]
        jac = state[n:].reshape(n, n)
        return np.concatenate([Z(y), (Z.jacobian(y) @ jac).ravel()])

    @lru_cache(maxsize=4096)
    def flow_and_jacobian(key):
        state = solve(rhs, np.concatenate([np.array(key), np.eye(n).ravel()]), 0.0, t, tol).final
        return state[:n], state[n:].reshape(n, n)

    by_degree: dict[int, list] = {}
    for idx, f in omega.terms.items():
        by_degree.setdefault(len(idx), []).append((idx, f))

    def coefficient(J, items):
        def value(x):
            y, jac = flow_and_jacobian(tuple(float(v) for v in x))
            total = 0.0
            for I, f in items:
                det = np.linalg.det(jac[np.ix_(I, J)]) if J else 1.0
                total += f.value(y) * det
            return total
        return ScalarField.from_oracle(n, value)

    terms = {}
    for d, items in by_degree.items():
        for J in _increasing(n, d):
            terms[J] = coefficient(J, items)
    return DifferentialForm(n, terms)


def _increasing(n: int, d: int):
    from itertools import combinations
    return list(combinations(range(n), d))


# -- odd reparametrization ---------------------------------------------------


@dataclass(frozen=True)
class OddReparam:
    """``(t, theta) -> (b(t), g(t) theta)``."""

    b: Callable[[float], float]
    bdot: Callable[[float], float]
    g: Callable[[float], float]

    @classmethod
    def scaling(cls, c: float) -> OddReparam:
        return cls(lambda t: c * c * t, lambda t: c * c, lambda t: c)


@dataclass
class OddReparamReport:
    distribution_residual: float
    flow_residual: float
    offending_probe: tuple | None = None

    @property
    def residual(self) -> float:
        return max(self.distribution_residual, self.flow_residual)


def verify_odd_reparam(c: float, X: PiTDerivation, phi: OddReparam | None = None,
                       probes: Sequence[DifferentialForm] = (), times: Sequence[float] = (0.0, 0.3, 0.7),
                       h: float = 1e-4, tol: float = 1e-10) -> OddReparamReport:
    """Check that ``b = a o (phi x 1) o (1 x Delta)`` is the flow of ``cX``.

    ``a`` is the R^{1|1}-action of ``X``.  Two things are verified: ``phi``
    maps ``D`` to a multiple of itself (``D(phi*t) = c phi*theta`` and
    ``D(phi*theta) = c``), and ``D_-(b*w) = b*(cXw)`` on the probes.
    """
    if c <= 0:
        raise NonPositiveSpeedError("the coefficient must be positive")
    phi = phi or OddReparam.scaling(c)
    flow = SuperFlow(X)
    dist = 0.0
    worst = None
    for t in times:
        r1 = abs(phi.bdot(t) - c * phi.g(t))
        r2 = abs(phi.g(t) - c)
        if max(r1, r2) > dist:
            dist = max(r1, r2)
            worst = ("D(phi*t) = c phi*theta" if r1 >= r2 else "D(phi*theta) = c", t)
    flow_res = 0.0
    for w in probes:
        Xw = X(w)
        for t in times:
            b = phi.b(t)
            # theta^0 part: g(t) E_b Xw  versus  c E_b Xw
            r0 = abs(phi.g(t) - c) * _size(flow.evolve(b, Xw))
            # theta^1 part: -d/dt E_{b(t)} w  versus  g(t) c E_b X^2 w
            dt = (flow.evolve(phi.b(t + h), w) - flow.evolve(phi.b(t - h), w)).scale(1 / (2 * h))
            r1 = (-dt).max_abs_diff_at(flow.evolve(b, X(Xw)).scale(phi.g(t) * c),
                                        _default_points(w.dim)) if not dt.is_polynomial else \
                (-dt).max_abs_diff(flow.evolve(b, X(Xw)).scale(phi.g(t) * c))
            if max(r0, r1) > flow_res:
                flow_res = max(r0, r1)
                if flow_res > dist:
                    worst = ("flow equation", t, w)
    return OddReparamReport(dist, flow_res, worst if max(dist, flow_res) > tol else None)


def _size(w: DifferentialForm) -> float:
    if not w.is_polynomial:
        return w.max_abs_diff_at(DifferentialForm.zero(w.dim), _default_points(w.dim))
    return w.max_abs_diff(DifferentialForm.zero(w.dim))


# -- flows on Pi T R^n at S-points --------------------------------------------


def _coefficients(V: PiTDerivation) -> FormArray:
    return FormArray(list(V.a) + list(V.b), V.dim)


def pit_flow(V: PiTDerivation, t: float, x: np.ndarray, xi: np.ndarray,
             tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Flow of an even derivation on Pi T R^n through the S-point ``(x, xi)``.

    ``x`` (even) and ``xi`` (odd) have shape ``(n, 2**k)``.
    """
    if V.parity != 0:
        raise gr.ParityError("pit_flow integrates even generators; use pit_odd_flow")
    n = V.dim
    coeff = _coefficients(V)

    def rhs(_, y):
        return coeff.super_value(y[:n], y[n:])

    y = solve(rhs, np.concatenate([x, xi]), 0.0, t, tol).final if t else np.concatenate([x, xi])
    return y[:n], y[n:]


def pit_odd_flow(X: PiTDerivation, t: float, x: np.ndarray, xi: np.ndarray,
                 tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Superpath ``c0(t) + theta c1(t)`` of the R^{1|1}-action of an odd ``X`` through ``(x, xi)``.

    ``c0`` follows the even field ``-X^2``; ``c1`` is ``X`` applied to the
    coordinates, evaluated along ``c0``.  Both are returned with the ``2n``
    coordinates ``(x, xi)`` stacked.
    """
    if X.parity != 1:
        raise gr.ParityError("pit_odd_flow needs an odd generator")
    sq = X.square()
    if sq.is_zero():
        c0 = np.concatenate([x, xi])
    else:
        c0 = np.concatenate(pit_flow(-sq, t, x, xi, tol))
    n = X.dim
    c1 = _coefficients(X).super_value(c0[:n], c0[n:])
    return c0, c1


def pit_flow_trajectory(V: PiTDerivation, x: np.ndarray, xi: np.ndarray, horizon: float,
                        tol: float = DEFAULT_TOL) -> tuple[Trajectory, FormArray]:
    """Dense trajectory of an even derivation's flow, with its coefficient array for velocities."""
    if V.parity != 0:
        raise gr.ParityError("pit_flow_trajectory integrates even generators")
    n = V.dim
    coeff = _coefficients(V)

    def rhs(_, y):
        return coeff.super_value(y[:n], y[n:])

    return solve(rhs, np.concatenate([x, xi]), 0.0, horizon, tol), coeff
