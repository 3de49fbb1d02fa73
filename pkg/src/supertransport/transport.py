"""Parallel transport along paths and superpaths, and recovery of connections from transport.

Coordinates of a (super)path take values in a Grassmann algebra Lambda_k
(the superpoint S = R^{0|k}); arrays have shape ``(m, 2**k)``.  A superpath
is ``c0(t) + theta c1(t)``; during transport theta is adjoined as an extra
generator in front of the S generators.

Along a superpath the transport equation ``D s + B s = 0`` with
``D = d/dtheta + theta d/dt`` and ``B = <c*A, Dc> = B0 + theta B1`` splits into

    s2 = -B0 s1                      (theta^0 part)
    s1' = -(B1 + B0 B0) s1           (theta^1 part)

for ``s = s1 + theta s2``.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from . import grassmann as gr
from .bundles import GradedBundle, GradedConnection, PiTConnection, PiTSection, is_odd_trivial, pullback_connection
from .flows import UnsupportedGeneratorError, pit_flow_trajectory
from .integrate import DEFAULT_TOL, Trajectory, solve
from .manifold_forms import DifferentialForm, FormArray, PiTDerivation, ScalarField, VectorField


class ConsistencyError(ValueError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class InvalidReparametrizationError(ValueError):
    pass


# -- theta bookkeeping --------------------------------------------------------


def with_theta(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """``x0 + theta x1`` in Lambda_{k+1}, theta being generator 0."""
    x0 = np.asarray(x0, dtype=float)
    out = np.zeros(x0.shape[:-1] + (2 * x0.shape[-1],))
    out[..., 0::2] = x0
    out[..., 1::2] = x1
    return out


def split_theta(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`with_theta`."""
    return x[..., 0::2], x[..., 1::2]


# -- paths --------------------------------------------------------------------


@dataclass(frozen=True)
class Path:
    """C^1 curve ``[t0, t1] -> (Lambda_k)^m`` given by position and velocity."""

    position: Callable[[float], np.ndarray]
    velocity: Callable[[float], np.ndarray]
    t0: float = 0.0
    t1: float = 1.0

    @classmethod
    def polynomial(cls, coeffs, horizon=(0.0, 1.0), k: int = 0) -> Path:
        """``c(t) = sum_j coeffs[j] t**j``; coefficients real ``(d+1, m)`` or Grassmann ``(d+1, m, 2**k)``."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 2:
            coeffs = gr.embed(coeffs, k)
        powers = np.arange(len(coeffs))
        dcoeffs = coeffs[1:] * powers[1:, None, None]

        def position(t):
            return np.tensordot(float(t) ** powers, coeffs, axes=(0, 0))

        def velocity(t):
            if not len(dcoeffs):
                return np.zeros(coeffs.shape[1:])
            return np.tensordot(float(t) ** powers[:-1], dcoeffs, axes=(0, 0))

        return cls(position, velocity, float(horizon[0]), float(horizon[1]))

    @classmethod
    def linear(cls, x0, v, horizon=(0.0, 1.0), k: int = 0) -> Path:
        return cls.polynomial([x0, v], horizon, k)

    @classmethod
    def constant(cls, x0, horizon=(0.0, 1.0), k: int = 0) -> Path:
        return cls.polynomial([x0], horizon, k)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, velocity_field: Callable) -> Path:
        return cls(traj, lambda t: velocity_field(traj(t)), traj.t0, traj.t1)

    @property
    def size(self) -> int:
        return self.position(self.t0).shape[-1]

    @property
    def coordinate_count(self) -> int:
        return self.position(self.t0).shape[0]

    def restrict(self, t0: float, t1: float) -> Path:
        return replace(self, t0=t0, t1=t1)

    def reparametrize(self, rep: Reparametrization) -> Path:
        rep.check_against(self.t0, self.t1)
        return Path(lambda u: self.position(rep.b(u)),
                    lambda u: self.velocity(rep.b(u)) * rep.bdot(u), rep.u0, rep.u1)

    def map(self, hom: gr.GrassmannHom) -> Path:
        return Path(lambda t: hom(self.position(t)), lambda t: hom(self.velocity(t)), self.t0, self.t1)

    def select(self, rows: slice | Sequence[int], pad: int = 0) -> Path:
        """Keep some coordinates and append ``pad`` zero coordinates."""
        def cut(arr):
            arr = arr[rows]
            return np.concatenate([arr, np.zeros((pad,) + arr.shape[1:])]) if pad else arr
        return Path(lambda t: cut(self.position(t)), lambda t: cut(self.velocity(t)), self.t0, self.t1)


@dataclass(frozen=True)
class SuperPath:
    """``c(t, theta) = c0(t) + theta c1(t)``; ``c1`` has the opposite parity to ``c0``."""

    body: Path
    odd: Callable[[float], np.ndarray]

    @classmethod
    def lift(cls, path: Path) -> SuperPath:
        """``c o (q x 1)``: the superpath that ignores theta."""
        zero = np.zeros_like(path.position(path.t0))
        return cls(path, lambda t: zero)

    @classmethod
    def polynomial(cls, c0_coeffs, c1_coeffs, horizon=(0.0, 1.0), k: int = 0) -> SuperPath:
        body = Path.polynomial(c0_coeffs, horizon, k)
        odd = Path.polynomial(c1_coeffs, horizon, k)
        return cls(body, odd.position)

    @property
    def t0(self) -> float:
        return self.body.t0

    @property
    def t1(self) -> float:
        return self.body.t1

    @property
    def size(self) -> int:
        return self.body.size

    def restrict(self, t0: float, t1: float) -> SuperPath:
        return SuperPath(self.body.restrict(t0, t1), self.odd)

    def reparametrize(self, rep: Reparametrization) -> SuperPath:
        """Precompose with ``(u, theta) -> (b(u), g(u) theta)``."""
        rep.check_against(self.t0, self.t1)
        return SuperPath(self.body.reparametrize(rep), lambda u: rep.g(u) * self.odd(rep.b(u)))

    def map(self, hom: gr.GrassmannHom) -> SuperPath:
        return SuperPath(self.body.map(hom), lambda t: hom(self.odd(t)))

    def select(self, rows, pad: int = 0) -> SuperPath:
        cut = self.body.select(rows, pad)
        odd_cut = Path(self.odd, self.odd, self.t0, self.t1).select(rows, pad).position
        return SuperPath(cut, odd_cut)


@dataclass(frozen=True)
class Reparametrization:
    """``u -> b(u)`` on ``[u0, u1]``, acting on theta by ``g(u)``, ``g = sqrt(b')`` by default."""

    b: Callable[[float], float]
    bdot: Callable[[float], float]
    u0: float
    u1: float
    theta_scale: Callable[[float], float] | None = None

    @classmethod
    def identity(cls, t0: float, t1: float) -> Reparametrization:
        return cls(lambda u: u, lambda u: 1.0, t0, t1)

    def g(self, u: float) -> float:
        return self.theta_scale(u) if self.theta_scale else math.sqrt(self.bdot(u))

    def validate(self, samples: int = 33) -> float:
        """Raise unless ``b' > 0``; return the D-distribution residual ``max |g^2 - b'|``."""
        worst = 0.0
        for u in np.linspace(self.u0, self.u1, samples):
            if self.bdot(u) <= 0:
                raise InvalidReparametrizationError(f"b'({u:.6g}) = {self.bdot(u):.6g} is not positive")
            worst = max(worst, abs(self.g(u) ** 2 - self.bdot(u)))
        return worst

    def check_against(self, t0: float, t1: float):
        if abs(self.b(self.u0) - t0) > 1e-12 or abs(self.b(self.u1) - t1) > 1e-12:
            raise InvalidReparametrizationError("reparametrization does not map onto the path's horizon")
        if self.validate() > 1e-12:
            raise InvalidReparametrizationError("theta scaling does not preserve the D-distribution")


# -- D operator on superfunctions of (t, theta) --------------------------------


@dataclass(frozen=True)
class TimeSuperFunction:
    """``F(t, theta) = f0(t) + theta f1(t)`` with polynomial components."""

    f0: Polynomial
    f1: Polynomial

    def D(self) -> TimeSuperFunction:
        """``D = d/dtheta + theta d/dt``."""
        return TimeSuperFunction(self.f1, self.f0.deriv())

    def dt(self) -> TimeSuperFunction:
        return TimeSuperFunction(self.f0.deriv(), self.f1.deriv())

    def max_abs_diff(self, other: TimeSuperFunction) -> float:
        def gap(p, q):
            d = (p - q).coef
            return float(np.max(np.abs(d))) if len(d) else 0.0
        return max(gap(self.f0, other.f0), gap(self.f1, other.f1))


def d_squared_residual(F: TimeSuperFunction) -> float:
    """``D^2 F - dF/dt``; zero identically."""
    return F.D().D().max_abs_diff(F.dt())


# -- connection coefficients along curves ---------------------------------------


class _MCoefficients:
    def __init__(self, nabla: GradedConnection):
        self.nabla = nabla
        self.coordinate_count = nabla.dim
        self.rank = nabla.rank

    def matrices(self, y: np.ndarray) -> np.ndarray:
        return self.nabla.matrices(y)


class _PiTCoefficients:
    def __init__(self, conn: PiTConnection):
        self.conn = conn
        self.n = conn.dim
        self.coordinate_count = 2 * conn.dim
        self.rank = conn.rank

    def matrices(self, y: np.ndarray) -> np.ndarray:
        return self.conn.coefficients.super_value(y[:self.n], y[self.n:])


# -- parallel sections ------------------------------------------------------------


class ParallelSection:
    """``s = s1 + theta s2`` along a (super)path, with ``s1`` dense in ``t``."""

    def __init__(self, trajectory: Trajectory, theta_part: Callable | None, vector: bool,
                 initial: np.ndarray):
        self._traj = trajectory
        self._theta_part = theta_part
        self._vector = vector
        self.initial = initial

    @property
    def t0(self) -> float:
        return self._traj.t0

    @property
    def t1(self) -> float:
        return self._traj.t1

    def _shape(self, arr):
        return arr[:, 0, :] if self._vector else arr

    def s1(self, t: float) -> np.ndarray:
        return self._shape(self._traj(t))

    def s2(self, t: float) -> np.ndarray:
        if self._theta_part is None:
            return np.zeros_like(self.s1(t))
        return self._shape(self._theta_part(t, self._traj(t)))

    def value(self, t: float) -> np.ndarray:
        """``s1 + theta s2`` with theta as generator 0."""
        return with_theta(self.s1(t), self.s2(t))

    @property
    def endpoint(self) -> np.ndarray:
        return self.s1(self.t1)

    @property
    def error_estimate(self) -> float:
        return self._traj.error_estimate


def _prepare_initial(v0, rank: int, size: int):
    v0 = np.asarray(v0, dtype=float)
    if v0.ndim == 1:
        v0 = gr.embed(v0, gr.generators_of(size))
    if v0.shape[0] != rank:
        raise ValueError(f"initial value has {v0.shape[0]} components, bundle rank is {rank}")
    if v0.shape[-1] != size:
        raise gr.IncompatibleAlgebraError("initial value and path live in different algebras")
    vector = v0.ndim == 2
    return (v0[:, None, :] if vector else v0), vector


def _transport(coeffs, curve, v0, tol: float) -> ParallelSection:
    if isinstance(curve, SuperPath):
        return _superpath_transport(coeffs, curve, v0, tol)
    size = curve.size
    state0, vector = _prepare_initial(v0, coeffs.rank, size)

    def B(t):
        mats = coeffs.matrices(curve.position(t))
        vel = curve.velocity(t)
        return gr.gmul(vel[:, None, None, :], mats).sum(axis=0)

    def rhs(t, s):
        return -gr.gmatmul(B(t), s)

    traj = solve(rhs, state0, curve.t0, curve.t1, tol)
    return ParallelSection(traj, None, vector, np.asarray(v0, dtype=float))


def _superpath_transport(coeffs, curve: SuperPath, v0, tol: float) -> ParallelSection:
    size = curve.size
    state0, vector = _prepare_initial(v0, coeffs.rank, size)

    def split_B(t):
        c0 = curve.body.position(t)
        c1 = curve.odd(t)
        mats = coeffs.matrices(with_theta(c0, c1))
        Dc = with_theta(c1, curve.body.velocity(t))
        B = gr.gmul(Dc[:, None, None, :], mats).sum(axis=0)
        return split_theta(B)

    def rhs(t, s):
        B0, B1 = split_B(t)
        return -gr.gmatmul(B1 + gr.gmatmul(B0, B0), s)

    def theta_part(t, s1):
        return -gr.gmatmul(split_B(t)[0], s1)

    traj = solve(rhs, state0, curve.t0, curve.t1, tol)
    return ParallelSection(traj, theta_part, vector, np.asarray(v0, dtype=float))


# -- transport functors -----------------------------------------------------------


class TransportFunctor(ABC):
    """Assigns parallel sections to (super)paths and initial values.

    ``space`` is ``"M"`` (paths in R^n) or ``"PiTM"`` (paths in Pi T R^n with
    ``2n`` coordinates: ``n`` even, then ``n`` odd).
    """

    space: str = "M"
    certifies: frozenset = frozenset()

    def __init__(self, bundle: GradedBundle, tol: float = DEFAULT_TOL):
        self.bundle = bundle
        self.tol = tol

    @property
    def coordinate_count(self) -> int:
        return self.bundle.n if self.space == "M" else 2 * self.bundle.n

    @abstractmethod
    def transport(self, curve: Path | SuperPath, v0) -> ParallelSection:
        ...

    def _check_curve(self, curve):
        m = (curve.body if isinstance(curve, SuperPath) else curve).coordinate_count
        if m != self.coordinate_count:
            raise ValueError(f"curve has {m} coordinates, {self.space} needs {self.coordinate_count}")


_CONNECTION_CERTIFIES = frozenset({"gluing", "identity-on-constant", "q-naturality",
                                   "s-naturality", "reparametrization"})


class ConnectionTransport(TransportFunctor):
    """Transport of a connection on E over R^n."""

    space = "M"
    certifies = _CONNECTION_CERTIFIES

    def __init__(self, nabla: GradedConnection, tol: float = DEFAULT_TOL):
        super().__init__(nabla.bundle, tol)
        self.nabla = nabla
        self._coeffs = _MCoefficients(nabla)

    def transport(self, curve, v0) -> ParallelSection:
        self._check_curve(curve)
        return _transport(self._coeffs, curve, v0, self.tol)


class PiTConnectionTransport(TransportFunctor):
    """Transport of a connection on the pullback bundle over Pi T R^n."""

    space = "PiTM"

    def __init__(self, conn: PiTConnection, tol: float = DEFAULT_TOL):
        super().__init__(conn.bundle, tol)
        self.conn = conn
        self._coeffs = _PiTCoefficients(conn)
        self.certifies = _CONNECTION_CERTIFIES | ({"odd-trivial"} if is_odd_trivial(conn) else set())

    def transport(self, curve, v0) -> ParallelSection:
        self._check_curve(curve)
        return _transport(self._coeffs, curve, v0, self.tol)


class LiftedTransport(TransportFunctor):
    """Transport over Pi T R^n defined by transporting the projected curve ``pi o c`` in R^n."""

    space = "PiTM"

    def __init__(self, base: TransportFunctor):
        if base.space != "M":
            raise ValueError("can only lift a transport over R^n")
        super().__init__(base.bundle, base.tol)
        self.base = base
        self.certifies = base.certifies | {"odd-trivial"}

    def transport(self, curve, v0) -> ParallelSection:
        self._check_curve(curve)
        return self.base.transport(curve.select(slice(0, self.bundle.n)), v0)


class ProjectedTransport(TransportFunctor):
    """Transport over R^n defined by transporting ``i o c`` (zero odd coordinates) in Pi T R^n."""

    space = "M"

    def __init__(self, base: TransportFunctor):
        if base.space != "PiTM":
            raise ValueError("can only project a transport over Pi T R^n")
        super().__init__(base.bundle, base.tol)
        self.base = base
        self.certifies = base.certifies - {"odd-trivial"}

    def transport(self, curve, v0) -> ParallelSection:
        self._check_curve(curve)
        return self.base.transport(curve.select(slice(None), pad=self.bundle.n), v0)


def lift_transport_M_to_PiTM(T: TransportFunctor) -> LiftedTransport:
    return LiftedTransport(T)


def project_transport_PiTM_to_M(T: TransportFunctor) -> ProjectedTransport:
    return ProjectedTransport(T)


def initial_condition(point_x: np.ndarray, point_xi: np.ndarray, h: np.ndarray,
                      omega: DifferentialForm, s) -> np.ndarray:
    """``c0*(w) h s``: a form evaluated at the S-point, times ``h``, times a fiber vector."""
    w = omega.super_value(point_x, point_xi)
    scale = gr.gmul(w, np.asarray(h, dtype=float))
    return np.asarray(s, dtype=float)[:, None] * scale[None, :]


def path_transport(nabla: GradedConnection, c: Path, v0, tol: float = DEFAULT_TOL) -> ParallelSection:
    if isinstance(c, SuperPath):
        raise TypeError("use superpath_transport for superpaths")
    return ConnectionTransport(nabla, tol).transport(c, v0)


def superpath_transport(nabla: GradedConnection, c: SuperPath, v0,
                        tol: float = DEFAULT_TOL) -> ParallelSection:
    if not isinstance(c, SuperPath):
        c = SuperPath.lift(c)
    return ConnectionTransport(nabla, tol).transport(c, v0)


# -- axiom checks -------------------------------------------------------------------


def _gap(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0))


def _samples(t0, t1, count=9):
    return np.linspace(t0, t1, count)


def check_gluing(T: TransportFunctor, c, t_mid: float, v0) -> float:
    """Transport over ``[t0, t1]`` against transport over ``[t0, tm]`` continued over ``[tm, t1]``.

    Superpaths are glued at the even time ``tm``; the second leg starts from
    the first leg's ``s1(tm)``.
    """
    full = T.transport(c, v0)
    first = T.transport(c.restrict(c.t0, t_mid), v0)
    second = T.transport(c.restrict(t_mid, c.t1), first.s1(t_mid))
    res = 0.0
    for t in _samples(c.t0, t_mid):
        res = max(res, _gap(first.s1(t), full.s1(t)), _gap(first.s2(t), full.s2(t)))
    for t in _samples(t_mid, c.t1):
        res = max(res, _gap(second.s1(t), full.s1(t)), _gap(second.s2(t), full.s2(t)))
    return res


def check_identity_on_constant(T: TransportFunctor, point: np.ndarray, v0,
                               horizon=(0.0, 1.0), superpath: bool = False) -> float:
    k = gr.generators_of(np.asarray(point).shape[-1]) if np.ndim(point) == 2 else 0
    c = Path.constant(point, horizon, k)
    if superpath:
        c = SuperPath.lift(c)
    sec = T.transport(c, v0)
    v = sec.initial if sec.initial.ndim > 1 else gr.embed(sec.initial, k)
    return max(max(_gap(sec.s1(t), v), _gap(sec.s2(t), 0.0)) for t in _samples(*horizon))


def check_q_naturality(T: TransportFunctor, c: Path, v0) -> float:
    """Parallel sections along ``c o (q x 1)`` are pullbacks of those along ``c``."""
    plain = T.transport(c, v0)
    lifted = T.transport(SuperPath.lift(c), v0)
    return max(max(_gap(lifted.s1(t), plain.s1(t)), _gap(lifted.s2(t), 0.0))
               for t in _samples(c.t0, c.t1))


def check_s_naturality(T: TransportFunctor, c, hom: gr.GrassmannHom, v0) -> float:
    """Transport commutes with a superpoint map ``S' -> S`` acting on coefficients."""
    v0 = np.asarray(v0, dtype=float)
    before = T.transport(c, v0)
    after = T.transport(c.map(hom), hom(v0))
    return max(max(_gap(after.s1(t), hom(before.s1(t))), _gap(after.s2(t), hom(before.s2(t))))
               for t in _samples(c.t0, c.t1))


def check_reparam_invariance(T: TransportFunctor, c, rep: Reparametrization, v0) -> float:
    """``p(c o phi)`` against ``p(c) o phi``: ``s1' = s1(b)``, ``s2' = g s2(b)``."""
    orig = T.transport(c, v0)
    moved = T.transport(c.reparametrize(rep), v0)
    res = 0.0
    for u in _samples(rep.u0, rep.u1):
        b = rep.b(u)
        res = max(res, _gap(moved.s1(u), orig.s1(b)), _gap(moved.s2(u), rep.g(u) * orig.s2(b)))
    return res


@dataclass
class EndpointReport:
    matrix: np.ndarray
    condition: float
    is_even: bool


def endpoint_map(T: TransportFunctor, c) -> EndpointReport:
    """Holonomy matrix of a (super)path; condition number and parity block structure of its body."""
    r = T.bundle.rank
    k = gr.generators_of(c.size)
    sec = T.transport(c, gr.embed(np.eye(r), k))
    mat = sec.endpoint
    body = mat[..., 0]
    mask = T.bundle.block_mask()
    even = bool(np.all(np.abs(mat[mask]) <= 1e-12))
    return EndpointReport(mat, float(np.linalg.cond(body)), even)


# -- flows on Pi T R^n and parallel families --------------------------------------


def _generic_point(x0, n: int) -> tuple[np.ndarray, np.ndarray]:
    """S-point ``(x0, eta)`` with ``eta_i`` the generators of Lambda_n."""
    x = gr.embed(np.asarray(x0, dtype=float), n)
    xi = np.zeros((n, 1 << n))
    for i in range(n):
        xi[i, 1 << i] = 1.0
    return x, xi


def generator_path(V: PiTDerivation, x: np.ndarray, xi: np.ndarray, horizon: float,
                   tol: float = DEFAULT_TOL) -> Path | SuperPath:
    """Curve traced by the flow of a generator through the S-point ``(x, xi)``.

    Even generators give a path; odd ones give the superpath
    ``c0 + theta c1`` of their R^{1|1}-action.
    """
    n = V.dim
    if V.parity == 0:
        traj, coeff = pit_flow_trajectory(V, x, xi, horizon, tol)
        return Path.from_trajectory(traj, lambda y: coeff.super_value(y[:n], y[n:]))
    sq = V.square()
    odd_coeff = FormArray(list(V.a) + list(V.b), n)
    if sq.is_zero():
        point = np.concatenate([x, xi])
        body = Path.constant(point, (0.0, horizon), gr.generators_of(x.shape[-1]))
    else:
        traj, coeff = pit_flow_trajectory(-sq, x, xi, horizon, tol)
        body = Path.from_trajectory(traj, lambda y: coeff.super_value(y[:n], y[n:]))
    return SuperPath(body, lambda t: odd_coeff.super_value(body.position(t)[:n], body.position(t)[n:]))


@dataclass
class ParallelFamily:
    generator: PiTDerivation
    kind: str
    section: ParallelSection
    initial: np.ndarray
    times: np.ndarray

    def identity_residual(self) -> float:
        init = self.section.s1(self.section.t0)
        return max(max(_gap(self.section.s1(t), init), _gap(self.section.s2(t), 0.0))
                   for t in self.times)

    def eta_components(self) -> float:
        """Largest coefficient involving an odd-coordinate generator, over ``s1`` and ``s2``."""
        worst = 0.0
        for t in self.times:
            for part in (self.section.s1(t), self.section.s2(t)):
                worst = max(worst, float(np.max(np.abs(part[..., 1:]), initial=0.0)))
        return worst


def flow_transport(T: TransportFunctor, generator, initial, x0, horizon: float = 1.0,
                   samples: int = 9) -> ParallelFamily:
    """Parallel family along the flow of ``generator`` through ``(x0, eta)``.

    ``generator`` is a vector field (read as ``L_X``) or a homogeneous
    PiTDerivation; ``initial`` is a PiTSection (evaluated at the S-point) or a
    fiber vector.
    """
    if T.space != "PiTM":
        raise ValueError("flow_transport needs a transport over Pi T R^n")
    if isinstance(generator, VectorField):
        generator = PiTDerivation.lie(generator)
    if not isinstance(generator, PiTDerivation):
        raise UnsupportedGeneratorError(f"unsupported generator type {type(generator).__name__}")
    n = generator.dim
    x, xi = _generic_point(x0, n)
    if isinstance(initial, PiTSection):
        v0 = initial.super_value(x, xi)
    else:
        v0 = gr.embed(np.asarray(initial, dtype=float), n)
    curve = generator_path(generator, x, xi, horizon, T.tol)
    section = T.transport(curve, v0)
    return ParallelFamily(generator, generator.kind(), section, v0, np.linspace(0.0, horizon, samples))


# -- recovery of the connection ------------------------------------------------------


def _richardson(values: Sequence[np.ndarray]) -> np.ndarray:
    """Two rounds of Richardson extrapolation for central differences at h, h/2, h/4."""
    d1, d2, d3 = values
    r1 = (4 * d2 - d1) / 3
    r2 = (4 * d3 - d2) / 3
    return (16 * r2 - r1) / 15


class RecoveredConnection:
    """Connection over Pi T R^n read off a transport functor.

    The pairing with an even generator ``V`` is minus the ``t``-derivative at
    0 of transport along ``V``'s flow; with an odd generator it is minus the
    theta-coefficient of the parallel section at 0.  Values are germs at the
    S-point ``(x0, eta)``: a Lambda_n element ``sum c_J eta^J`` stands for the
    form ``sum c_J dx^J`` at ``x0``.
    """

    def __init__(self, functor: TransportFunctor, steps: Sequence[float] = (1e-2, 5e-3, 2.5e-3)):
        if functor.space != "PiTM":
            raise ValueError("recovery needs a transport over Pi T R^n")
        self.functor = functor
        self.bundle = functor.bundle
        self.steps = tuple(steps)
        self._legs: dict = {}

    @property
    def n(self) -> int:
        return self.bundle.n

    def direct(self, V: PiTDerivation, x0) -> np.ndarray:
        """``<A~, V>`` at ``(x0, eta)``, shape ``(r, r, 2**n)``."""
        n, r = self.n, self.bundle.rank
        x, xi = _generic_point(x0, n)
        ident = gr.embed(np.eye(r), n)
        if V.parity == 1:
            curve = generator_path(V, x, xi, self.steps[-1], self.functor.tol)
            return -self.functor.transport(curve, ident).s2(0.0)
        diffs = []
        for h in self.steps:
            fwd = self.functor.transport(generator_path(V, x, xi, h, self.functor.tol), ident).endpoint
            bwd = self.functor.transport(generator_path(V, x, xi, -h, self.functor.tol), ident).endpoint
            diffs.append((fwd - bwd) / (2 * h))
        return -_richardson(diffs)

    def legs_at(self, x0) -> tuple[np.ndarray, np.ndarray]:
        """Pairings with ``L_{d_i}`` and ``iota_{d_i}``: two arrays ``(n, r, r, 2**n)``."""
        key = tuple(float(v) for v in x0)
        if key not in self._legs:
            n = self.n
            L = np.stack([self.direct(PiTDerivation.lie(VectorField.coordinate(n, i)), x0) for i in range(n)])
            R = np.stack([self.direct(PiTDerivation.contraction(VectorField.coordinate(n, i)), x0)
                          for i in range(n)])
            self._legs[key] = (L, R)
        return self._legs[key]

    def rules(self, V: PiTDerivation, x0) -> np.ndarray:
        """``<A~, V>`` assembled from coordinate legs by function-linearity."""
        n = self.n
        x, xi = _generic_point(x0, n)
        L, R = self.legs_at(x0)
        a = FormArray(list(V.a), n).super_value(x, xi)
        b = FormArray(list(V.b), n).super_value(x, xi)
        return (gr.gmul(a[:, None, None, :], L) + gr.gmul(b[:, None, None, :], R)).sum(axis=0)

    def covariant(self, V: PiTDerivation, sigma: PiTSection, x0) -> np.ndarray:
        """``nabla_V sigma`` at ``(x0, eta)`` as a Lambda_n-valued vector."""
        n = self.n
        x, xi = _generic_point(x0, n)
        Vs = PiTSection([V(c) for c in sigma.components]).super_value(x, xi)
        return Vs + gr.gmatmul(self.rules(V, x0), sigma.super_value(x, xi))

    def check_consistency(self, x0, fields: Sequence[VectorField], functions: Sequence[ScalarField],
                          tol: float = 1e-6) -> float:
        """Direct against rule-based pairings for ``L_X`` and ``iota_X``, and
        ``iota_{fX} - f iota_X = 0``.  Raises :class:`ConsistencyError`."""
        worst = 0.0
        fx = [float(f.value(x0)) for f in functions]
        for X in fields:
            for V, name in ((PiTDerivation.lie(X), "L_X"), (PiTDerivation.contraction(X), "iota_X")):
                res = _gap(self.direct(V, x0), self.rules(V, x0))
                if res > tol:
                    raise ConsistencyError(f"{name}: direct and rule-based pairings differ by {res:.3g}",
                                           {"generator": name, "field": X, "point": x0, "residual": res})
                worst = max(worst, res)
            base = self.direct(PiTDerivation.contraction(X), x0)
            for f, fv in zip(functions, fx):
                res = _gap(self.direct(PiTDerivation.contraction(X.scaled(f)), x0), fv * base)
                if res > tol:
                    raise ConsistencyError(f"iota_(fX) - f iota_X does not vanish ({res:.3g})",
                                           {"generator": "iota_fX - f iota_X", "field": X, "function": f,
                                            "point": x0, "residual": res})
                worst = max(worst, res)
        return worst

    def is_even_at(self, x0, tol: float = 1e-8) -> bool:
        mask = self.bundle.block_mask()
        L, R = self.legs_at(x0)
        return bool(np.all(np.abs(L[:, mask]) <= tol) and np.all(np.abs(R[:, mask]) <= tol))

    def graded_legs_at(self, x0) -> np.ndarray:
        """``A_i(x0)`` read from the function parts of the ``L`` legs: ``(n, r, r)``."""
        return self.legs_at(x0)[0][..., 0]


def recover_connection(T: TransportFunctor, steps: Sequence[float] = (1e-2, 5e-3, 2.5e-3)) -> RecoveredConnection:
    return RecoveredConnection(T, steps)


@dataclass
class RoundtripReport:
    residual: float
    leg_residual: float
    iota_residual: float
    higher_form_residual: float
    recovered_even: bool
    points: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.recovered_even


def roundtrip_residual(nabla: GradedConnection, points=None, rng=None,
                       tol: float = DEFAULT_TOL) -> RoundtripReport:
    """``nabla -> transport -> recovered connection``, compared entrywise at probe points.

    The transport over Pi T R^n is the lift of ``nabla``'s transport.  The
    recovered ``L`` legs must equal ``A_i(x0)`` with no form components and the
    ``iota`` legs must vanish.
    """
    if not nabla.is_even:
        raise ValueError("round trip is defined for even connections")
    n = nabla.dim
    if points is None:
        rng = np.random.default_rng(0) if rng is None else rng
        points = [rng.integers(-4, 5, n) / 8.0 for _ in range(3)]
    rec = recover_connection(LiftedTransport(ConnectionTransport(nabla, tol)))
    leg = iota = higher = 0.0
    even = True
    for x0 in points:
        L, R = rec.legs_at(x0)
        leg = max(leg, _gap(L[..., 0], nabla.matrices_at(x0)))
        higher = max(higher, float(np.max(np.abs(L[..., 1:]), initial=0.0)))
        iota = max(iota, float(np.max(np.abs(R), initial=0.0)))
        even = even and rec.is_even_at(x0)
    return RoundtripReport(max(leg, iota, higher), leg, iota, higher, even, [list(map(float, p)) for p in points])
