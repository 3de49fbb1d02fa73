"""Classical RK4 with step halving, for states of any array shape.

The step count is doubled until two successive resolutions agree; the
Richardson estimate ``|y_2N - y_N| / 15`` is held below ``tol`` per unit time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_TOL = 1e-10


class DivergenceError(RuntimeError):
    """Integration blew up or failed to converge; ``last_time`` is the last trusted time."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last valid time {last_time:.6g})")
        self.last_time = last_time


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _march(f, y0, t0, t1, steps, bound):
    h = (t1 - t0) / steps
    ys = np.empty((steps + 1,) + y0.shape)
    ys[0] = y0
    y = y0
    for j in range(steps):
        y = rk4_step(f, t0 + j * h, y, h)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y), initial=0.0) > bound:
            raise DivergenceError("solution left the representable range", t0 + j * h)
        ys[j + 1] = y
    return ys


@dataclass
class Trajectory:
    """Solution on a uniform grid with RK4 dense output between nodes."""

    f: Callable
    times: np.ndarray
    states: np.ndarray
    error_estimate: float

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t: float) -> np.ndarray:
        n = len(self.times) - 1
        if n == 0:
            return self.states[0]
        h = (self.t1 - self.t0) / n
        pos = (t - self.t0) / h
        if pos < -1e-9 or pos > n + 1e-9:
            raise ValueError(f"time {t} outside solved interval [{self.t0}, {self.t1}]")
        j = min(max(int(round(pos)), 0), n)
        if abs(pos - j) < 1e-12:
            return self.states[j]
        j = min(int(math.floor(pos)), n - 1)
        return rk4_step(self.f, float(self.times[j]), self.states[j], t - float(self.times[j]))


def solve(f: Callable[[float, np.ndarray], np.ndarray], y0, t0: float, t1: float,
          tol: float = DEFAULT_TOL, max_steps: int = 2 ** 15, bound: float = 1e12,
          initial_steps: int | None = None) -> Trajectory:
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t1`` (either direction)."""
    y0 = np.asarray(y0, dtype=float)
    span = t1 - t0
    if span == 0.0:
        return Trajectory(f, np.array([t0]), y0[None].copy(), 0.0)
    target = tol * max(abs(span), 1.0)
    steps = initial_steps or max(1, math.ceil(abs(span) / 0.25))
    coarse = _attempt(f, y0, t0, t1, steps, bound)
    while True:
        fine_steps = 2 * steps
        fine = _attempt(f, y0, t0, t1, fine_steps, bound)
        if isinstance(fine, DivergenceError) or isinstance(coarse, DivergenceError):
            # a coarse grid can step across a singularity; refine before blaming the problem
            if 2 * fine_steps > max_steps:
                raise fine if isinstance(fine, DivergenceError) else coarse
            steps, coarse = fine_steps, fine
            continue
        scale = max(1.0, float(np.max(np.abs(fine[-1]), initial=0.0)))
        err = float(np.max(np.abs(fine[::2] - coarse), initial=0.0)) / 15 / scale
        if err <= target:
            return Trajectory(f, np.linspace(t0, t1, fine_steps + 1), fine, err)
        if 2 * fine_steps > max_steps:
            node_err = np.max(np.abs(fine[::2] - coarse).reshape(steps + 1, -1), axis=1) / 15 / scale
            bad = int(np.argmax(node_err > target))
            last = t0 + span * max(bad - 1, 0) / steps
            raise DivergenceError(f"step halving did not reach tolerance {tol:g}", last)
        steps, coarse = fine_steps, fine


def _attempt(f, y0, t0, t1, steps, bound):
    try:
        return _march(f, y0, t0, t1, steps, bound)
    except DivergenceError as exc:
        return exc
