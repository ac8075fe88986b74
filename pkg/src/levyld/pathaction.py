"""Discretised action ``S(phi) = ∫_0^1 L(phi'(t)) dt`` over piecewise-linear paths.

The discrete problem is convex in the interior points, so quasi-Newton
descent from the straight line reaches the global minimum; by Jensen the
straight line is itself optimal, which makes this an independent check of
``l(x, y) = L(y - x)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import LevyModel, as_vector
from .ratefn import LegendreError, legendre


@dataclass(frozen=True)
class DiscretePath:
    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("need at least two time points")
        if not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if p.shape[0] != len(t):
            raise ValueError(f"{len(t)} times but {p.shape[0]} points")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @classmethod
    def straight(cls, x, y, n_segments: int, times=None) -> "DiscretePath":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.linspace(0.0, 1.0, n_segments + 1) if times is None else np.asarray(times, float)
        return cls(t, x[None, :] + t[:, None] * (y - x)[None, :])

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.points, axis=0) / np.diff(self.times)[:, None]


class ActionError(RuntimeError):
    def __init__(self, message: str, segment: int):
        super().__init__(message)
        self.segment = segment


def _segment_rates(model, vel, xi_guess=None):
    vals = np.empty(len(vel))
    xis = np.zeros_like(vel)
    for i, v in enumerate(vel):
        guess = None if xi_guess is None else xi_guess[i]
        try:
            rp = legendre(model, v, xi0=guess, tol=1e-12)
        except LegendreError as exc:
            raise ActionError(f"segment {i}: {exc}", i) from exc
        vals[i] = rp.value
        xis[i] = rp.xi_star
    return vals, xis


def action(model: LevyModel, path: DiscretePath) -> float:
    """``sum_i L((phi_{i+1} - phi_i) / dt_i) dt_i`` (exact for piecewise-linear paths)."""
    if path.points.shape[1] != model.d:
        raise ValueError(f"path lives in R^{path.points.shape[1]}, model in R^{model.d}")
    vals, _ = _segment_rates(model, path.velocities)
    return float(np.sum(vals * np.diff(path.times)))


@dataclass(frozen=True)
class ActionMinimum:
    path: DiscretePath
    value: float
    converged: bool
    iterations: int
    stagnation_bound: float = 0.0   # quasi-Newton estimate of the decrease still available


def minimize_action(model: LevyModel, x, y, N: int, *, init: DiscretePath | None = None,
                    gtol: float = 1e-9, maxiter: int = 500) -> ActionMinimum:
    """Minimise the discrete action over the ``N - 1`` interior points.

    BFGS on the interior points, gradient by the envelope theorem
    (``∇L(v) = xi*(v)``).  ``gtol`` should stay above the accuracy of the
    inner Legendre solves (their gap tolerance is 1e-12).  The start is the straight line unless ``init`` is
    given.  A stalled descent returns the best path with ``converged=False``
    and a :class:`RuntimeWarning`.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    d = model.d
    x = as_vector(x, d, "x")
    y = as_vector(y, d, "y")
    start = init if init is not None else DiscretePath.straight(x, y, N)
    times = start.times
    dt = np.diff(times)
    if N == 1 or len(times) == 2:
        value = action(model, start)
        return ActionMinimum(start, value, True, 0, 0.0)

    cache = {"xi": None}

    def assemble(u):
        pts = np.vstack([x, u.reshape(-1, d), y])
        return pts

    def fun(u):
        pts = assemble(u)
        vel = np.diff(pts, axis=0) / dt[:, None]
        vals, xis = _segment_rates(model, vel, cache["xi"])
        if not np.all(np.isfinite(vals)):
            return np.inf, np.zeros_like(u)
        cache["xi"] = xis
        # d/dphi_i of sum L(v_j) dt_j:  xi*(v_{i-1}) - xi*(v_i)
        grad = xis[:-1] - xis[1:]
        return float(np.sum(vals * dt)), grad.ravel()

    u, value, converged, nit, bound = _bfgs(fun, start.points[1:-1].ravel(), gtol, maxiter)
    path = DiscretePath(times, assemble(u))
    if not converged:
        warnings.warn("action descent stagnated before reaching gtol", RuntimeWarning,
                      stacklevel=2)
    return ActionMinimum(path, value, converged, nit, bound)


def _bfgs(fun, u, gtol, maxiter):
    """Dense BFGS with Armijo backtracking; +inf trial values are simply rejected.

    Returns ``(u, f, converged, iterations, bound)`` where ``bound`` is
    ``g' Hinv g / 2``, the model decrease still on offer at the final point.
    """
    f, g = fun(u)
    if not np.isfinite(f):
        raise ValueError("initial path has infinite action")
    n = u.size
    Hinv = np.eye(n)
    first = True
    for it in range(maxiter):
        if np.max(np.abs(g)) <= gtol:
            return u, f, True, it, _remaining(g, Hinv)
        p = -Hinv @ g
        slope = g @ p
        if slope >= 0:
            Hinv = np.eye(n)
            p, slope = -g, -(g @ g)
        t = 1.0
        if first:
            t = min(1.0, 0.1 / max(np.max(np.abs(p)), 1e-300))
        while t > 1e-16:
            f_new, g_new = fun(u + t * p)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return u, f, False, it, _remaining(g, Hinv)
        s_vec = t * p
        y_vec = g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-300:
            if first:
                Hinv = np.eye(n) * (sy / (y_vec @ y_vec))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s_vec, y_vec)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s_vec, s_vec)
            first = False
        u, f, g = u + s_vec, f_new, g_new
    return u, f, bool(np.max(np.abs(g)) <= gtol), maxiter, _remaining(g, Hinv)


def _remaining(g, Hinv) -> float:
    return max(0.0, 0.5 * float(g @ Hinv @ g))
