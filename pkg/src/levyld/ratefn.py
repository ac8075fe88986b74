"""Legendre transform ``L(alpha) = sup_xi {<alpha, xi> - H(xi)}`` and derived rates.

``L`` is +inf outside the interior of the convex cone generated by the
jump curve (for ``gamma = (z, z^2)`` that is the half-plane ``alpha_2 > 0``).
The Newton ascent detects this by the dual iterate escaping to infinity and
returns a :class:`RatePoint` with ``value = inf`` and ``finite = False``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .hamiltonian import hamiltonian, mean_drift
from .model import LevyModel, as_vector, unit_directions


class LegendreError(RuntimeError):
    """Newton ascent failed to reach the duality-gap tolerance."""

    def __init__(self, message: str, xi, gap: float, iterations: int):
        super().__init__(message)
        self.xi = np.asarray(xi)
        self.gap = gap
        self.iterations = iterations


@dataclass(frozen=True)
class RatePoint:
    alpha: np.ndarray
    value: float
    xi_star: np.ndarray
    gap: float
    iterations: int
    finite: bool = True


def legendre(model: LevyModel, alpha, *, xi0=None, tol: float = 1e-8, max_iter: int = 200,
             xi_max: float = 1e8) -> RatePoint:
    """Newton ascent with Armijo backtracking on ``xi -> <alpha, xi> - H(xi)``.

    Stops when ``|alpha - ∇H(xi)| <= tol (1 + |alpha|)``.  ``xi0`` warm-starts
    the iteration (default 0).  An iterate with ``|xi| > xi_max`` is taken as
    proof that the dual problem is unbounded, i.e. ``L(alpha) = inf``.

    Raises:
        LegendreError: ``max_iter`` reached, or the line search stalls with
            the gap still above tolerance.
    """
    a = as_vector(alpha, model.d, "alpha")
    thresh = tol * (1.0 + np.linalg.norm(a))
    xi = np.zeros(model.d) if xi0 is None else as_vector(xi0, model.d, "xi0").copy()
    hv = hamiltonian(model, xi)
    if not np.isfinite(hv.value):
        xi = np.zeros(model.d)
        hv = hamiltonian(model, xi)
    phi = a @ xi - hv.value
    checked = False
    for it in range(max_iter + 1):
        r = a - hv.grad
        gap = float(np.linalg.norm(r))
        if gap <= thresh:
            return RatePoint(a, float(phi), xi, gap, it)
        if it == max_iter:
            break
        step = _newton_direction(hv.hess, r)
        slope = float(r @ step)
        t = 1.0
        accepted = None
        if slope <= 1e-9 * (1.0 + abs(phi)):
            # predicted increase is at round-off level: Armijo is meaningless here
            cand = xi + step
            hc = hamiltonian(model, cand)
            if np.isfinite(hc.value) and np.linalg.norm(a - hc.grad) < gap:
                accepted = (cand, hc, a @ cand - hc.value)
                t = 0.0
        while accepted is None and t > 1e-14:
            cand = xi + t * step
            hc = hamiltonian(model, cand)
            phic = a @ cand - hc.value
            if np.isfinite(phic) and phic >= phi + 1e-4 * t * slope:
                accepted = (cand, hc, phic)
                break
            t *= 0.5
        if accepted is None:
            # objective flat at round-off level: take the full step if it shrinks the gap
            cand = xi + step
            hc = hamiltonian(model, cand)
            if np.isfinite(hc.value) and np.linalg.norm(a - hc.grad) < gap:
                accepted = (cand, hc, a @ cand - hc.value)
            else:
                raise LegendreError(f"line search stalled at gap {gap:.3e}", xi, gap, it)
        xi, hv, phi = accepted
        nxi = np.linalg.norm(xi)
        if nxi > xi_max or (nxi > 1e4 and not checked and _unbounded(model, a)):
            return RatePoint(a, math.inf, xi, gap, it + 1, finite=False)
        checked = checked or nxi > 1e4
    raise LegendreError(f"no convergence in {max_iter} iterations (gap {gap:.3e})", xi, gap,
                        max_iter)


def _unbounded(model: LevyModel, a: np.ndarray) -> bool:
    """Certificate for ``L(a) = inf``: some ``u`` with ``<gamma(z), u> <= 0`` on the support and ``<a, u> > 0``.

    The LP runs on a geometric node set reaching ``|z| = 1e-12``; a candidate
    ``u`` is re-verified on a much denser grid before it is trusted.
    """
    z = np.geomspace(1e-12, 1.0, 300)
    z = np.concatenate([-z[::-1], z])
    G = model.gamma(z)
    res = linprog(-a, A_ub=G, b_ub=np.zeros(len(z)), bounds=[(-1.0, 1.0)] * model.d,
                  method="highs")
    if res.status != 0 or -res.fun <= 1e-9 * (1.0 + np.linalg.norm(a)):
        return False
    u = res.x
    zz = np.concatenate([-np.geomspace(1e-14, 1.0, 20000), np.geomspace(1e-14, 1.0, 20000)])
    return bool(np.max(model.gamma(zz) @ u) <= 1e-13)


def _newton_direction(hess: np.ndarray, r: np.ndarray) -> np.ndarray:
    try:
        c = np.linalg.cholesky(hess)
        return np.linalg.solve(c.T, np.linalg.solve(c, r))
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(hess)
        floor = max(w.max(), 1e-300) * 1e-14
        return v @ ((v.T @ r) / np.maximum(w, floor))


def rate_l(model: LevyModel, x, y) -> float:
    """``l(x, y) = L(y - x)``: the straight constant-speed path is optimal by Jensen."""
    x = as_vector(x, model.d, "x")
    y = as_vector(y, model.d, "y")
    return legendre(model, y - x).value


@dataclass(frozen=True)
class BallMinimum:
    value: float
    argmin: np.ndarray
    xi_star: np.ndarray
    iterations: int


def _project(y, center, radius):
    off = y - center
    n = np.linalg.norm(off)
    return y if n <= radius else center + off * (radius / n)


def minimize_over_ball(model: LevyModel, x, center, radius: float, *, tol: float = 1e-11,
                       max_iter: int = 2000) -> BallMinimum:
    """Projected-gradient minimization of ``y -> L(y - x)`` over the closed ball.

    Multi-started from the centre, the ``2d`` axis points and the projection
    of the zero-cost point ``x + m``; starts where ``L = inf`` are skipped.
    The gradient is ``∇L(v) = xi*(v)``.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    d = model.d
    x = as_vector(x, d, "x")
    center = as_vector(center, d, "center")
    target = x + mean_drift(model)
    if np.linalg.norm(target - center) <= radius:
        return BallMinimum(0.0, target, np.zeros(d), 0)

    starts = [center]
    for i in range(d):
        e = np.zeros(d)
        e[i] = 0.999 * radius
        starts += [center + e, center - e]
    starts.append(_project(target, center, 0.999 * radius))

    best = None
    for y0 in starts:
        rp = legendre(model, y0 - x)
        if not rp.finite:
            continue
        res = _projected_gradient(model, x, center, radius, y0, rp, tol, max_iter)
        if best is None or res.value < best.value:
            best = res
    if best is None:
        raise RuntimeError("L is infinite at every start point; ball misses the domain of L")
    return best


def _projected_gradient(model, x, center, radius, y, rp, tol, max_iter):
    s = radius / max(np.linalg.norm(rp.xi_star), 1e-12)
    it = 0
    for it in range(1, max_iter + 1):
        g = rp.xi_star
        while True:
            cand = _project(y - s * g, center, radius)
            move = cand - y
            if np.linalg.norm(move) <= tol * (1.0 + radius):
                return BallMinimum(rp.value, y, rp.xi_star, it)
            rc = legendre(model, cand - x, xi0=rp.xi_star)
            if rc.finite and rc.value <= rp.value + 1e-4 * (g @ move):
                break
            s *= 0.5
        y, rp = cand, rc
        s *= 2.0
    return BallMinimum(rp.value, y, rp.xi_star, it)


def rate_inf_ball(model: LevyModel, x, center, radius: float) -> float:
    """``inf_{y in O} l(x, y)`` for the open ball ``O`` (= min over its closure)."""
    return minimize_over_ball(model, x, center, radius).value


@dataclass(frozen=True)
class GrowthRow:
    radius: float
    min_ratio: float
    max_ratio: float
    n_infinite: int


@dataclass(frozen=True)
class GrowthReport:
    rows: list
    lower_constant: float
    upper_constant: float
    verdict: str


def growth_check(model: LevyModel, radii, n_directions: int | None = None) -> GrowthReport:
    """Table of ``L(alpha) / (|alpha| log|alpha|)`` over spheres ``|alpha| = R``.

    ``max_ratio`` is taken over directions where ``L`` is finite;
    ``n_infinite`` counts directions outside the domain of ``L``.  PASS when
    every minimum is positive, the minima stay within a factor 5 of each
    other, and the finite maxima are finite.
    """
    radii = [float(r) for r in radii]
    if any(r < 2 for r in radii):
        raise ValueError("growth_check needs radii >= 2 so that log|alpha| > 0")
    dirs = unit_directions(model.d, n_directions or 32 * model.d)
    rows = []
    for R in radii:
        vals = []
        xi_prev = None
        for u in dirs:
            rp = legendre(model, R * u, xi0=xi_prev)
            vals.append(rp.value)
            xi_prev = rp.xi_star if rp.finite else None
        vals = np.asarray(vals)
        ratio = vals / (R * math.log(R))
        fin = np.isfinite(ratio)
        rows.append(GrowthRow(R, float(ratio[fin].min()), float(ratio[fin].max()),
                              int((~fin).sum())))
    mins = np.array([r.min_ratio for r in rows])
    maxs = np.array([r.max_ratio for r in rows])
    ok = bool(np.all(mins > 0) and mins.max() / mins.min() < 5 and np.all(np.isfinite(maxs)))
    return GrowthReport(rows, float(mins.min()), float(maxs.max()), "PASS" if ok else "FAIL")


@dataclass
class PolyhedralMinorant:
    """``L'(alpha) = max_i {L(alpha_i) + <xi_i, alpha - alpha_i>}``."""

    anchors: list
    chi: float
    radius: float
    grid_n: int
    max_gap: float
    n_excluded: int = 0
    _planes: tuple = field(default=None, repr=False)

    def _arrays(self):
        a = np.array([p[0] for p in self.anchors])
        x = np.array([p[1] for p in self.anchors])
        v = np.array([p[2] for p in self.anchors])
        return a, x, v

    def __call__(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        a, x, v = self._arrays()
        pts = np.atleast_2d(alpha)
        vals = (v[None, :] + pts @ x.T - np.sum(a * x, axis=1)[None, :]).max(axis=1)
        return vals if alpha.ndim > 1 else float(vals[0])


def ball_grid(d: int, radius: float, n: int) -> np.ndarray:
    """Cubic grid with spacing ``radius / n`` restricted to the closed ball."""
    ax = np.linspace(-radius, radius, 2 * n + 1)
    mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return mesh[np.linalg.norm(mesh, axis=1) <= radius * (1 + 1e-12)]


def legendre_on_grid(model: LevyModel, points: np.ndarray):
    """``(values, xi_stars)`` at each point, warm-starting along the scan order."""
    vals = np.empty(len(points))
    xis = np.zeros_like(points)
    prev = None
    for i, p in enumerate(points):
        rp = legendre(model, p, xi0=prev)
        vals[i] = rp.value
        xis[i] = rp.xi_star
        prev = rp.xi_star if rp.finite else None
    return vals, xis


def polyhedral_minorant(model: LevyModel, R: float, chi: float, *, grid_n: int = 8,
                        refinements: int = 1, max_anchors: int = 10_000) -> PolyhedralMinorant:
    """Greedy supporting-plane minorant with sampled gap ``L - L' <= chi`` on ``|alpha| <= R``.

    Anchors are inserted at the grid point of largest gap, on grids of
    spacing ``R / (grid_n 2^k)``, ``k = 0..refinements``; on the finest grid
    the target is ``chi / 2`` to leave room between grid points.  Grid points
    where ``L = inf`` are excluded (counted in ``n_excluded``).
    """
    if not (R > 0 and chi > 0):
        raise ValueError("R and chi must be positive")
    m = mean_drift(model)
    anchors = [(m, np.zeros(model.d), 0.0)]
    max_gap = math.inf
    n_excl = 0
    n = grid_n
    for k in range(refinements + 1):
        pts = ball_grid(model.d, R, n)
        vals, xis = legendre_on_grid(model, pts)
        fin = np.isfinite(vals)
        n_excl = int((~fin).sum())
        pts, vals, xis = pts[fin], vals[fin], xis[fin]
        target = chi / 2 if k == refinements else chi
        while True:
            minorant = PolyhedralMinorant(anchors, chi, R, n, max_gap)
            gap = vals - minorant(pts)
            i = int(np.argmax(gap))
            max_gap = float(gap[i])
            if max_gap <= target:
                break
            if len(anchors) >= max_anchors:
                raise RuntimeError(f"anchor budget {max_anchors} exhausted, gap {max_gap:.3e}")
            anchors.append((pts[i].copy(), xis[i].copy(), float(vals[i])))
        if k < refinements:
            n *= 2
    return PolyhedralMinorant(anchors, chi, R, n, max_gap, n_excl)
