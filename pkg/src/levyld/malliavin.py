"""Malliavin matrix of the jump process, its Laplace transform and inverse moments.

Under the Malliavin convention a jump ``z`` moves the state by ``gamma(h z)``
and adds the rank-one term ``nu(h z) gamma'(h z) gamma'(h z)^T`` to ``V``.
For a unit vector ``xi`` write ``u = <V xi, xi>``.  Then

* ``log E[exp(-2 beta u)] = (t/h) ∫ (exp(-2 beta nu(hz) <gamma'(hz), xi>^2) - 1) g(z) dz``
  (:func:`laplace_exponent_v`),
* ``E[u^{-p}] <= Gamma(p)^{-1} ∫_0^∞ beta^{p-1} exp(laplace_exponent_v / 2) d beta``
  (:func:`inverse_moment_semianalytic`), by Cauchy-Schwarz on ``E[exp(-beta u)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .model import LevyModel, as_vector, levy_integral, unit_directions
from .quadrature import _WG, _WK, _XK, smoothstep_cutoff
from .simulate import SimConfig, _replace, _sample_block, jump_plan, sample_paths

#: inverse-moment samples are truncated at this value
INVERSE_TRUNCATION = 1e12
BETA_MIN = 1e-6
BETA_CAP = 1e60


class InverseMomentDivergence(ValueError):
    """The Gamma integral for ``E[<V xi, xi>^{-p}]`` does not converge."""

    def __init__(self, message: str, h: float, xi, k_hyp=None):
        super().__init__(message)
        self.h = h
        self.xi = np.asarray(xi, dtype=float)
        self.k_hyp = k_hyp


@dataclass(frozen=True)
class MalliavinSample:
    x_end: np.ndarray
    v: np.ndarray
    extras: list = field(default_factory=list)


@dataclass(frozen=True)
class MalliavinBatch:
    x_end: np.ndarray        # (n, d)
    v: np.ndarray            # (n, d, d)
    extras: list             # list of (n, d_j)
    n_jumps: np.ndarray

    def __len__(self):
        return len(self.n_jumps)

    def __getitem__(self, i) -> MalliavinSample:
        return MalliavinSample(self.x_end[i], self.v[i], [e[i] for e in self.extras])

    def quadratic_form(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.einsum("nij,i,j->n", self.v, xi, xi)


def quadratic_extra(z):
    """Default auxiliary map ``G(z) = z^2 * smoothstep(|z|)``: compact support, quadratic at 0."""
    z = np.asarray(z, dtype=float)
    return (z * z * smoothstep_cutoff(np.abs(z), 0.5))[:, None]


def check_extra_map(gmap: Callable, bound: float = 1e6) -> None:
    """Reject maps that are not ``O(z^2)`` at the origin or do not vanish outside ``[-1, 1]``."""
    z = np.geomspace(1e-6, 1e-2, 9)
    z = np.concatenate([z, -z])
    vals = np.asarray(gmap(z), dtype=float).reshape(len(z), -1)
    if not np.all(np.isfinite(vals)):
        raise ValueError("extra map returns non-finite values")
    ratio = np.max(np.abs(vals), axis=1) / z ** 2
    if np.max(ratio) > bound:
        raise ValueError("extra map is not bounded by C|z|^2 near 0")
    far = np.asarray(gmap(np.array([-1.5, -1.0 - 1e-9, 1.0 + 1e-9, 1.5])), dtype=float)
    if np.any(far != 0):
        raise ValueError("extra map must vanish outside [-1, 1]")


def _malliavin_cfg(cfg: SimConfig) -> SimConfig:
    if cfg.tilt is not None:
        raise ValueError("the Malliavin sampler is untilted")
    return cfg if cfg.convention == "malliavin" else _replace(cfg, convention="malliavin")


def sample_extended_batch(model: LevyModel, cfg: SimConfig, extra_maps: Sequence = (),
                          x=None) -> MalliavinBatch:
    """``cfg.n_paths`` samples of ``(x, V, x_2, ...)`` on the shared block streams."""
    for g in extra_maps:
        check_extra_map(g)
    cfg = _malliavin_cfg(cfg)
    b = sample_paths(model, cfg, x, want_v=True, extra_maps=tuple(extra_maps))
    return MalliavinBatch(b.endpoints, b.v, b.extras, b.n_jumps)


def sample_extended(model: LevyModel, cfg: SimConfig, stream: np.random.Generator,
                    extra_maps: Sequence = (), x=None) -> MalliavinSample:
    for g in extra_maps:
        check_extra_map(g)
    cfg = _malliavin_cfg(cfg)
    x = np.zeros(model.d) if x is None else as_vector(x, model.d, "x")
    plan = jump_plan(model, cfg)
    e, _, _, v, extras = _sample_block(model, plan, stream, 1, x, True, tuple(extra_maps))
    return MalliavinSample(e[0], v[0], [ex[0] for ex in extras])


def extended_state_from_jumps(model: LevyModel, h: float, jumps, extra_maps: Sequence = (),
                              x=None) -> MalliavinSample:
    """Extended state after the given jumps, with no truncation drift."""
    d = model.d
    z = np.atleast_1d(np.asarray(jumps, dtype=float))
    x = np.zeros(d) if x is None else as_vector(x, d, "x")
    if z.size == 0:
        extras = [np.zeros(np.asarray(g(np.zeros(1))).reshape(1, -1).shape[1])
                  for g in extra_maps]
        return MalliavinSample(x.copy(), np.zeros((d, d)), extras)
    hz = h * z
    gp = model.gamma.derivative(hz, 1)
    w = model.nu(hz)
    v = np.einsum("n,ni,nj->ij", w, gp, gp)
    extras = [np.asarray(g(hz), dtype=float).reshape(z.size, -1).sum(axis=0) for g in extra_maps]
    return MalliavinSample(x + model.gamma(hz).sum(axis=0), v, extras)


# ------------------------------------------------------------- closed forms

def _q(model, h, xi):
    def q(z):
        gp = model.gamma.derivative(h * z, 1)
        return model.nu(h * z) * (gp @ xi) ** 2
    return q


def derivative_crossings(model: LevyModel, h: float, xi, n_grid: int = 4001) -> list:
    """Nonzero ``z`` in ``(-1, 1)`` where ``<gamma'(hz), xi>`` changes sign.

    Near such a point ``exp(-2 beta q)`` has a dip of width ``~beta^{-1/2}``;
    the quadrature grades its panels toward it.
    """
    z = np.linspace(-1.0, 1.0, n_grid)
    s = model.gamma.derivative(h * z, 1) @ xi
    f = lambda w: float(model.gamma.derivative(np.array([h * w]), 1)[0] @ xi)
    out = []
    for i in np.nonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)[0]:
        out.append(brentq(f, z[i], z[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    out.extend(z[i] for i in np.nonzero(s == 0)[0])
    return sorted(b for b in out if b != 0.0 and abs(b) < 1.0)


def laplace_exponent_v(model: LevyModel, h: float, t: float, beta, xi):
    """``(t/h) ∫ (exp(-2 beta nu(hz) <gamma'(hz), xi>^2) - 1) g(z) dz``; vectorised over ``beta``."""
    if not 0 < h <= 1:
        raise ValueError(f"h must lie in (0, 1], got {h}")
    xi = as_vector(xi, model.d, "xi")
    if abs(np.linalg.norm(xi) - 1.0) > 1e-9:
        raise ValueError("xi must be a unit vector")
    b = np.asarray(beta, dtype=float)
    if np.any(b < 0):
        raise ValueError("beta must be non-negative")
    flat = b.ravel()
    q = _q(model, h, xi)

    def integrand(z):
        return np.expm1(-2.0 * np.outer(q(z), flat))

    pts = derivative_crossings(model, h, xi)
    val = (t / h) * np.asarray(levy_integral(model, integrand, points=pts), dtype=float)
    val = np.minimum(val, 0.0)
    return float(val[0]) if b.ndim == 0 else val.reshape(b.shape)


def mean_v(model: LevyModel, h: float, t: float = 1.0) -> np.ndarray:
    """``E[V] = (t/h) ∫ nu(hz) gamma'(hz) gamma'(hz)^T g(z) dz``."""
    d = model.d

    def f(z):
        gp = model.gamma.derivative(h * z, 1)
        w = model.nu(h * z)
        return (w[:, None, None] * gp[:, :, None] * gp[:, None, :]).reshape(len(z), -1)
    return ((t / h) * levy_integral(model, f)).reshape(d, d)


def _log_beta_panels(lo_dec: float, hi_dec: float, per_decade: int):
    n = max(1, int(round((hi_dec - lo_dec) * per_decade)))
    e = np.linspace(lo_dec, hi_dec, n + 1) * math.log(10.0)
    mid, half = 0.5 * (e[:-1] + e[1:]), 0.5 * (e[1:] - e[:-1])
    u = (mid[:, None] + half[:, None] * _XK[None, :])
    return u, half


def inverse_moment_semianalytic(model: LevyModel, h: float, t: float, p: float, xi, *,
                                rel_tol: float = 1e-6) -> float:
    """Upper bound ``Gamma(p)^{-1} ∫_0^∞ beta^{p-1} exp(LE(beta)/2) d beta`` on ``E[u^{-p}]``.

    The integral runs over ``log beta`` with Gauss-Kronrod panels from ``1e-6``;
    the stretch below ``1e-6`` is taken from the first-order expansion of
    ``LE``.  The upper end grows by decades until the integrand drops below
    ``1e-16`` of its peak.  Raises :class:`InverseMomentDivergence` when
    ``<V xi, xi>`` vanishes identically or the integrand has not decayed by
    ``beta = 1e60``.
    """
    if p < 0:
        raise ValueError("p must be non-negative")
    if p == 0:
        return 1.0
    xi = as_vector(xi, model.d, "xi")
    xi = xi / np.linalg.norm(xi)
    q = _q(model, h, xi)
    mean_u = (t / h) * float(levy_integral(model, q))
    scale = (t / h) * float(levy_integral(
        model, lambda z: model.nu(h * z) * np.sum(model.gamma.derivative(h * z, 1) ** 2, axis=1)))
    if not mean_u > 1e-20 * scale:
        raise InverseMomentDivergence(
            f"<V xi, xi> vanishes identically for xi={xi.tolist()} at h={h}: the jump "
            f"derivatives do not span R^{model.d} (Hypothesis H fails, k_hyp={model.k_hyp})",
            h, xi, model.k_hyp)

    b0 = BETA_MIN
    head = b0 ** p / p - mean_u * b0 ** (p + 1) / (p + 1)
    lo_dec = math.log10(b0)
    cap_dec = math.log10(BETA_CAP)
    # coarse scan in half decades to locate the support of the integrand
    scan_dec = np.arange(lo_dec, cap_dec + 0.25, 0.5)
    log_f = p * scan_dec * math.log(10.0) + 0.5 * laplace_exponent_v(
        model, h, t, 10.0 ** scan_dec, xi)
    peak = float(np.max(log_f))
    alive = np.nonzero(log_f >= peak + math.log(1e-16))[0]
    if alive[-1] >= len(scan_dec) - 2:
        raise InverseMomentDivergence(
            f"inverse-moment integrand has not decayed by beta=1e60 for xi={xi.tolist()}, "
            f"h={h}; the Laplace functional decays too slowly (k_hyp={model.k_hyp})",
            h, xi, model.k_hyp)
    hi_dec = float(scan_dec[alive[-1] + 2])

    per_decade = 1
    while True:
        u, half = _log_beta_panels(lo_dec, hi_dec, per_decade)
        le = laplace_exponent_v(model, h, t, np.exp(u).ravel(), xi).reshape(u.shape)
        f = np.exp(p * u + 0.5 * le)
        total = float(np.sum(half[:, None] * _WK[None, :] * f))
        err = float(np.sum(np.abs(np.sum(half[:, None] * (_WK - _WG)[None, :] * f, axis=1))))
        if err <= rel_tol * total or per_decade >= 16:
            break
        per_decade *= 2
    return (head + total) / math.gamma(p)


# --------------------------------------------------------------- MC moments

@dataclass(frozen=True)
class MCMoment:
    value: float
    stderr: float
    n: int


def _mc(values) -> MCMoment:
    values = np.asarray(values, dtype=float)
    n = len(values)
    return MCMoment(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)) if n > 1
                    else math.inf, n)


def laplace_mc(batch: MalliavinBatch, beta: float, xi) -> MCMoment:
    """MC estimate of ``E[exp(-2 beta <V xi, xi>)]``."""
    return _mc(np.exp(-2.0 * beta * batch.quadratic_form(xi)))


def inverse_moment_mc(batch: MalliavinBatch, p: float, xi,
                      truncation: float = INVERSE_TRUNCATION) -> MCMoment:
    """MC estimate of ``E[min(<V xi, xi>^{-p}, truncation)]`` (a lower bound of the raw moment)."""
    u = batch.quadratic_form(xi)
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.where(u > 0, u ** (-p), np.inf)
    return _mc(np.minimum(vals, truncation))


def operator_norms(batch: MalliavinBatch) -> np.ndarray:
    return np.linalg.eigvalsh(batch.v)[:, -1]


def moment_v(model: LevyModel, h: float, t: float, p: int, *, n_paths: int = 100_000,
             seed: int = 0, eps_cut: float | None = None, workers: int = 1) -> MCMoment:
    """MC estimate of ``E[|V|^p]`` with the operator norm."""
    if int(p) != p or p < 1:
        raise ValueError("p must be a positive integer")
    cfg = SimConfig(h=h, t=t, n_paths=n_paths, seed=seed, eps_cut=eps_cut,
                    convention="malliavin", workers=workers)
    batch = sample_extended_batch(model, cfg)
    return _mc(operator_norms(batch) ** int(p))


@dataclass(frozen=True)
class BoundedReport:
    """Moments across an h grid and the uniform-boundedness verdict.

    ``ratio`` is max/min over the grid; the verdict asks only that every value
    be finite and that ``max <= band * value at the largest h``.
    """

    h_grid: list
    values: list
    stderrs: list
    ratio: float
    band: float
    verdict: str


def _bounded(h_grid, moments, band) -> BoundedReport:
    vals = [m.value for m in moments]
    errs = [m.stderr for m in moments]
    finite = all(np.isfinite(vals))
    lo, hi = min(vals), max(vals)
    ratio = hi / lo if lo > 0 else (1.0 if hi == 0 else math.inf)
    ok = finite and hi <= band * vals[0] + 3 * errs[0] if vals[0] > 0 else finite and hi == 0
    return BoundedReport(list(h_grid), vals, errs, ratio, band, "PASS" if ok else "FAIL")


def moment_band(model: LevyModel, h_grid, p: int = 1, *, t: float = 1.0,
                n_paths: int = 100_000, seed: int = 0, band: float = 3.0) -> BoundedReport:
    """``moment_v`` on each h of a decreasing grid, checked for uniform boundedness."""
    hs = list(h_grid)
    moms = [moment_v(model, h, t, p, n_paths=n_paths, seed=seed) for h in hs]
    return _bounded(hs, moms, band)


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class ScalingFit:
    p: float
    h_grid: list
    log_moments: list
    fitted_slope: float
    r_squared: float
    intercept: float
    worst_directions: list
    verdict: str


def scaling_directions(model: LevyModel, h: float, t: float = 1.0) -> np.ndarray:
    """``64 d`` quasi-uniform unit vectors plus the eigenvectors of ``E[V]``."""
    d = model.d
    base = unit_directions(d, 64 * d)
    _, vecs = np.linalg.eigh(mean_v(model, h, t))
    return np.vstack([base, vecs.T])


def sup_inverse_moment(model: LevyModel, h: float, t: float, p: float):
    """Largest semianalytic bound over :func:`scaling_directions`; returns ``(value, xi)``."""
    best, arg = -math.inf, None
    for xi in scaling_directions(model, h, t):
        val = inverse_moment_semianalytic(model, h, t, p, xi)
        if val > best:
            best, arg = val, xi
    return best, arg


def fit_scaling(model: LevyModel, t: float, p: float, h_grid, n_paths: int = 0) -> ScalingFit:
    """Least-squares slope of ``log sup_xi E[u^{-p}]`` against ``log h``.

    ``n_paths`` is accepted for interface symmetry; the fit uses the
    semianalytic bound only.
    """
    hs = [float(h) for h in h_grid]
    if len(hs) < 3:
        raise ValueError("fit_scaling needs at least three h values")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h_grid must be strictly decreasing")
    if p == 0:
        return ScalingFit(0.0, hs, [0.0] * len(hs), 0.0, 1.0, 0.0, [None] * len(hs), "PASS")
    logs, worst = [], []
    for h in hs:
        val, xi = sup_inverse_moment(model, h, t, p)
        if not np.isfinite(val):
            return ScalingFit(p, hs, logs + [math.inf], math.nan, math.nan, math.nan,
                              worst + [None], f"FAIL: non-finite moment at h={h}")
        logs.append(math.log(val))
        worst.append(np.asarray(xi).tolist())
    x = np.log(hs)
    y = np.array(logs)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    verdict = "PASS" if np.isfinite(slope) else "FAIL"
    return ScalingFit(float(p), hs, logs, float(slope), r2, float(intercept), worst, verdict)


# -------------------------------------------------- extended-state moments

@dataclass(frozen=True)
class PolyTestFunction:
    """Polynomial ``f`` on the extended state, evaluated on a :class:`MalliavinBatch`."""

    func: Callable[[MalliavinBatch], np.ndarray]
    degree: int
    name: str = "f"

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError("degree must be a non-negative integer")


CONSTANT_ONE = PolyTestFunction(lambda b: np.ones(len(b)), 0, "1")
TRACE_V = PolyTestFunction(lambda b: np.trace(b.v, axis1=1, axis2=2), 1, "trace V")
EXTRA_SQUARED = PolyTestFunction(lambda b: np.sum(b.extras[0] ** 2, axis=1), 2, "|x_2|^2")


def extended_moment_check(model: LevyModel, h_grid, f_poly: PolyTestFunction,
                          extra_maps: Sequence = (quadratic_extra,), *, t: float = 1.0,
                          n_paths: int = 100_000, seed: int = 0,
                          band: float = 10.0) -> BoundedReport:
    """MC estimates of ``E|f(x^l)|`` across ``h_grid`` with the boundedness verdict."""
    hs = [float(h) for h in h_grid]
    moms = []
    for h in hs:
        cfg = SimConfig(h=h, t=t, n_paths=n_paths, seed=seed, convention="malliavin")
        batch = sample_extended_batch(model, cfg, extra_maps)
        moms.append(_mc(np.abs(f_poly.func(batch))))
    return _bounded(hs, moms, band)
