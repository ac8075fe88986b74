"""Jump density, jump curve and the induced Lévy measure.

The process jumps by ``gamma(z)`` where ``z`` is drawn from the (infinite)
intensity ``g(z) dz``.  All integrals against the Lévy measure are computed
by :func:`levy_integral`, which uses the graded Gauss-Kronrod rules of
:mod:`levyld.quadrature`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .quadrature import (
    PowerLawDensity,
    QuadratureConfig,
    QuadratureError,
    Rule,
    build_rule,
    integrate,
    smoothstep_cutoff,
)

__all__ = [
    "CallableCurve",
    "HypothesisHError",
    "LevyModel",
    "ModelError",
    "PolynomialCurve",
    "QuadratureConfig",
    "QuadratureError",
    "QuarticWeight",
    "build_model",
    "check_hypothesis_h",
    "levy_integral",
    "model_from_config",
]


class ModelError(ValueError):
    """Invalid model parameters."""


class HypothesisHError(ModelError):
    """The derivatives of the curve at 0 fail to span R^d."""

    def __init__(self, message: str, rank: int, k_max: int, singular_values):
        super().__init__(message)
        self.rank = rank
        self.k_max = k_max
        self.singular_values = np.asarray(singular_values)


class PolynomialCurve:
    """``gamma_i(z) = sum_k A[i, k] z^k`` with exact derivatives."""

    analytic = True

    def __init__(self, coefficients):
        coef = np.atleast_2d(np.asarray(coefficients, dtype=float))
        if coef.ndim != 2:
            raise ModelError("polynomial coefficients must form a (d, K+1) matrix")
        self.coefficients = coef

    @classmethod
    def monomial(cls, d: int) -> "PolynomialCurve":
        coef = np.zeros((d, d + 1))
        coef[np.arange(d), np.arange(1, d + 1)] = 1.0
        return cls(coef)

    @property
    def dim(self) -> int:
        return self.coefficients.shape[0]

    def derivative(self, z, order: int = 0) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        coef = self.coefficients
        K = coef.shape[1] - 1
        if order > K:
            return np.zeros(z.shape + (self.dim,))
        # falling factorial k!/(k-order)! for k >= order
        ks = range(order, K + 1)
        fall = np.array([math.perm(k, order) for k in ks], dtype=float)
        c = coef[:, order:] * fall  # (d, K-order+1)
        flat = z.reshape(-1)
        powers = np.vander(flat, K - order + 1, increasing=True)
        return (powers @ c.T).reshape(z.shape + (self.dim,))

    def __call__(self, z) -> np.ndarray:
        return self.derivative(z, 0)

    def transformed(self, matrix) -> "PolynomialCurve":
        return PolynomialCurve(np.asarray(matrix, dtype=float) @ self.coefficients)


def _fd_weights(order: int, offsets: np.ndarray) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative on integer ``offsets``."""
    n = len(offsets)
    vander = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs)


class CallableCurve:
    """User-supplied curve; derivatives by central differences with Richardson extrapolation.

    The base step is ``1e-5`` for first derivatives and grows with the order
    (``eps^{1/(k+2)}``) to keep round-off of high-order stencils in check.
    """

    analytic = False

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], dim: int, step: float = 1e-5):
        self.func = func
        self._dim = int(dim)
        self.step = step

    @property
    def dim(self) -> int:
        return self._dim

    def _eval(self, z):
        out = np.asarray(self.func(np.asarray(z, dtype=float)), dtype=float)
        return out.reshape(np.shape(z) + (self._dim,))

    def derivative(self, z, order: int = 0) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if order == 0:
            return self._eval(z)
        s = max(self.step, np.finfo(float).eps ** (1.0 / (order + 2)))
        m = order // 2 + 1
        offsets = np.arange(-m, m + 1, dtype=float)
        w = _fd_weights(order, offsets)

        def stencil(step):
            acc = np.zeros(z.shape + (self._dim,))
            for wj, oj in zip(w, offsets):
                if wj != 0.0:
                    acc += wj * self._eval(z + oj * step)
            return acc / step ** order

        coarse, fine = stencil(s), stencil(0.5 * s)
        return fine + (fine - coarse) / 3.0

    def __call__(self, z) -> np.ndarray:
        return self.derivative(z, 0)


@dataclass(frozen=True)
class QuarticWeight:
    """``nu(z) = z^4 S(|z|)``: exactly ``z^4`` on ``|z| <= delta``, tapered to 0 at ``|z| = 1``.

    Non-negative rather than nowhere-zero; only its quartic behaviour near
    the origin enters the Malliavin computations.
    """

    delta: float = 0.5

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return z ** 4 * smoothstep_cutoff(np.abs(z), self.delta)


@dataclass(frozen=True, eq=False)
class LevyModel:
    alpha: float
    big_c: float
    d: int
    cutoff_inner: float
    gamma: PolynomialCurve | CallableCurve
    nu: Callable
    quadrature: QuadratureConfig
    big_c_neg: float
    k_hyp: int | None
    eq1_integral: float
    config: dict = field(default_factory=dict)
    _rules: dict = field(default_factory=dict, repr=False)

    @property
    def density(self) -> PowerLawDensity:
        return PowerLawDensity(self.alpha, self.big_c, self.big_c_neg, self.cutoff_inner)

    @property
    def symmetric(self) -> bool:
        return self.big_c == self.big_c_neg

    def g(self, z):
        """Jump density ``g(z)``."""
        return self.density(z)

    def gamma_at(self, z) -> np.ndarray:
        """``gamma(z)``, memoised for the node arrays of cached rules."""
        hit = self._rules.get(("gamma", id(z)))
        if hit is not None and hit[0] is z:
            return hit[1]
        return self.gamma(z)

    def rule(self, level: int, lo: float = 0.0, hi: float = 1.0) -> Rule:
        key = (level, lo, hi)
        rule = self._rules.get(key)
        if rule is None:
            rule = build_rule(self.density, level, lo, hi, self.quadrature)
            self._rules[key] = rule
            self._rules[("gamma", id(rule.nodes))] = (rule.nodes, self.gamma(rule.nodes))
        return rule


def levy_integral(model: LevyModel, integrand, *, lo: float = 0.0, hi: float = 1.0,
                  full_output: bool = False, config: QuadratureConfig | None = None,
                  points=()):
    """``∫_{lo <= |z| <= hi} integrand(z) g(z) dz``.

    ``integrand`` receives the node array ``z`` of shape ``(n,)`` and may
    return shape ``(n,)`` or ``(n, ...)`` for vector-valued integrals.  With
    ``full_output`` the result is ``(value, error_bound)``.  ``points`` lists
    interior feature locations toward which panels are graded (such rules are
    not cached).

    Raises:
        QuadratureError: tolerance not reached within ``max_panels``; carries
            the best estimate and its error bound.
    """
    cfg = config or model.quadrature
    if len(points):
        pts = tuple(float(b) for b in points)
        rule_for = lambda lvl: build_rule(model.density, lvl, lo, hi, model.quadrature, pts)
    else:
        rule_for = lambda lvl: model.rule(lvl, lo, hi)
    est, err, _ = integrate(rule_for, integrand, cfg)
    if est.ndim == 0:
        est, err = float(est), float(err)
    return (est, err) if full_output else est


def check_hypothesis_h(model_or_curve, k_max: int, d: int | None = None) -> int:
    """Smallest ``k <= k_max`` whose derivative columns ``gamma^{(l)}(0), l <= k`` span R^d.

    Rank is decided on singular values relative to the largest one, with
    threshold ``1e-10`` for analytic curves and ``1e-7`` for finite-difference
    derivatives.

    Raises:
        HypothesisHError: no ``k <= k_max`` reaches rank ``d``.
    """
    curve = getattr(model_or_curve, "gamma", model_or_curve)
    d = d if d is not None else curve.dim
    if k_max < d:
        raise ValueError(f"k_max={k_max} must be at least d={d}")
    cols = np.stack([curve.derivative(np.zeros(1), l)[0] for l in range(1, k_max + 1)], axis=1)
    thresh = 1e-10 if curve.analytic else 1e-7
    rank = 0
    sv = np.zeros(0)
    for k in range(1, k_max + 1):
        sv = np.linalg.svd(cols[:, :k], compute_uv=False)
        if sv.size == 0 or sv[0] == 0.0:
            rank = 0
            continue
        rank = int(np.sum(sv > thresh * sv[0]))
        if rank == d:
            return k
    raise HypothesisHError(
        f"Hypothesis H fails: derivatives of gamma at 0 up to order {k_max} "
        f"reach rank {rank} < d={d}", rank, k_max, sv)


def _make_curve(spec, d: int):
    if spec is None or spec == "monomial":
        return PolynomialCurve.monomial(d)
    if isinstance(spec, (PolynomialCurve, CallableCurve)):
        return spec
    if callable(spec):
        return CallableCurve(spec, d)
    if isinstance(spec, Mapping):
        if set(spec) != {"coefficients"}:
            raise ModelError(f"gamma: unknown keys {sorted(set(spec) - {'coefficients'})}")
        return PolynomialCurve(spec["coefficients"])
    if isinstance(spec, str):
        raise ModelError(f"gamma: unknown preset {spec!r} (known: 'monomial')")
    return PolynomialCurve(spec)


def _make_nu(spec, delta: float):
    if spec is None or spec == "quartic":
        return QuarticWeight(delta if delta < 1 else 0.5)
    if callable(spec):
        return spec
    raise ModelError(f"nu: unknown preset {spec!r} (known: 'quartic')")


def build_model(alpha: float = 0.5, big_c: float = 1.0, d: int = 2, cutoff_inner: float = 0.5,
                gamma=None, nu=None, quadrature: QuadratureConfig | Mapping | None = None,
                big_c_neg: float | None = None, k_max: int | None = None,
                require_hypothesis_h: bool = True) -> LevyModel:
    """Validate parameters and build a :class:`LevyModel`.

    ``cutoff_inner = 1`` selects the hard-truncated pure power law.  With
    ``require_hypothesis_h=False`` a rank-deficient curve is accepted and
    ``k_hyp`` is ``None`` (used to exhibit the failure modes downstream).
    """
    if not (isinstance(alpha, (int, float)) and 0.0 < alpha < 1.0):
        raise ModelError(f"alpha={alpha} violates alpha ∈ ]0,1[ (stability index must lie in (0, 1))")
    if not big_c > 0:
        raise ModelError(f"big_c must be positive, got {big_c}")
    big_c_neg = big_c if big_c_neg is None else big_c_neg
    if not big_c_neg > 0:
        raise ModelError(f"big_c_neg must be positive, got {big_c_neg}")
    if int(d) != d or d < 1:
        raise ModelError(f"d must be a positive integer, got {d}")
    d = int(d)
    if not 0.0 < cutoff_inner <= 1.0:
        raise ModelError(f"cutoff_inner must lie in (0, 1], got {cutoff_inner}")
    if quadrature is None:
        quadrature = QuadratureConfig()
    elif isinstance(quadrature, Mapping):
        quadrature = QuadratureConfig(**quadrature)

    curve = _make_curve(gamma, d)
    if curve.dim != d:
        raise ModelError(f"gamma has dimension {curve.dim}, expected d={d}")
    g0 = curve(np.zeros(1))[0]
    if np.max(np.abs(g0)) > 1e-12:
        raise ModelError(f"gamma(0) must vanish, got {g0}")
    nu_fn = _make_nu(nu, cutoff_inner)

    k_max = k_max if k_max is not None else 2 * d + 2
    try:
        k_hyp = check_hypothesis_h(curve, k_max, d)
    except HypothesisHError:
        if require_hypothesis_h:
            raise
        k_hyp = None

    model = LevyModel(alpha=float(alpha), big_c=float(big_c), d=d,
                      cutoff_inner=float(cutoff_inner), gamma=curve, nu=nu_fn,
                      quadrature=quadrature, big_c_neg=float(big_c_neg), k_hyp=k_hyp,
                      eq1_integral=math.nan)
    eq1 = levy_integral(model, lambda z: np.minimum(z * z, 1.0))
    if not (math.isfinite(eq1) and eq1 > 0):
        raise ModelError(f"∫(z²∧1) g dz = {eq1} is not finite and positive")
    object.__setattr__(model, "eq1_integral", float(eq1))
    return model


_MODEL_KEYS = {"alpha", "big_c", "big_c_neg", "d", "cutoff_inner", "gamma", "nu", "quadrature",
               "k_max"}


def model_from_config(cfg: Mapping, *, require_hypothesis_h: bool = True) -> LevyModel:
    """Build a model from a JSON-style mapping (keys of :func:`build_model`)."""
    unknown = set(cfg) - _MODEL_KEYS
    if unknown:
        raise ModelError(f"model: unknown keys {sorted(unknown)}")
    params = dict(cfg)
    model = build_model(require_hypothesis_h=require_hypothesis_h, **params)
    object.__setattr__(model, "config", params)
    return model


def unit_directions(d: int, n: int, seed: int = 0) -> np.ndarray:
    """``n`` quasi-uniform unit vectors in R^d (evenly spaced angles when ``d == 2``)."""
    if d == 1:
        base = np.array([[1.0], [-1.0]])
        return np.resize(base, (n, 1))
    if d == 2:
        theta = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def as_vector(x, d: int, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (d,):
        raise ValueError(f"{name} must have length {d}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v

