"""Uniform power-law decay of ``tau_f(beta) = ∫ (exp(-beta |f(z)|) - 1) g(z) dz``.

For ``f(z) ~ c z^k`` at the origin and ``g ~ C |z|^{-1-alpha}``, the
substitution ``w = beta^{1/k} z`` gives ``tau_f(beta) ~ -A beta^{alpha/k}``.
Over a family whose members have a nonvanishing derivative of order at most
``K`` at zero, the least negative member decays like ``beta^{alpha/K}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import CallableCurve, LevyModel, levy_integral


@dataclass(frozen=True)
class FamilyMember:
    """Scalar ``f`` with ``f(0) = 0``; ``derivative(z, k)`` defaults to finite differences."""

    func: Callable[[np.ndarray], np.ndarray]
    name: str = "f"
    derivative_fn: Callable | None = None

    def __call__(self, z):
        return np.asarray(self.func(np.asarray(z, dtype=float)), dtype=float)

    def derivative(self, z, k: int) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if k == 0:
            return self(z)
        if self.derivative_fn is not None:
            return np.asarray(self.derivative_fn(z, k), dtype=float)
        curve = CallableCurve(lambda w: self(w)[:, None], 1)
        return curve.derivative(z, k)[:, 0]

    def scaled(self, lam: float) -> "FamilyMember":
        d = self.derivative_fn
        return FamilyMember(lambda z: lam * self.func(z), f"{lam:g}*{self.name}",
                            None if d is None else (lambda z, k: lam * d(z, k)))


def monomial_member(c: float, k: int) -> FamilyMember:
    """``c z^k`` on ``[-1, 1]`` (the support of ``g``, so no cutoff is visible)."""
    if k < 1:
        raise ValueError("k must be at least 1")

    def f(z):
        return c * z ** k

    def deriv(z, j):
        if j > k:
            return np.zeros_like(z)
        return c * math.factorial(k) / math.factorial(k - j) * z ** (k - j)

    return FamilyMember(f, f"{c:g}*z^{k}", deriv)


@dataclass(frozen=True)
class TestFamily:
    __test__ = False      # not a pytest class

    members: list
    K: int
    deriv_bound: float
    nondegen_const: float

    def __post_init__(self):
        if not self.members:
            raise ValueError("family is empty")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not self.nondegen_const > 0:
            raise ValueError("nondegen_const must be positive")
        grid = np.linspace(-1.0, 1.0, 201)
        zero = np.zeros(1)
        for f in self.members:
            if abs(float(f(zero)[0])) > 1e-12:
                raise ValueError(f"member {f.name} has f(0) != 0")
            at0 = max(abs(float(f.derivative(zero, k)[0])) for k in range(1, self.K + 1))
            if at0 < self.nondegen_const:
                raise ValueError(
                    f"member {f.name}: max_(k<=K) |f^(k)(0)| = {at0:.3g} is below "
                    f"{self.nondegen_const:g} (nondegeneracy fails)")
            sup = max(float(np.max(np.abs(f.derivative(grid, k)))) for k in range(0, self.K + 1))
            if sup > self.deriv_bound:
                raise ValueError(f"member {f.name}: derivative bound {sup:.3g} exceeds "
                                 f"{self.deriv_bound:g}")


def polynomial_family(K: int = 4, coefficients=(1.0, 1.5, 2.0)) -> TestFamily:
    """``{c z^k : 1 <= k <= K, c in coefficients}``."""
    members = [monomial_member(c, k) for k in range(1, K + 1) for c in coefficients]
    cmax = max(abs(c) for c in coefficients)
    bound = cmax * math.factorial(K) * 1.000001
    const = min(abs(c) for c in coefficients) * 0.999999
    return TestFamily(members, K, bound, const)


def tau(f: FamilyMember, model: LevyModel, beta):
    """``∫ (exp(-beta |f(z)|) - 1) g(z) dz``; vectorised over ``beta``."""
    b = np.asarray(beta, dtype=float)
    if np.any(b < 0):
        raise ValueError("beta must be non-negative")
    flat = b.ravel()
    val = np.asarray(levy_integral(
        model, lambda z: np.expm1(-np.outer(np.abs(f(z)), flat))), dtype=float)
    val = np.minimum(val, 0.0)
    return float(val[0]) if b.ndim == 0 else val.reshape(b.shape)


@dataclass(frozen=True)
class DecayReport:
    alpha1_hat: float
    intercept: float
    beta_grid: list
    sup_tau: list
    worst_member: list
    fit_points: int
    verdict: str
    message: str = ""


def fit_exponent(beta, values) -> tuple[float, float]:
    """Slope and intercept of ``log(-values)`` against ``log beta``."""
    x = np.log(np.asarray(beta, dtype=float))
    y = np.log(-np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def uniform_decay(family: TestFamily, model: LevyModel, beta_grid) -> DecayReport:
    """Fit ``sup_f tau_f(beta) ≈ -c beta^{alpha_1}`` on the upper half of ``beta_grid``."""
    beta = np.asarray(beta_grid, dtype=float)
    if beta.ndim != 1 or len(beta) < 4:
        raise ValueError("beta_grid needs at least four points")
    if np.any(beta <= 0) or np.any(np.diff(beta) <= 0):
        raise ValueError("beta_grid must be positive and increasing")
    ratios = beta[1:] / beta[:-1]
    if np.max(ratios) / np.min(ratios) > 1 + 1e-6:
        raise ValueError("beta_grid must be log-spaced")
    table = np.array([tau(f, model, beta) for f in family.members])   # (members, betas)
    worst = np.argmax(table, axis=0)
    sup = table[worst, np.arange(len(beta))]
    names = [family.members[i].name for i in worst]
    bad = [i for i in range(1, len(beta)) if sup[i] >= 0]
    if bad:
        i = bad[0]
        return DecayReport(math.nan, math.nan, beta.tolist(), sup.tolist(), names, 0, "FAIL",
                           f"sup tau >= 0 at beta={beta[i]:g}, attained by {names[i]}")
    half = len(beta) // 2
    slope, intercept = fit_exponent(beta[half:], sup[half:])
    verdict = "PASS" if slope > 0 else "FAIL"
    return DecayReport(slope, intercept, beta.tolist(), sup.tolist(), names, len(beta) - half,
                       verdict, "" if slope > 0 else "fitted exponent is not positive")


def malliavin_member(model: LevyModel, h: float, xi) -> FamilyMember:
    """``f(z) = 2 nu(hz) <gamma'(hz), xi>^2``: the integrand of the Malliavin Laplace exponent."""
    xi = np.asarray(xi, dtype=float)

    def f(z):
        gp = model.gamma.derivative(h * z, 1)
        return 2.0 * model.nu(h * z) * (gp @ xi) ** 2
    return FamilyMember(f, f"malliavin(h={h:g})")
