"""The cumulant functional ``H(xi) = ∫ (exp<gamma(z), xi> - 1) g(z) dz``.

``H`` is x-independent (convolution semigroup) and finite for every ``xi``
because ``g`` is supported in ``[-1, 1]``.  Gradient and Hessian are
computed by differentiating under the integral sign.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LevyModel, as_vector, levy_integral


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    quad_error: float


def hamiltonian(model: LevyModel, xi) -> HamiltonianValue:
    """Value, gradient and Hessian of ``H`` at ``xi``.

    Overflow of ``exp<gamma, xi>`` yields ``value = inf`` rather than an error,
    so line searches can treat it as an infeasible trial point.
    """
    d = model.d
    xi = as_vector(xi, d, "xi")
    iu = np.triu_indices(d)

    def integrand(z):
        gam = model.gamma_at(z)                  # (n, d)
        s = gam @ xi
        e = np.exp(s)
        out = np.empty((z.size, 1 + d + len(iu[0])))
        out[:, 0] = np.expm1(s)
        out[:, 1:1 + d] = gam * e[:, None]
        out[:, 1 + d:] = (gam[:, iu[0]] * gam[:, iu[1]]) * e[:, None]
        return out

    est, err = levy_integral(model, integrand, full_output=True)
    value = float(est[0])
    grad = np.array(est[1:1 + d])
    hess = np.zeros((d, d))
    hess[iu] = est[1 + d:]
    hess = hess + np.triu(hess, 1).T
    return HamiltonianValue(value=value, grad=grad, hess=hess, quad_error=float(np.max(err)))


def hamiltonian_value(model: LevyModel, xi) -> float:
    """``H(xi)`` alone (cheaper than :func:`hamiltonian`)."""
    xi = as_vector(xi, model.d, "xi")
    return float(levy_integral(model, lambda z: np.expm1(model.gamma_at(z) @ xi)))


def mean_drift(model: LevyModel) -> np.ndarray:
    """``m = ∇H(0) = ∫ gamma(z) g(z) dz``."""
    return np.asarray(levy_integral(model, model.gamma_at), dtype=float)


def scaled_cumulant(model: LevyModel, h: float, t: float, xi) -> float:
    """``(t/h) H(h xi)``: log-MGF of ``X_t - x`` under the generator ``(1/h) L^h``."""
    if not 0.0 < h <= 1.0:
        raise ValueError(f"h must lie in (0, 1], got {h}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    xi = as_vector(xi, model.d, "xi")
    return (t / h) * hamiltonian_value(model, h * xi)
