import math

import numpy as np
import pytest

from levyld.model import build_model
from levyld.tauberian import (FamilyMember, TestFamily, fit_exponent, malliavin_member,
                              monomial_member, polynomial_family, tau, uniform_decay)

import oracles


@pytest.fixture(scope="module")
def power_law():
    return build_model(cutoff_inner=1.0)


@pytest.fixture(scope="module")
def model():
    return build_model()


def test_beta_zero(model):
    assert tau(monomial_member(1.0, 2), model, 0.0) == 0.0


def test_matches_dense_oracle(power_law):
    f = monomial_member(1.5, 3)
    for beta in (1.0, 1e2, 1e4):
        ref = oracles.jump_integral(lambda z: np.expm1(-beta * np.abs(1.5 * z ** 3)), delta=1.0,
                                    n=400001)
        assert tau(f, power_law, beta) == pytest.approx(ref, rel=1e-6)


def test_z_squared_exponent(power_law):
    # w = beta^{1/2} z scaling: tau ~ -c beta^{alpha/2}
    fam = TestFamily([monomial_member(1.0, 2)], 2, 10.0, 1.0)
    rep = uniform_decay(fam, power_law, np.logspace(2, 6, 5))
    assert abs(rep.alpha1_hat - 0.25) <= 0.05


def test_monotone_in_beta(model):
    rng = np.random.default_rng(31)
    for _ in range(10):
        f = monomial_member(rng.choice([1.0, 1.5, 2.0]), int(rng.integers(1, 5)))
        beta = 10 ** rng.uniform(0, 8)
        assert tau(f, model, 2 * beta) <= tau(f, model, beta)


def test_scale_covariance(model):
    f = monomial_member(1.0, 3)
    for lam in (0.5, 2.0, 7.0):
        for beta in (10.0, 1e4):
            assert tau(f.scaled(lam), model, beta) == pytest.approx(tau(f, model, lam * beta),
                                                                     rel=1e-13)


def test_nonpositive_and_matches_oracle(model):
    f = monomial_member(2.0, 1)
    vals = tau(f, model, np.logspace(0, 12, 7))
    assert np.all(vals <= 0)
    # -tau = ∫ (1 - e^{-beta |f|}) g, computed separately
    for beta, v in zip(np.logspace(0, 12, 7), vals):
        ref = -oracles.jump_integral(lambda z: -np.expm1(-beta * np.abs(2.0 * z)), n=4000001)
        assert v == pytest.approx(ref, rel=1e-6)


def test_family_worst_member(model):
    rep = uniform_decay(polynomial_family(4), model, np.logspace(2, 12, 11))
    assert set(rep.worst_member[len(rep.worst_member) // 2:]) == {"1*z^4"}
    sup = np.array(rep.sup_tau)
    fam = polynomial_family(4)
    table = np.array([tau(f, model, np.logspace(2, 12, 11)) for f in fam.members])
    np.testing.assert_allclose(sup, table.max(axis=0), rtol=1e-12)


def test_rejects_identically_zero_member():
    zero = FamilyMember(lambda z: np.zeros_like(z), "0")
    with pytest.raises(ValueError, match="nondegeneracy"):
        TestFamily([zero], 4, 100.0, 0.5)


def test_rejects_bad_members():
    shifted = FamilyMember(lambda z: 1.0 + z, "1+z")
    with pytest.raises(ValueError):
        TestFamily([shifted], 2, 100.0, 0.5)
    with pytest.raises(ValueError):
        TestFamily([monomial_member(50.0, 2)], 2, 10.0, 0.5)


def test_grid_validation(model):
    fam = polynomial_family(2)
    with pytest.raises(ValueError):
        uniform_decay(fam, model, [1e2, 1e3, 1e4])
    with pytest.raises(ValueError):
        uniform_decay(fam, model, [1e2, 1e3, 1e5, 1e6])


def test_fit_exponent_exact():
    beta = np.logspace(1, 5, 5)
    slope, icpt = fit_exponent(beta, -3.0 * beta ** 0.2)
    assert slope == pytest.approx(0.2, rel=1e-12)
    assert math.exp(icpt) == pytest.approx(3.0, rel=1e-12)


def test_malliavin_member_links_laplace_exponent(model):
    from levyld.malliavin import laplace_exponent_v
    h, xi = 0.5, np.array([0.6, 0.8])
    f = malliavin_member(model, h, xi)
    for beta in (1.0, 1e3):
        assert (tau(f, model, beta) / h ==
                pytest.approx(laplace_exponent_v(model, h, 1.0, beta, xi), rel=1e-5))
