import math

import numpy as np
import pytest
from scipy.integrate import quad

from levyld.hamiltonian import hamiltonian_value, mean_drift, scaled_cumulant
from levyld.model import build_model
from levyld.ratefn import legendre
from levyld.simulate import (SimConfig, SimulationError, block_stream, default_eps_cut,
                             hit_probability, jump_plan, sample_paths, sample_tilted,
                             sample_trajectory, small_jump_variance)

import oracles


@pytest.fixture(scope="module")
def model():
    return build_model()


def _mgf_z(batch, xi, ref, weighted=False):
    e = np.exp(batch.endpoints @ xi)
    if weighted:
        e = e * np.exp(batch.log_weights)
    mean = e.mean()
    se = e.std(ddof=1) / math.sqrt(len(e))
    return (mean - math.exp(ref)) / se


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(h=0.0)
    with pytest.raises(ValueError):
        SimConfig(h=0.5, eps_cut=1.5)
    with pytest.raises(ValueError):
        SimConfig(h=0.5, seed=-1)
    with pytest.raises(ValueError):
        SimConfig(h=0.5, convention="other")


def test_no_retained_jumps_gives_pure_drift(model):
    cfg = SimConfig(h=0.5, eps_cut=1.0, n_paths=10, seed=1)
    batch = sample_paths(model, cfg, [0.1, 0.2])
    assert np.all(batch.n_jumps == 0)
    np.testing.assert_allclose(batch.endpoints, np.tile([0.1, 0.2] + mean_drift(model), (10, 1)),
                               atol=1e-12)


def test_mean_endpoint(model):
    batch = sample_paths(model, SimConfig(h=1.0, n_paths=100_000, seed=2))
    mean = batch.endpoints.mean(axis=0)
    se = batch.endpoints.std(axis=0, ddof=1) / math.sqrt(len(batch))
    ref = oracles.jump_integral(lambda z: np.stack([z, z * z], 1))
    assert np.all(np.abs(mean - ref) <= 3 * se)


def test_jump_count(model):
    h = 0.5
    cfg = SimConfig(h=h, n_paths=20_000, seed=3)
    plan = jump_plan(model, cfg)
    eps = plan.eps
    lam = 2 * quad(lambda r: r ** -1.5 * oracles.taper(r, 0.5), eps, 1.0, points=[0.5],
                   limit=200)[0] / h
    assert plan.rate == pytest.approx(lam, rel=1e-7)
    n = sample_paths(model, cfg).n_jumps
    assert abs(n.mean() - lam) <= 3 * n.std(ddof=1) / math.sqrt(len(n))


@pytest.mark.parametrize("h", [1.0, 0.5, 0.25])
def test_mgf_law(model, h):
    batch = sample_paths(model, SimConfig(h=h, n_paths=40_000, seed=int(100 * h)))
    for xi in ([1.0, 0.0], [0.0, 1.0], [-0.6, 0.8], [0.5, -0.5], [-1.0, 0.0]):
        xi = np.array(xi)
        assert abs(_mgf_z(batch, xi, scaled_cumulant(model, h, 1.0, xi))) <= 3


def test_zero_tilt_matches_untilted(model):
    a = sample_paths(model, SimConfig(h=0.5, n_paths=2000, seed=4))
    b = sample_paths(model, SimConfig(h=0.5, n_paths=2000, seed=4, tilt=np.zeros(2)))
    assert np.array_equal(a.endpoints, b.endpoints)
    assert np.all(b.log_weights == 0.0)


def test_tilted_weights_unbiased(model):
    # The weights are heavy tailed, so the sample standard error is unreliable; the exact
    # one follows from E_eta[(w e^<xi,X>)^2] = exp(H(2 xi - eta) + H(eta)).
    eta = legendre(model, [1.5, 1.0]).xi_star
    n = 100_000
    batch = sample_paths(model, SimConfig(h=1.0, n_paths=n, seed=5, tilt=eta))
    w = np.exp(batch.log_weights)
    checked = 0
    for xi in ([0.0, 0.0], [1.0, 0.0], [0.8, -0.6], [0.6, 0.0], [0.0, 1.0], [-0.6, 0.8]):
        xi = np.array(xi)
        ref = math.exp(scaled_cumulant(model, 1.0, 1.0, xi))
        m2 = math.exp(hamiltonian_value(model, 2 * xi - eta) + hamiltonian_value(model, eta))
        rel_se = math.sqrt(m2 / ref ** 2 - 1) / math.sqrt(n)
        if rel_se > 0.05:
            continue
        est = np.mean(w * np.exp(batch.endpoints @ xi))
        assert abs(est / ref - 1) <= 3 * rel_se
        checked += 1
    assert checked >= 3


def test_tilt_moves_endpoints(model):
    eta = legendre(model, [1.5, 1.0]).xi_star
    batch = sample_paths(model, SimConfig(h=0.25, n_paths=4000, seed=6, tilt=eta))
    assert np.linalg.norm(batch.endpoints.mean(axis=0) - [1.5, 1.0]) < 0.05


def test_determinism_and_worker_independence(model):
    cfg = SimConfig(h=0.5, n_paths=3000, seed=42, block_size=250)
    a = sample_paths(model, cfg)
    b = sample_paths(model, cfg)
    c = sample_paths(model, SimConfig(h=0.5, n_paths=3000, seed=42, block_size=250, workers=4))
    assert a.endpoints.tobytes() == b.endpoints.tobytes() == c.endpoints.tobytes()
    d = sample_paths(model, SimConfig(h=0.5, n_paths=3000, seed=43, block_size=250))
    assert a.endpoints.tobytes() != d.endpoints.tobytes()


def test_single_path_samplers_share_block_streams(model):
    cfg = SimConfig(h=0.5, n_paths=3, seed=9, block_size=1)
    batch = sample_paths(model, cfg)
    for b in range(3):
        tr = sample_trajectory(model, cfg, block_stream(9, b))
        np.testing.assert_array_equal(tr.endpoint, batch.endpoints[b])
        assert tr.n_jumps == batch.n_jumps[b]
    eta = np.array([0.5, 0.2])
    tcfg = cfg.with_tilt(eta)
    tb = sample_paths(model, tcfg)
    ts = sample_tilted(model, tcfg, block_stream(9, 0))
    np.testing.assert_array_equal(ts.endpoint, tb.endpoints[0])
    assert ts.log_weight == tb.log_weights[0]
    with pytest.raises(ValueError):
        sample_tilted(model, cfg, block_stream(9, 0))


def test_default_eps_budget(model):
    for h in (1.0, 0.25):
        eps = default_eps_cut(model, h)
        assert small_jump_variance(model, h, eps) == pytest.approx(1e-4, rel=1e-6)
        # (1/h) ∫_{|z|<eps} (z^2 + z^4) |z|^{-3/2} dz in closed form
        ref = 2 * (eps ** 1.5 / 1.5 + eps ** 3.5 / 3.5) / h
        assert small_jump_variance(model, h, eps) == pytest.approx(ref, rel=1e-8)


def test_compensation_accuracy(model):
    h = 0.5
    eps0 = default_eps_cut(model, h)
    bounds, means, ses = [], [], []
    for k in range(3):
        eps = eps0 / 2 ** k
        bounds.append(small_jump_variance(model, h, eps))
        b = sample_paths(model, SimConfig(h=h, n_paths=20_000, seed=12, eps_cut=eps))
        means.append(b.endpoints.mean(axis=0))
        ses.append(b.endpoints.std(axis=0, ddof=1) / math.sqrt(len(b)))
    assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:]))
    for k in range(2):
        change = np.abs(means[k + 1] - means[k])
        assert np.all(change <= bounds[k] + 3 * np.hypot(ses[k], ses[k + 1]))


def test_huge_ball_has_probability_one(model):
    est = hit_probability(model, SimConfig(h=0.5, n_paths=2000, seed=13), [0, 0], [0, 0], 1e3)
    assert est.value == pytest.approx(1.0, abs=1e-12)


def test_ball_at_mean(model):
    m = mean_drift(model)
    logs = []
    for h in (0.5, 0.25, 0.125):
        est = hit_probability(model, SimConfig(h=h, n_paths=20_000, seed=14), [0, 0], m, 0.5)
        assert 0 < est.value <= 1
        logs.append(est.log_value)
    assert logs[0] < logs[1] < logs[2] < 0


def test_runaway_tilt_is_refused(model):
    with pytest.raises(SimulationError):
        jump_plan(model, SimConfig(h=0.01, n_paths=10, tilt=np.array([400.0, 400.0])))
