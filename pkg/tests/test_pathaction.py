import warnings

import numpy as np
import pytest

from levyld.hamiltonian import mean_drift
from levyld.model import build_model
from levyld.pathaction import DiscretePath, action, minimize_action
from levyld.ratefn import legendre, rate_l


@pytest.fixture(scope="module")
def model():
    return build_model()


def test_constant_path(model):
    x = np.array([0.2, 0.4])
    path = DiscretePath(np.linspace(0, 1, 5), np.tile(x, (5, 1)))
    assert action(model, path) == pytest.approx(legendre(model, [0.0, 0.0]).value, rel=1e-12)


def test_mean_path_is_free(model):
    m = mean_drift(model)
    assert abs(action(model, DiscretePath.straight([0, 0], m, 8))) < 1e-12


def test_two_segment_unrolled(model):
    path = DiscretePath(np.array([0.0, 0.5, 1.0]), np.array([[0, 0], [2, 0.5], [1, 1.5]], float))
    ref = 0.5 * legendre(model, [4.0, 1.0]).value + 0.5 * legendre(model, [-2.0, 2.0]).value
    assert action(model, path) == pytest.approx(ref, abs=1e-10)


def test_nonuniform_times_reweight_velocities(model):
    times = np.array([0.0, 0.2, 0.7, 1.0])
    pts = np.array([[0, 0], [0.3, 0.4], [0.9, 0.8], [1.2, 1.5]])
    v = np.diff(pts, axis=0) / np.diff(times)[:, None]
    ref = sum(legendre(model, vi).value * dt for vi, dt in zip(v, np.diff(times)))
    assert action(model, DiscretePath(times, pts)) == pytest.approx(ref, rel=1e-14)


def test_single_segment(model):
    res = minimize_action(model, [0, 0], [1.0, 1.0], 1)
    assert res.value == pytest.approx(rate_l(model, [0, 0], [1.0, 1.0]), abs=1e-12)


def test_sixteen_segments_straight_and_optimal(model):
    x, y = np.zeros(2), np.array([1.0, 1.0])
    start = DiscretePath.straight(x, y, 16)
    bump = np.sin(np.pi * start.times)[:, None] * np.array([0.2, -0.1])
    res = minimize_action(model, x, y, 16, init=DiscretePath(start.times, start.points + bump))
    assert abs(res.value - rate_l(model, x, y)) < 1e-5
    # interior points back on the chord x -> y
    chord = np.outer(res.path.times, y - x) + x
    assert np.max(np.abs(res.path.points - chord)) < 1e-4


def test_mean_endpoint_is_free(model):
    m = mean_drift(model)
    assert minimize_action(model, [0, 0], m, 8).value <= 1e-8


def test_jensen_consistency_and_refinement(model):
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.uniform(-2, 2, 2)
        while True:
            v = rng.uniform(-3, 3, 2)
            if np.linalg.norm(v) <= 3 and v[1] > 0.05:
                break
        ref = legendre(model, v).value
        vals = {}
        for N in (4, 16):
            start = DiscretePath.straight(x, x + v, N)
            bump = np.sin(np.pi * start.times)[:, None] * np.array([0.05 * v[1], 0.0])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize_action(model, x, x + v, N,
                                      init=DiscretePath(start.times, start.points + bump))
            vals[N] = res.value
            assert -1e-5 <= res.value - ref <= 1e-3
        assert vals[16] <= vals[4] + 1e-9 or abs(vals[16] - ref) < 1e-9


def test_dimension_mismatch(model):
    with pytest.raises(ValueError):
        action(model, DiscretePath(np.array([0.0, 1.0]), np.zeros((2, 3))))
