"""The acceptance checks, shared by the test suite and ``levyld all``.

Each check returns a :class:`CriterionResult` carrying the measured numbers,
the pass/fail decision at the stated tolerance and the wall time against its
budget.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .density import varadhan_sweep, wf_sweep
from .hamiltonian import hamiltonian, scaled_cumulant
from .malliavin import (InverseMomentDivergence, fit_scaling, inverse_moment_mc,
                        inverse_moment_semianalytic, laplace_exponent_v, laplace_mc,
                        sample_extended_batch)
from .model import build_model
from .pathaction import DiscretePath, minimize_action
from .ratefn import growth_check, legendre, rate_l
from .simulate import SimConfig, sample_paths
from .tauberian import TestFamily, monomial_member, polynomial_family, uniform_decay

SEED = 20240611
MGF_XIS = np.array([[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8], [0.5, -0.5], [-1.0, 0.0]])
LAPLACE_PAIRS = [(1e2, (1.0, 0.0)), (1e3, (1.0, 0.0)), (3e2, (0.0, 1.0)),
                 (1e3, (0.6, 0.8)), (1e4, (-0.8, 0.6))]
TAUBERIAN_GRID = np.logspace(2, 12, 11)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    runtime: float
    budget: float
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.passed and self.runtime < self.budget

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        note = "" if self.runtime < self.budget else " (over time budget)"
        summary = self.details.get("summary", "")
        return (f"[{status}] criterion {self.number:2d} {self.name}: {summary} "
                f"({self.runtime:.1f}s / {self.budget:.0f}s){note}")


def _timed(number, name, budget, fn):
    t0 = time.perf_counter()
    passed, details = fn()
    return CriterionResult(number, name, bool(passed), time.perf_counter() - t0, budget, details)


def default_model():
    return build_model()


def _domain_points(rng, n, radius, d=2):
    """Uniform points of the disk of given radius inside the domain of L (second coordinate > 0)."""
    pts = []
    while len(pts) < n:
        p = rng.uniform(-radius, radius, size=d)
        if np.linalg.norm(p) <= radius and p[1] > 0:
            pts.append(p)
    return np.array(pts)


def criterion_1(model=None):
    model = model or default_model()

    def run():
        rng = np.random.default_rng(SEED + 1)
        worst_gap, worst_id = 0.0, 0.0
        for a in _domain_points(rng, 20, 5.0):
            rp = legendre(model, a)
            hv = hamiltonian(model, rp.xi_star)
            worst_gap = max(worst_gap, np.linalg.norm(a - hv.grad) / (1e-8 * (1 + np.linalg.norm(a))))
            worst_id = max(worst_id, abs(rp.value - (a @ rp.xi_star - hv.value)))
        ok = worst_gap <= 1.0 and worst_id <= 1e-10
        return ok, {"max_gap_over_tol": worst_gap, "max_identity_error": worst_id,
                    "summary": f"gap/tol max {worst_gap:.3g}, identity err {worst_id:.2e}"}
    return _timed(1, "duality", 10.0, run)


def criterion_2(model=None):
    model = model or default_model()

    def run():
        rng = np.random.default_rng(SEED + 2)
        worst = 0.0
        for _ in range(10):
            x = rng.uniform(-2, 2, size=2)
            (v,) = _domain_points(rng, 1, 3.0)
            # start off the straight line so the descent has work to do
            start = DiscretePath.straight(x, x + v, 16)
            bump = np.sin(np.pi * start.times)[:, None] * np.array([0.1 * v[1], 0.0])
            init = DiscretePath(start.times, start.points + bump)
            res = minimize_action(model, x, x + v, 16, init=init)
            ref = rate_l(model, x, x + v)
            bound = 1e-5 + 1e-3 * res.stagnation_bound
            worst = max(worst, abs(res.value - ref) / bound)
        return worst <= 1.0, {"max_error_over_bound": worst,
                              "summary": f"|S_16 - l| / bound max {worst:.3g}"}
    return _timed(2, "jensen", 60.0, run)


def criterion_3(model=None):
    model = model or default_model()

    def run():
        rep = growth_check(model, [2.0, 4.0, 8.0, 16.0])
        mins = [r.min_ratio for r in rep.rows]
        spread = max(mins) / min(mins)
        ok = min(mins) > 0 and spread < 5
        return ok, {"min_ratios": mins, "spread": spread,
                    "summary": "min ratios " + ", ".join(f"{m:.3f}" for m in mins)
                               + f"; spread {spread:.3f}"}
    return _timed(3, "growth", 60.0, run)


def criterion_4(model=None, n_paths: int = 100_000):
    model = model or default_model()

    def run():
        worst = 0.0
        table = []
        for i, h in enumerate([1.0, 0.5, 0.25]):
            batch = sample_paths(model, SimConfig(h=h, n_paths=n_paths, seed=SEED + 40 + i))
            for xi in MGF_XIS:
                e = np.exp(batch.endpoints @ xi)
                est = math.log(e.mean())
                se = e.std(ddof=1) / e.mean() / math.sqrt(len(e))
                z = (est - scaled_cumulant(model, h, 1.0, xi)) / se
                table.append((h, xi.tolist(), z))
                worst = max(worst, abs(z))
        return worst <= 3.0, {"z_scores": table, "summary": f"max |z| {worst:.2f}"}
    return _timed(4, "sampler law", 300.0, run)


def criterion_5(model=None, n_paths: int = 200_000):
    model = model or default_model()

    def run():
        tab = wf_sweep(model, [0.0, 0.0], [2.0, 0.0], 0.3, [0.5, 0.25, 0.125], n_paths,
                       seed=SEED + 5)
        slacks = [r.slack for r in tab.rows]
        return tab.verdict == "PASS", {
            "verdict": tab.verdict, "slacks": slacks, "csv": tab.to_csv(),
            "summary": f"{tab.verdict}, slacks " + ", ".join(f"{s:.3f}" for s in slacks)}
    return _timed(5, "wentzel-freidlin", 900.0, run)


def criterion_6(model=None, n_paths: int = 200_000):
    model = model or default_model()

    def run():
        tab = varadhan_sweep(model, [0.0, 0.0], [1.5, 1.0], [0.5, 0.25, 0.125], n_paths,
                             seed=SEED + 6)
        slacks = [r.slack for r in tab.rows]
        return tab.verdict == "PASS", {
            "verdict": tab.verdict, "slacks": slacks, "csv": tab.to_csv(),
            "summary": f"{tab.verdict}, slacks " + ", ".join(f"{s:.3f}" for s in slacks)}
    return _timed(6, "varadhan", 1200.0, run)


_BATCHES = {}


def _malliavin_batch(model, h, n_paths, seed):
    key = (id(model), h, n_paths, seed)
    if key not in _BATCHES:
        cfg = SimConfig(h=h, n_paths=n_paths, seed=seed, convention="malliavin")
        _BATCHES[key] = sample_extended_batch(model, cfg)
    return _BATCHES[key]


def criterion_7(model=None, n_paths: int = 100_000):
    model = model or default_model()

    def run():
        batch = _malliavin_batch(model, 0.25, n_paths, SEED + 7)
        worst = 0.0
        rows = []
        for beta, xi in LAPLACE_PAIRS:
            xi = np.asarray(xi, float)
            mc = laplace_mc(batch, beta, xi)
            ref = math.exp(laplace_exponent_v(model, 0.25, 1.0, beta, xi))
            z = (mc.value - ref) / mc.stderr
            rows.append((beta, xi.tolist(), mc.value, ref, z))
            worst = max(worst, abs(z))
        return worst <= 3.0, {"rows": rows, "summary": f"max |z| {worst:.2f}"}
    return _timed(7, "laplace identity", 300.0, run)


def criterion_8(model=None, n_paths: int = 100_000):
    model = model or default_model()

    def run():
        dirs = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [-0.8, 0.6], [0.28, -0.96]])
        worst = -math.inf
        rows = []
        for h, seed in [(0.5, SEED + 8), (0.25, SEED + 7)]:
            batch = _malliavin_batch(model, h, n_paths, seed)
            for xi in dirs:
                mc = inverse_moment_mc(batch, 1.0, xi)
                bound = inverse_moment_semianalytic(model, h, 1.0, 1.0, xi)
                excess = (mc.value - bound) / mc.stderr
                rows.append((h, xi.tolist(), mc.value, mc.stderr, bound))
                worst = max(worst, excess)
        return worst <= 3.0, {"rows": rows,
                              "summary": f"max (MC - bound)/SE {worst:.1f}"}
    return _timed(8, "bismut", 600.0, run)


def criterion_9(model=None):
    model = model or default_model()

    def run():
        fit = fit_scaling(model, 1.0, 1.0, [0.5, 0.25, 0.125])
        finite = all(np.isfinite(fit.log_moments))
        degenerate = build_model(gamma={"coefficients": [[0.0, 1.0], [0.0, 1.0]]},
                                 require_hypothesis_h=False)
        try:
            fit_scaling(degenerate, 1.0, 1.0, [0.5, 0.25, 0.125])
            diverged, message = False, "no divergence"
        except InverseMomentDivergence as exc:
            diverged, message = True, str(exc)
        ok = finite and np.isfinite(fit.fitted_slope) and fit.r_squared >= 0.9 and diverged
        return ok, {"log_moments": fit.log_moments, "slope": fit.fitted_slope,
                    "r_squared": fit.r_squared, "degenerate_diverged": diverged,
                    "degenerate_message": message,
                    "summary": f"slope {fit.fitted_slope:.3f}, r2 {fit.r_squared:.3f}, "
                               f"degenerate diverges: {diverged}"}
    return _timed(9, "inverse-moment scaling", 600.0, run)


def criterion_10(model=None):
    model = model or default_model()

    def run():
        alpha = model.alpha
        rep = uniform_decay(polynomial_family(4), model, TAUBERIAN_GRID)
        sup_neg = all(s < 0 for b, s in zip(rep.beta_grid, rep.sup_tau) if b >= 1e3)
        z2 = uniform_decay(TestFamily([monomial_member(1.0, 2)], 2, 10.0, 1.0), model,
                           TAUBERIAN_GRID)
        ok = (abs(rep.alpha1_hat - alpha / 4) <= 0.05 and sup_neg
              and abs(z2.alpha1_hat - alpha / 2) <= 0.05)
        return ok, {"alpha1_hat": rep.alpha1_hat, "z2_exponent": z2.alpha1_hat,
                    "worst_member": rep.worst_member[-1],
                    "summary": f"alpha1 {rep.alpha1_hat:.4f} (target {alpha / 4}), "
                               f"z^2 exponent {z2.alpha1_hat:.4f} (target {alpha / 2})"}
    return _timed(10, "tauberian", 60.0, run)


def criterion_11(model=None):
    model = model or default_model()

    def run():
        cfg = SimConfig(h=0.25, n_paths=4000, seed=SEED + 11, block_size=500)
        a = sample_paths(model, cfg).endpoints.tobytes()
        b = sample_paths(model, cfg).endpoints.tobytes()
        cfg3 = SimConfig(h=0.25, n_paths=4000, seed=SEED + 11, block_size=500, workers=3)
        c = sample_paths(model, cfg3).endpoints.tobytes()
        t1 = varadhan_sweep(model, [0, 0], [1.5, 1.0], [0.5, 0.25], 4000, seed=SEED).to_csv()
        t2 = varadhan_sweep(model, [0, 0], [1.5, 1.0], [0.5, 0.25], 4000, seed=SEED).to_csv()
        ok = a == b and t1 == t2
        return ok, {"endpoints_identical": a == b, "csv_identical": t1 == t2,
                    "identical_across_worker_counts": a == c,
                    "summary": f"re-run identical: {a == b and t1 == t2}; "
                               f"1 vs 3 workers identical: {a == c}"}
    return _timed(11, "determinism", 60.0, run)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


def run_all(numbers=None, echo=print) -> list:
    model = default_model()
    results = []
    for i, fn in enumerate(CRITERIA, start=1):
        if numbers and i not in numbers:
            continue
        res = fn(model)
        if echo:
            echo(res.line())
        results.append(res)
    return results
