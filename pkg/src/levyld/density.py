"""Heat-kernel estimates by weighted ball counting, and the h-sweeps comparing
``h log p`` (or ``h log P(O)``) with the rate-function bound.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import hamiltonian
from .model import LevyModel, as_vector
from .ratefn import LegendreError, legendre, rate_inf_ball, rate_l
from .simulate import (SampleBatch, SimConfig, SimulationError, hit_probability, jump_plan, sample_paths,
                       weighted_indicator_mean)

CSV_COLUMNS = ("h", "log_est", "h_log_est", "neg_rate", "slack", "stderr", "verdict")
ZERO_HIT_FLAG = "zero hits in the ball; increase n_paths or enlarge the radius"


def ball_volume(d: int, r: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r ** d


@dataclass(frozen=True)
class DensityEstimate:
    h: float
    x: np.ndarray
    y: np.ndarray
    ball_radius: float
    value: float
    log_value: float
    stderr: float
    log_stderr: float
    n_effective: float
    n_hits: int
    n_paths: int
    tilt: np.ndarray
    flag: str | None = None


def density_tilt(model: LevyModel, x, y, t: float = 1.0) -> np.ndarray | None:
    """``xi*((y - x)/t)``, or ``None`` when that velocity has infinite cost."""
    try:
        rp = legendre(model, (np.asarray(y, float) - np.asarray(x, float)) / t)
    except LegendreError:
        return None
    return rp.xi_star if rp.finite else None


def _ball_estimates(batch: SampleBatch, y, radii, d, estimator):
    dist2 = np.sum((batch.endpoints - y) ** 2, axis=1)
    out = []
    for r in radii:
        wm = weighted_indicator_mean(batch.log_weights, dist2 <= r * r, estimator)
        out.append(wm)
    return out


def _to_estimate(wm, cfg, x, y, r, tilt, d) -> DensityEstimate:
    vol = ball_volume(d, r)
    flag = ZERO_HIT_FLAG if wm.n_hits == 0 else None
    log_value = wm.log_value - math.log(vol)
    value = math.exp(log_value) if wm.n_hits else 0.0
    return DensityEstimate(cfg.h, x, y, r, value, log_value, wm.stderr / vol, wm.log_stderr,
                           wm.n_effective, wm.n_hits, cfg.n_paths, tilt, flag)


def estimate_density(model: LevyModel, cfg: SimConfig, x, y, r: float, *,
                     estimator: str = "raw") -> DensityEstimate:
    """Weighted fraction of endpoints in the ball ``B(y, r)`` divided by its volume.

    The tilt defaults to ``xi*((y - x)/t)`` so that tilted paths end near
    ``y``.  If that velocity is unreachable, or the tilted jump rate is
    unmanageable, the untilted law is used.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    d = model.d
    x = as_vector(x, d, "x")
    y = as_vector(y, d, "y")
    if cfg.tilt is None:
        tilt = density_tilt(model, x, y, cfg.t)
        cfg = cfg.with_tilt(tilt)
    try:
        jump_plan(model, cfg)
    except SimulationError:
        cfg = cfg.with_tilt(None)
    tilt = np.zeros(d) if cfg.tilt is None else cfg.tilt
    batch = sample_paths(model, cfg, x)
    (wm,) = _ball_estimates(batch, y, [r], d, estimator)
    return _to_estimate(wm, cfg, x, y, r, tilt, d)


# ------------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepRow:
    h: float
    log_est: float
    h_log_est: float
    neg_rate: float
    slack: float
    stderr: float
    verdict: str
    radius: float | None = None
    n_hits: int = 0
    n_effective: float = 0.0
    radius_drift: float | None = None

    def csv_values(self):
        return [self.h, self.log_est, self.h_log_est, self.neg_rate, self.slack, self.stderr,
                self.verdict]


@dataclass(frozen=True)
class SweepTable:
    """Rows sorted by decreasing ``h``; ``stderr`` is the standard error of ``h log est``."""

    kind: str
    rows: list
    chi_tol: float
    verdict: str
    monotone: bool
    details: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row.csv_values()])
        return buf.getvalue()


def slack_monotone(rows, n_se: float = 3.0) -> bool:
    """Slack non-increasing in ``h``: ``slack`` may not drop as ``h`` decreases by more than
    ``n_se`` combined standard errors."""
    for a, b in zip(rows, rows[1:]):
        band = n_se * math.hypot(a.stderr, b.stderr)
        if b.slack < a.slack - band:
            return False
    return True


def _verdict(kind, rows, chi_tol, details) -> SweepTable:
    if any(r.verdict == "ZERO_HITS" for r in rows):
        return SweepTable(kind, rows, chi_tol, "INCONCLUSIVE", False, details)
    monotone = slack_monotone(rows)
    ok = all(r.verdict == "PASS" for r in rows) and monotone
    return SweepTable(kind, rows, chi_tol, "PASS" if ok else "FAIL", monotone, details)


def _check_grid(h_grid):
    hs = [float(h) for h in h_grid]
    if not hs:
        raise ValueError("h_grid is empty")
    if any(not 0 < h <= 1 for h in hs):
        raise ValueError("h values must lie in (0, 1]")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h_grid must be strictly decreasing")
    return hs


class _RowList(list):
    def __init__(self, callback):
        super().__init__()
        self.callback = callback

    def append(self, row):
        super().append(row)
        if self.callback is not None:
            self.callback(row)


def row_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def default_radius(model: LevyModel, x, y, h: float, n_paths: int, t: float = 1.0,
                   min_hits: float = 50.0, floor: float = 0.05) -> float:
    """``max(floor, c sqrt(h))`` with ``c`` chosen so the Gaussian proxy of the tilted law
    puts ``min_hits`` expected endpoints in the ball."""
    d = model.d
    tilt = density_tilt(model, x, y, t)
    if tilt is None:
        return floor
    cov = t * hamiltonian(model, tilt).hess
    det = max(float(np.linalg.det(cov)), 1e-300)
    # expected hits = n * vol_d(c sqrt h) / ((2 pi h)^{d/2} sqrt(det))
    unit = ball_volume(d, 1.0)
    c = (min_hits * (2 * math.pi) ** (d / 2) * math.sqrt(det) / (n_paths * unit)) ** (1 / d)
    return max(floor, c * math.sqrt(h))


def varadhan_sweep(model: LevyModel, x, y, h_grid, n_paths: int, *, seed: int = 0,
                   r_rule=None, chi_tol: float = 0.2, t: float = 1.0, workers: int = 1,
                   estimator: str = "raw", radius_tol: float = 0.1,
                   max_tighten: int = 3, on_row=None) -> SweepTable:
    """Rows ``(h, h log p(x, y), -l(x, y))`` from tilted ball-counting estimates.

    A row passes when ``h log p <= -l + chi_tol``.  The table passes when all
    rows pass and the slack is non-increasing in ``h`` (within three combined
    standard errors); any zero-hit row makes it ``INCONCLUSIVE``.  ``on_row`` is
    called with each finished row.  The radius
    is halved (reusing the samples) while the estimates at ``r`` and ``r/2``
    differ by more than ``radius_tol`` in log scale and the ``r/2`` estimate is
    precise enough to tell.
    """
    hs = _check_grid(h_grid)
    d = model.d
    x = as_vector(x, d, "x")
    y = as_vector(y, d, "y")
    neg_rate = -rate_l(model, x, y) if t == 1.0 else -t * legendre(model, (y - x) / t).value
    tilt = density_tilt(model, x, y, t)
    rows = _RowList(on_row)
    for i, h in enumerate(hs):
        r = r_rule(h) if r_rule is not None else default_radius(model, x, y, h, n_paths, t)
        cfg = SimConfig(h=h, t=t, n_paths=n_paths, seed=row_seed(seed, i), tilt=tilt,
                        workers=workers)
        try:
            jump_plan(model, cfg)
        except SimulationError:
            cfg = cfg.with_tilt(None)
        batch = sample_paths(model, cfg, x)
        drift = None
        for _ in range(max_tighten + 1):
            wm, half = _ball_estimates(batch, y, [r, r / 2], d, estimator)
            if wm.n_hits == 0 or half.n_hits == 0:
                break
            drift = abs(half.log_value - math.log(ball_volume(d, r / 2))
                        - wm.log_value + math.log(ball_volume(d, r)))
            if drift <= radius_tol or half.log_stderr > radius_tol / 2:
                break
            r = r / 2
        est = _to_estimate(wm, cfg, x, y, r, cfg.tilt, d)
        if est.n_hits == 0:
            rows.append(SweepRow(h, -math.inf, -math.inf, neg_rate, -math.inf, math.inf,
                                 "ZERO_HITS", r, 0, 0.0, None))
            continue
        hle = h * est.log_value
        slack = hle - neg_rate
        rows.append(SweepRow(h, est.log_value, hle, neg_rate, slack, h * est.log_stderr,
                             "PASS" if slack <= chi_tol else "FAIL", r, est.n_hits,
                             est.n_effective, drift))
    return _verdict("varadhan", list(rows), chi_tol,
                    {"x": x.tolist(), "y": y.tolist(), "n_paths": n_paths, "seed": seed,
                     "tilt": None if tilt is None else np.asarray(tilt).tolist()})


def wf_sweep(model: LevyModel, x, center, radius: float, h_grid, n_paths: int, *,
             seed: int = 0, chi_tol: float = 0.2, workers: int = 1,
             estimator: str = "raw", on_row=None) -> SweepTable:
    """Rows ``(h, h log P(X_1 in O), -inf_O l(x, .))`` with ``O`` the open ball."""
    hs = _check_grid(h_grid)
    d = model.d
    x = as_vector(x, d, "x")
    center = as_vector(center, d, "center")
    neg_rate = -rate_inf_ball(model, x, center, radius)
    rows = _RowList(on_row)
    tilt = None
    for i, h in enumerate(hs):
        cfg = SimConfig(h=h, n_paths=n_paths, seed=row_seed(seed, i), workers=workers,
                        tilt=tilt)
        est = hit_probability(model, cfg, x, center, radius, estimator=estimator)
        tilt = est.tilt
        if est.n_hits == 0:
            rows.append(SweepRow(h, -math.inf, -math.inf, neg_rate, -math.inf, math.inf,
                                 "ZERO_HITS", radius, 0, 0.0))
            continue
        hle = h * est.log_value
        slack = hle - neg_rate
        rows.append(SweepRow(h, est.log_value, hle, neg_rate, slack, h * est.log_stderr,
                             "PASS" if slack <= chi_tol else "FAIL", radius, est.n_hits,
                             est.n_effective))
    return _verdict("wf", list(rows), chi_tol,
                    {"x": x.tolist(), "center": center.tolist(), "radius": radius,
                     "n_paths": n_paths, "seed": seed,
                     "tilt": None if tilt is None else np.asarray(tilt).tolist()})
