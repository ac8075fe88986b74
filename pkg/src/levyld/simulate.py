"""Monte Carlo sampler for the h-scaled jump process generated by ``(1/h) L^h``.

Jumps with ``|z| >= eps_cut`` arrive at rate ``(1/h) g(z) dz`` (optionally
exponentially tilted); the jumps below ``eps_cut`` are replaced by their
mean displacement.  Two displacement conventions are supported:

* ``"scaled"``: a jump ``z`` moves the state by ``h * gamma(z)``;
* ``"malliavin"``: a jump ``z`` moves the state by ``gamma(h z)`` and also
  feeds the Malliavin matrix (see :mod:`levyld.malliavin`).

Randomness is organised in blocks of ``block_size`` paths.  Block ``b``
draws from its own Philox stream seeded by ``SeedSequence(seed,
spawn_key=(0, b))``, so results do not depend on the worker count or on
scheduling order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .hamiltonian import hamiltonian_value
from .model import LevyModel, as_vector, levy_integral
from .ratefn import minimize_over_ball

CONVENTIONS = ("scaled", "malliavin")
ESTIMATORS = ("raw", "self_normalized")
#: mean number of jumps per path above which a configuration is refused
MAX_JUMPS_PER_PATH = 2e6
#: target for the default truncation rule ``(1/h) ∫_{|z|<eps} |gamma|^2 g <= EPS_BUDGET``
EPS_BUDGET = 1e-4
N_GROUPS = 32


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Sampling parameters.  ``eps_cut=None`` selects the default truncation rule."""

    h: float
    t: float = 1.0
    eps_cut: float | None = None
    n_paths: int = 10_000
    seed: int = 0
    tilt: np.ndarray | None = None
    convention: str = "scaled"
    block_size: int = 1000
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.h <= 1.0:
            raise ValueError(f"h must lie in (0, 1], got {self.h}")
        if not self.t > 0:
            raise ValueError(f"t must be positive, got {self.t}")
        if self.eps_cut is not None and not 0.0 < self.eps_cut <= 1.0:
            raise ValueError(f"eps_cut must lie in (0, 1], got {self.eps_cut}")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if self.block_size < 1 or self.workers < 1:
            raise ValueError("block_size and workers must be positive")
        if self.tilt is not None:
            tilt = np.asarray(self.tilt, dtype=float).ravel()
            if not np.all(np.isfinite(tilt)):
                raise ValueError("tilt must be finite")
            object.__setattr__(self, "tilt", tilt)

    def with_tilt(self, tilt) -> "SimConfig":
        return _replace(self, tilt=None if tilt is None else np.asarray(tilt, float))


def _replace(cfg: SimConfig, **changes) -> SimConfig:
    kw = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    kw.update(changes)
    return SimConfig(**kw)


@dataclass(frozen=True)
class TrajectorySample:
    endpoint: np.ndarray
    n_jumps: int
    log_weight: float = 0.0


@dataclass(frozen=True)
class SampleBatch:
    """Endpoints (and optionally Malliavin data) of ``n`` independent paths."""

    endpoints: np.ndarray            # (n, d)
    n_jumps: np.ndarray              # (n,)
    log_weights: np.ndarray          # (n,)
    v: np.ndarray | None = None      # (n, d, d)
    extras: list = field(default_factory=list)

    def __len__(self):
        return len(self.n_jumps)

    def __getitem__(self, i) -> TrajectorySample:
        return TrajectorySample(self.endpoints[i].copy(), int(self.n_jumps[i]),
                                float(self.log_weights[i]))


# ---------------------------------------------------------------- truncation

def small_jump_variance(model: LevyModel, h: float, eps: float) -> float:
    """``(1/h) ∫_{|z|<eps} |gamma(z)|^2 g(z) dz``."""
    if eps <= 0:
        return 0.0
    hi = min(eps, 1.0)
    return float(levy_integral(model, lambda z: np.sum(model.gamma_at(z) ** 2, axis=1),
                               hi=hi)) / h


def default_eps_cut(model: LevyModel, h: float) -> float:
    """Largest ``eps`` with ``small_jump_variance(h, eps) <= 1e-4`` (``1`` if no cut is needed)."""
    key = ("eps_cut", float(h))
    hit = model._rules.get(key)
    if hit is not None:
        return hit
    if small_jump_variance(model, h, 1.0) <= EPS_BUDGET:
        eps = 1.0
    else:
        f = lambda le: math.log(small_jump_variance(model, h, math.exp(le)) / EPS_BUDGET)
        lo = -1.0
        while f(lo) > 0:
            lo -= 4.0
            if lo < -60:
                raise SimulationError("no truncation radius meets the small-jump budget")
        le = brentq(f, lo, 0.0, xtol=1e-6)
        eps = math.exp(le)
        while small_jump_variance(model, h, eps) > EPS_BUDGET:
            eps *= 1 - 1e-6
    model._rules[key] = eps
    return eps


# -------------------------------------------------------------------- plans

@dataclass(frozen=True)
class JumpPlan:
    """Precomputed rates, drifts and the panel-mixture proposal for one configuration."""

    h: float
    t: float
    eps: float
    convention: str
    tilt: np.ndarray
    rate: float                 # intensity of retained jumps (per unit time)
    drift: np.ndarray           # deterministic small-jump displacement over [0, t]
    v_drift: np.ndarray         # small-jump mean contribution to V over [0, t]
    log_norm: float             # (t/h) H(tilt)
    panels: np.ndarray          # (P, 3): lo, hi, side sign
    envelope: np.ndarray        # (P,) bound on taper * exp<gamma, tilt> per panel
    cum_mass: np.ndarray        # (P,) cumulative proposal mass
    acceptance: float


def _tilt_factor(model, z, tilt):
    if not np.any(tilt):
        return np.ones_like(z)
    with np.errstate(over="ignore"):
        return np.exp(model.gamma(z) @ tilt)


def _panel_grid(model, eps):
    a, delta = model.alpha, model.cutoff_inner
    edges = []
    top = min(delta, 1.0)
    if eps < top:
        n = max(1, math.ceil(math.log(top / eps) / math.log(1.5)))
        edges.append(np.geomspace(eps, top, n + 1))
    if delta < 1.0:
        start = max(eps, delta)
        if start < 1.0:
            n = max(1, math.ceil(16 * (1.0 - start) / (1.0 - delta)))
            edges.append(np.linspace(start, 1.0, n + 1))
    if not edges:
        return np.empty((0, 2))
    e = np.unique(np.concatenate(edges))
    return np.column_stack([e[:-1], e[1:]])


def jump_plan(model: LevyModel, cfg: SimConfig) -> JumpPlan:
    h, t = cfg.h, cfg.t
    eps = default_eps_cut(model, h) if cfg.eps_cut is None else cfg.eps_cut
    d = model.d
    tilt = np.zeros(d) if cfg.tilt is None else as_vector(cfg.tilt, d, "tilt")
    if cfg.convention == "malliavin" and np.any(tilt):
        raise SimulationError("tilting is only implemented for the scaled convention")
    key = ("plan", h, t, eps, cfg.convention, tuple(tilt))
    hit = model._rules.get(key)
    if hit is not None:
        return hit

    tilted = bool(np.any(tilt))
    dens = model.density
    if eps < 1.0:
        def rate_f(z):
            if not tilted:
                return np.ones_like(z)
            with np.errstate(over="ignore"):
                return np.exp(model.gamma_at(z) @ tilt)
        rate = float(levy_integral(model, rate_f, lo=eps)) / h
    else:
        rate = 0.0
    if not np.isfinite(rate) or t * rate > MAX_JUMPS_PER_PATH:
        raise SimulationError(
            f"mean jump count per path {t * rate:.3g} is too large; "
            "use a smaller tilt or a larger eps_cut")

    if cfg.convention == "scaled":
        def drift_f(z):
            gam = model.gamma_at(z)
            return gam * np.exp(gam @ tilt)[:, None] if tilted else gam
        drift = t * levy_integral(model, drift_f, hi=eps) if eps > 0 else np.zeros(d)
        v_drift = np.zeros((d, d))
        log_norm = (t / h) * hamiltonian_value(model, tilt) if tilted else 0.0
    else:
        drift = (t / h) * levy_integral(model, lambda z: model.gamma(h * z), hi=eps)

        def v_f(z):
            gp = model.gamma.derivative(h * z, 1)
            w = model.nu(h * z)
            return (w[:, None, None] * gp[:, :, None] * gp[:, None, :]).reshape(len(z), -1)
        v_drift = ((t / h) * levy_integral(model, v_f, hi=eps)).reshape(d, d)
        log_norm = 0.0

    rows, env, mass = [], [], []
    for sign, c in ((1.0, dens.c_pos), (-1.0, dens.c_neg)):
        for lo, hi in _panel_grid(model, eps):
            zz = sign * np.linspace(lo, hi, 65)
            f = dens.taper(np.abs(zz)) * _tilt_factor(model, zz, tilt)
            m = 1.02 * float(np.max(f))
            if not np.isfinite(m):
                raise SimulationError("tilt overflows exp<gamma(z), tilt>; use a smaller tilt")
            p = c * (lo ** -dens.alpha - hi ** -dens.alpha) / dens.alpha
            if m > 0 and p > 0:
                rows.append((lo, hi, sign))
                env.append(m)
                mass.append(m * p)
    panels = np.array(rows, dtype=float).reshape(-1, 3)
    mass = np.array(mass)
    cum = np.cumsum(mass)
    accept = h * rate / cum[-1] if len(cum) else 1.0
    plan = JumpPlan(h, t, eps, cfg.convention, tilt, rate, np.asarray(drift, float),
                    v_drift, float(log_norm), panels, np.array(env), cum, float(accept))
    model._rules[key] = plan
    return plan


def _draw_jumps(model: LevyModel, plan: JumpPlan, rng: np.random.Generator, m: int):
    """``m`` i.i.d. jump sizes with density proportional to ``exp<gamma, tilt> g`` on ``|z| >= eps``."""
    out = np.empty(m)
    filled = 0
    a = model.alpha
    tilted = bool(np.any(plan.tilt))
    taper = model.density.taper
    while filled < m:
        need = m - filled
        k = int(need / max(plan.acceptance, 1e-3) * 1.05) + 16
        j = np.searchsorted(plan.cum_mass, rng.random(k) * plan.cum_mass[-1], side="right")
        j = np.minimum(j, len(plan.cum_mass) - 1)
        lo, hi, sign = plan.panels[j, 0], plan.panels[j, 1], plan.panels[j, 2]
        u = rng.random(k)
        la, lb = lo ** -a, hi ** -a
        r = (la - u * (la - lb)) ** (-1.0 / a)
        r = np.clip(r, lo, hi)
        z = sign * r
        target = taper(r)
        if tilted:
            target = target * np.exp(model.gamma(z) @ plan.tilt)
        ratio = target / plan.envelope[j]
        if np.any(ratio > 1.0):
            raise SimulationError("rejection envelope violated; refine the jump panels")
        keep = z[rng.random(k) < ratio]
        take = min(len(keep), need)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def _block_sum(values: np.ndarray, owner: np.ndarray, n: int) -> np.ndarray:
    """Per-path sums of rows of ``values`` (shape ``(m, k)``)."""
    return np.stack([np.bincount(owner, weights=values[:, i], minlength=n)
                     for i in range(values.shape[1])], axis=1)


def _sample_block(model: LevyModel, plan: JumpPlan, rng: np.random.Generator, n: int,
                  x: np.ndarray, want_v: bool = False, extra_maps=()):
    d = model.d
    counts = rng.poisson(plan.t * plan.rate, size=n) if plan.rate > 0 else np.zeros(n, int)
    total = int(counts.sum())
    z = _draw_jumps(model, plan, rng, total) if total else np.empty(0)
    owner = np.repeat(np.arange(n), counts)
    h = plan.h
    if plan.convention == "scaled":
        inc = h * model.gamma(z) if total else np.empty((0, d))
    else:
        inc = model.gamma(h * z) if total else np.empty((0, d))
    endpoints = x[None, :] + plan.drift[None, :] + _block_sum(inc, owner, n)

    if np.any(plan.tilt):
        log_w = -((endpoints - x[None, :]) @ plan.tilt) / h + plan.log_norm
    else:
        log_w = np.zeros(n)

    v = None
    extras = []
    if want_v:
        if total:
            gp = model.gamma.derivative(h * z, 1)
            w = model.nu(h * z)
            terms = (w[:, None, None] * gp[:, :, None] * gp[:, None, :]).reshape(total, -1)
            v = _block_sum(terms, owner, n).reshape(n, d, d)
        else:
            v = np.zeros((n, d, d))
        v = v + plan.v_drift[None]
        for gmap in extra_maps:
            if total:
                vals = np.asarray(gmap(h * z), dtype=float).reshape(total, -1)
                extras.append(_block_sum(vals, owner, n))
            else:
                width = np.asarray(gmap(np.zeros(1))).reshape(1, -1).shape[1]
                extras.append(np.zeros((n, width)))
    return endpoints, counts, log_w, v, extras


def block_stream(seed: int, block: int, tag: int = 0) -> np.random.Generator:
    """Counter-based stream for ``block``; independent of how blocks are scheduled."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, int(block)))
    return np.random.Generator(np.random.Philox(ss))


def sample_paths(model: LevyModel, cfg: SimConfig, x=None, *, want_v: bool = False,
                 extra_maps=()) -> SampleBatch:
    """``cfg.n_paths`` paths from ``x`` (tilted when ``cfg.tilt`` is set)."""
    x = np.zeros(model.d) if x is None else as_vector(x, model.d, "x")
    plan = jump_plan(model, cfg)
    n, bs = cfg.n_paths, cfg.block_size
    sizes = [min(bs, n - s) for s in range(0, n, bs)]

    def run(b):
        return _sample_block(model, plan, block_stream(cfg.seed, b), sizes[b], x,
                             want_v, extra_maps)

    if cfg.workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    endpoints = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    log_w = np.concatenate([p[2] for p in parts])
    v = np.concatenate([p[3] for p in parts]) if want_v else None
    extras = [np.concatenate([p[4][i] for p in parts]) for i in range(len(extra_maps))]
    return SampleBatch(endpoints, counts, log_w, v, extras)


def sample_trajectory(model: LevyModel, cfg: SimConfig, stream: np.random.Generator,
                      x=None) -> TrajectorySample:
    """One path of the untilted process (``cfg.tilt`` is ignored)."""
    x = np.zeros(model.d) if x is None else as_vector(x, model.d, "x")
    plan = jump_plan(model, cfg.with_tilt(None))
    e, c, lw, _, _ = _sample_block(model, plan, stream, 1, x)
    return TrajectorySample(e[0], int(c[0]), 0.0)


def sample_tilted(model: LevyModel, cfg: SimConfig, stream: np.random.Generator,
                  x=None) -> TrajectorySample:
    """One path under the tilted intensity ``(1/h) exp<gamma(z), tilt> g(z)``.

    ``log_weight = -<tilt, X_t - x>/h + (t/h) H(tilt)``.  Because small jumps
    are replaced by the tilted mean, ``E[exp(log_weight)]`` equals one up to a
    relative error of order ``|tilt|^2 * 1e-4`` under the default truncation.
    """
    if cfg.tilt is None:
        raise ValueError("sample_tilted needs cfg.tilt")
    x = np.zeros(model.d) if x is None else as_vector(x, model.d, "x")
    plan = jump_plan(model, cfg)
    e, c, lw, _, _ = _sample_block(model, plan, stream, 1, x)
    return TrajectorySample(e[0], int(c[0]), float(lw[0]))


# --------------------------------------------------------------- estimators

@dataclass(frozen=True)
class WeightedMean:
    """Importance-weighted mean of an indicator, stored in log scale."""

    value: float
    log_value: float
    stderr: float
    log_stderr: float
    n_hits: int
    n_effective: float
    estimator: str


def weighted_indicator_mean(log_w: np.ndarray, hits: np.ndarray, estimator: str = "raw",
                            n_groups: int = N_GROUPS) -> WeightedMean:
    """``mean(w 1_hit)`` (raw) or ``sum(w 1_hit) / sum(w)`` with a grouped jackknife error.

    Groups are contiguous, equally sized slices of the path index.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")
    log_w = np.asarray(log_w, dtype=float)
    hits = np.asarray(hits, dtype=bool)
    n = len(log_w)
    n_hits = int(hits.sum())
    if n_hits == 0:
        return WeightedMean(0.0, -math.inf, 0.0, math.inf, 0, 0.0, estimator)
    ref = float(np.max(log_w[hits]))
    if estimator == "self_normalized":
        ref = max(ref, float(np.max(log_w)))
    w = np.exp(log_w - ref)
    a = np.where(hits, w, 0.0)
    g = min(n_groups, n)
    bounds = np.linspace(0, n, g + 1).astype(int)
    a_k = np.add.reduceat(a, bounds[:-1])
    n_k = np.diff(bounds).astype(float)
    if estimator == "raw":
        theta = a.sum() / n
        loo = (a.sum() - a_k) / (n - n_k) if g > 1 else np.array([theta])
    else:
        w_k = np.add.reduceat(w, bounds[:-1])
        theta = a.sum() / w.sum()
        loo = (a.sum() - a_k) / (w.sum() - w_k) if g > 1 else np.array([theta])
    se = math.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2)) if g > 1 else math.inf
    ah = a[hits]
    n_eff = float(ah.sum() ** 2 / np.sum(ah ** 2))
    log_value = math.log(theta) + ref
    return WeightedMean(math.exp(log_value), log_value, se * math.exp(ref), se / theta,
                        n_hits, n_eff, estimator)


@dataclass(frozen=True)
class HitEstimate:
    value: float
    log_value: float
    stderr: float
    log_stderr: float
    n_hits: int
    n_effective: float
    tilt: np.ndarray
    estimator: str
    flag: str | None = None


ZERO_HIT_ADVICE = "no path hit the target; increase n_paths or improve the tilt"


def auto_tilt(model: LevyModel, x, center, radius: float) -> np.ndarray:
    """Dual vector of the cheapest point of the closed ball (zero if it holds ``x + m``)."""
    bm = minimize_over_ball(model, x, center, radius)
    return np.asarray(bm.xi_star, dtype=float)


def hit_probability(model: LevyModel, cfg: SimConfig, x, center, radius: float, *,
                    estimator: str = "raw") -> HitEstimate:
    """Importance-sampling estimate of ``P(|X_t - center| < radius)`` from ``x``.

    Without ``cfg.tilt`` the tilt is the dual vector of the cheapest point of
    the ball.  The default ``raw`` estimator averages ``w 1_O``; on the
    target the weights are bounded by ``exp(-inf_O l / h)`` whereas the
    normaliser ``sum w`` of the self-normalised form has variance growing like
    ``exp((t/h) (H(eta) + H(-eta)))``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    x = as_vector(x, model.d, "x")
    center = as_vector(center, model.d, "center")
    if cfg.tilt is None:
        cfg = cfg.with_tilt(auto_tilt(model, x, center, radius))
    batch = sample_paths(model, cfg, x)
    with np.errstate(over="ignore", invalid="ignore"):
        hits = np.sum((batch.endpoints - center) ** 2, axis=1) < radius ** 2
    wm = weighted_indicator_mean(batch.log_weights, hits, estimator)
    flag = ZERO_HIT_ADVICE if wm.n_hits == 0 else None
    return HitEstimate(wm.value, wm.log_value, wm.stderr, wm.log_stderr, wm.n_hits,
                       wm.n_effective, cfg.tilt, estimator, flag)
