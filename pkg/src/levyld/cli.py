"""Command-line experiment runner.

Every run resolves one :class:`ExperimentConfig` (file, then flags), writes its
artifacts under the output location and always leaves a manifest next to them.
Exit status: 0 on PASS or a completed computation, 2 on a FAIL or
INCONCLUSIVE verdict, 1 on any execution or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .model import ModelError, build_model

STOCHASTIC = {"simulate", "density", "varadhan", "wf", "malliavin"}
WORKERS_ENV = "LEVYLD_WORKERS"
EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2


class RunError(RuntimeError):
    pass


# ------------------------------------------------------------------ parsing

def _vector(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _tilt(text: str):
    return text if text in ("none", "auto") else _vector(text)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _opt(p, flag, key, **kw):
    """Flag that overrides config key ``section.field``; absent flags leave the config alone."""
    p.add_argument(flag, dest="set:" + key, default=argparse.SUPPRESS, **kw)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory, or a .csv/.json file for the main artifact")

    parser = argparse.ArgumentParser(prog="levyld", parents=[common],
                                     description="Large deviations of small-jump Levy processes")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("hamiltonian", "H, grad H and Hessian at xi")
    _opt(p, "--xi", "hamiltonian.xi", type=_vector)

    p = add("rate", "L(alpha) or l(x, y)")
    _opt(p, "--alpha", "rate.alpha", type=_vector)
    _opt(p, "--x", "rate.x", type=_vector)
    _opt(p, "--y", "rate.y", type=_vector)

    p = add("rate-ball", "infimum of l(x, .) over a ball")
    _opt(p, "--x", "rate.x", type=_vector)
    _opt(p, "--center", "rate.center", type=_vector)
    _opt(p, "--radius", "rate.radius", type=float)

    p = add("growth", "L(alpha) / (|alpha| log|alpha|) over spheres")
    _opt(p, "--radii", "rate.radii", type=_vector)

    p = add("path-opt", "minimise the discrete action between two points")
    _opt(p, "--x", "rate.x", type=_vector)
    _opt(p, "--y", "rate.y", type=_vector)
    _opt(p, "--segments", "rate.segments", type=int)

    p = add("simulate", "sample endpoints of the scaled process")
    _opt(p, "--h", "simulate.h", type=float)
    _opt(p, "--t", "simulate.t", type=float)
    _opt(p, "--n", "simulate.n", type=int)
    _opt(p, "--eps-cut", "simulate.eps_cut", type=float)
    _opt(p, "--tilt", "simulate.tilt", type=_tilt)
    _opt(p, "--x", "simulate.x", type=_vector)
    _opt(p, "--target", "simulate.target", type=_vector)
    _opt(p, "--format", "simulate.format", choices=["csv", "json"])

    p = add("density", "ball-counting density estimate at one h")
    _opt(p, "--x", "density.x", type=_vector)
    _opt(p, "--y", "density.y", type=_vector)
    _opt(p, "--h", "density.h", type=float)
    _opt(p, "--r", "density.r", type=float)
    _opt(p, "--n", "density.n", type=int)

    p = add("varadhan", "h log p(x, y) against -l(x, y) over an h grid")
    _opt(p, "--x", "varadhan.x", type=_vector)
    _opt(p, "--y", "varadhan.y", type=_vector)
    _opt(p, "--h-grid", "varadhan.h_grid", type=_vector)
    _opt(p, "--n", "varadhan.n", type=int)
    _opt(p, "--chi-tol", "varadhan.chi_tol", type=float)

    p = add("wf", "h log P(X_1 in ball) against the rate infimum over an h grid")
    _opt(p, "--x", "wf.x", type=_vector)
    _opt(p, "--center", "wf.center", type=_vector)
    _opt(p, "--radius", "wf.radius", type=float)
    _opt(p, "--h-grid", "wf.h_grid", type=_vector)
    _opt(p, "--n", "wf.n", type=int)
    _opt(p, "--chi-tol", "wf.chi_tol", type=float)

    p = add("malliavin", "moments of the Malliavin matrix and inverse-moment scaling")
    _opt(p, "--p", "malliavin.p", type=float)
    _opt(p, "--h-grid", "malliavin.h_grid", type=_vector)
    _opt(p, "--n", "malliavin.n", type=int)
    _opt(p, "--t", "malliavin.t", type=float)

    p = add("tauberian", "uniform decay exponent of tau_f over a test family")
    _opt(p, "--family", "tauberian.family", choices=["poly"])
    _opt(p, "--K", "tauberian.K", type=int)
    _opt(p, "--alpha", "tauberian.alpha", type=float)
    _opt(p, "--beta-grid", "tauberian.beta_grid", type=_vector)

    p = add("all", "run the acceptance suite")
    p.add_argument("--only", type=lambda s: [int(v) for v in s.split(",")], default=None,
                   help="comma-separated criterion numbers")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    base = load_config(getattr(args, "config", None))
    data = base.model_dump(mode="json")
    for key, value in vars(args).items():
        if key.startswith("set:"):
            section, field_name = key[4:].split(".")
            data[section][field_name] = value
    if hasattr(args, "seed"):
        data["seed"] = args.seed
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        try:
            data["workers"] = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}: not an integer ({env!r})") from None
    if hasattr(args, "workers"):
        data["workers"] = args.workers
    if hasattr(args, "out"):
        data["output"]["dir"] = args.out
    cfg = parse_config(data)
    if cfg.workers < 1:
        raise ConfigError("workers: must be at least 1")
    return cfg


# ------------------------------------------------------------------ output

class Output:
    """Artifact paths: the main one is ``<stem>.<ext>``, extras ``<stem>.<tag>.<ext>``."""

    def __init__(self, target: str, command: str):
        p = Path(target)
        if p.suffix in (".csv", ".json"):
            self.dir, self.stem, self.main_ext = p.parent, p.stem, p.suffix[1:]
        else:
            self.dir, self.stem, self.main_ext = p, command, None
        self.written: list[str] = []

    def path(self, ext: str, tag: str | None = None) -> Path:
        name = self.stem + (f".{tag}" if tag else "") + f".{ext}"
        return self.dir / name

    def write(self, text: str, ext: str, tag: str | None = None) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.path(ext, tag)
        path.write_text(text)
        if str(path) not in self.written:
            self.written.append(str(path))
        return path


def _json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])
    return buf.getvalue()


def _versions() -> dict:
    out = {"levyld": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pydantic"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


# ------------------------------------------------------------------ commands

def _model(cfg: ExperimentConfig, **overrides):
    kw = cfg.model.build_kwargs()
    kw.update(overrides)
    return build_model(**kw)


def _verdict_code(verdict: str) -> int:
    return EXIT_OK if verdict == "PASS" else EXIT_VERDICT


def cmd_hamiltonian(cfg, out, state):
    from .hamiltonian import hamiltonian
    model = _model(cfg)
    hv = hamiltonian(model, cfg.hamiltonian.xi)
    out.write(_json({"xi": cfg.hamiltonian.xi, "value": hv.value, "grad": hv.grad,
                     "hess": hv.hess, "quad_error": hv.quad_error}), "json")
    return EXIT_OK


def cmd_rate(cfg, out, state):
    from .ratefn import legendre
    model = _model(cfg)
    rc = cfg.rate
    if rc.alpha is not None:
        alpha, extra = np.asarray(rc.alpha), {"alpha": rc.alpha}
    else:
        alpha = np.asarray(rc.y) - np.asarray(rc.x)
        extra = {"x": rc.x, "y": rc.y}
    rp = legendre(model, alpha)
    out.write(_json({**extra, "value": rp.value, "xi_star": rp.xi_star, "gap": rp.gap,
                     "finite": rp.finite, "iterations": rp.iterations}), "json")
    return EXIT_OK


def cmd_rate_ball(cfg, out, state):
    from .ratefn import minimize_over_ball
    model = _model(cfg)
    rc = cfg.rate
    bm = minimize_over_ball(model, rc.x, rc.center, rc.radius)
    out.write(_json({"x": rc.x, "center": rc.center, "radius": rc.radius, "value": bm.value,
                     "argmin": bm.argmin, "xi_star": bm.xi_star,
                     "iterations": bm.iterations}), "json")
    return EXIT_OK


def cmd_growth(cfg, out, state):
    from .ratefn import growth_check
    model = _model(cfg)
    rep = growth_check(model, cfg.rate.radii)
    rows = [{"radius": r.radius, "min_ratio": r.min_ratio, "max_ratio": r.max_ratio,
             "n_infinite": r.n_infinite} for r in rep.rows]
    out.write(_json({"rows": rows, "lower_constant": rep.lower_constant,
                     "upper_constant": rep.upper_constant, "verdict": rep.verdict}), "json")
    return _verdict_code(rep.verdict)


def cmd_path_opt(cfg, out, state):
    from .pathaction import minimize_action
    model = _model(cfg)
    rc = cfg.rate
    res = minimize_action(model, rc.x, rc.y, rc.segments)
    header = ["t"] + [f"x{i + 1}" for i in range(model.d)]
    rows = [[t, *pt] for t, pt in zip(res.path.times, res.path.points)]
    out.write(_csv(header, rows), "csv")
    out.write(_json({"x": rc.x, "y": rc.y, "segments": rc.segments, "value": res.value,
                     "converged": res.converged, "iterations": res.iterations,
                     "stagnation_bound": res.stagnation_bound}), "json", "value")
    return EXIT_OK


def cmd_simulate(cfg, out, state):
    from .ratefn import legendre
    from .simulate import SimConfig, default_eps_cut, sample_paths

    model = _model(cfg)
    sc = cfg.simulate
    tilt = None
    if isinstance(sc.tilt, list):
        tilt = np.asarray(sc.tilt, float)
    elif sc.tilt == "auto":
        if sc.target is None:
            raise RunError("simulate.tilt: 'auto' needs simulate.target")
        rp = legendre(model, (np.asarray(sc.target) - np.asarray(sc.x)) / sc.t)
        if not rp.finite:
            raise RunError("simulate.target: velocity outside the domain of L")
        tilt = rp.xi_star
    sim = SimConfig(h=sc.h, t=sc.t, eps_cut=sc.eps_cut, n_paths=sc.n, seed=cfg.seed,
                    tilt=tilt, workers=cfg.workers)
    batch = sample_paths(model, sim, sc.x)
    if sc.format == "csv":
        header = [f"x{i + 1}" for i in range(model.d)] + ["n_jumps", "log_weight"]
        rows = [[*e, k, lw] for e, k, lw in zip(batch.endpoints, batch.n_jumps,
                                                  batch.log_weights)]
        out.write(_csv(header, rows), "csv")
    else:
        w = np.exp(batch.log_weights - batch.log_weights.max())
        out.write(_json({
            "h": sc.h, "t": sc.t, "n_paths": sc.n,
            "eps_cut": sc.eps_cut if sc.eps_cut is not None else default_eps_cut(model, sc.h),
            "tilt": tilt, "mean_endpoint": batch.endpoints.mean(axis=0),
            "cov_endpoint": np.cov(batch.endpoints.T), "mean_jumps": batch.n_jumps.mean(),
            "effective_sample_size": w.sum() ** 2 / (w ** 2).sum()}), "json")
    return EXIT_OK


def cmd_density(cfg, out, state):
    from .density import estimate_density
    from .simulate import SimConfig

    model = _model(cfg)
    dc = cfg.density
    sim = SimConfig(h=dc.h, n_paths=dc.n, seed=cfg.seed, workers=cfg.workers)
    est = estimate_density(model, sim, dc.x, dc.y, dc.r)
    out.write(_json({"h": dc.h, "x": dc.x, "y": dc.y, "radius": dc.r, "value": est.value,
                     "log_value": est.log_value, "stderr": est.stderr,
                     "log_stderr": est.log_stderr, "n_hits": est.n_hits,
                     "n_effective": est.n_effective, "tilt": est.tilt, "flag": est.flag}), "json")
    return EXIT_OK


def _sweep(kind, cfg, out, state):
    from .density import CSV_COLUMNS, varadhan_sweep, wf_sweep

    model = _model(cfg)
    partial = []
    state["flush"] = lambda: out.write(_csv(CSV_COLUMNS, [r.csv_values() for r in partial]),
                                       "csv")
    if kind == "varadhan":
        vc = cfg.varadhan
        tab = varadhan_sweep(model, vc.x, vc.y, vc.h_grid, vc.n, seed=cfg.seed,
                             chi_tol=vc.chi_tol, workers=cfg.workers, on_row=partial.append)
    else:
        wc = cfg.wf
        tab = wf_sweep(model, wc.x, wc.center, wc.radius, wc.h_grid, wc.n, seed=cfg.seed,
                       chi_tol=wc.chi_tol, workers=cfg.workers, on_row=partial.append)
    state.pop("flush")
    out.write(tab.to_csv(), "csv")
    rows = [{"h": r.h, "radius": r.radius, "n_hits": r.n_hits, "n_effective": r.n_effective,
             "radius_drift": r.radius_drift, "slack": r.slack, "verdict": r.verdict}
            for r in tab.rows]
    out.write(_json({"verdict": tab.verdict, "monotone": tab.monotone, "chi_tol": tab.chi_tol,
                     "rows": rows, **tab.details}), "json", "report")
    state["verdict"] = tab.verdict
    return _verdict_code(tab.verdict)


def cmd_varadhan(cfg, out, state):
    return _sweep("varadhan", cfg, out, state)


def cmd_wf(cfg, out, state):
    return _sweep("wf", cfg, out, state)


def cmd_malliavin(cfg, out, state):
    from .malliavin import InverseMomentDivergence, fit_scaling, moment_band

    model = _model(cfg)
    mc = cfg.malliavin
    report = {"p": mc.p, "h_grid": mc.h_grid, "t": mc.t}
    band = moment_band(model, mc.h_grid, 1, t=mc.t, n_paths=mc.n, seed=cfg.seed)
    report["norm_moment"] = {"values": band.values, "stderrs": band.stderrs,
                             "ratio": band.ratio, "band": band.band, "verdict": band.verdict}
    try:
        fit = fit_scaling(model, mc.t, mc.p, mc.h_grid)
    except InverseMomentDivergence as exc:
        report["scaling"] = {"verdict": "FAIL", "error": str(exc)}
        verdict = "FAIL"
    else:
        report["scaling"] = {"log_moments": fit.log_moments, "fitted_slope": fit.fitted_slope,
                             "r_squared": fit.r_squared, "intercept": fit.intercept,
                             "worst_directions": fit.worst_directions,
                             "verdict": fit.verdict}
        verdict = "PASS" if fit.verdict == "PASS" and band.verdict == "PASS" else "FAIL"
    report["verdict"] = verdict
    out.write(_json(report), "json")
    return _verdict_code(verdict)


def cmd_tauberian(cfg, out, state):
    from .tauberian import polynomial_family, tau, uniform_decay

    tc = cfg.tauberian
    model = _model(cfg, **({} if tc.alpha is None else {"alpha": tc.alpha}))
    family = polynomial_family(tc.K)
    rep = uniform_decay(family, model, tc.beta_grid)
    table = np.array([tau(f, model, np.asarray(tc.beta_grid)) for f in family.members])
    header = ["beta"] + [f.name for f in family.members] + ["sup"]
    rows = [[b, *table[:, j], s] for j, (b, s) in enumerate(zip(rep.beta_grid, rep.sup_tau))]
    out.write(_csv(header, rows), "csv")
    out.write(_json({"alpha": model.alpha, "K": tc.K, "alpha1_hat": rep.alpha1_hat,
                     "target": model.alpha / tc.K, "intercept": rep.intercept,
                     "worst_member": rep.worst_member, "fit_points": rep.fit_points,
                     "verdict": rep.verdict, "message": rep.message}), "json", "fit")
    return _verdict_code(rep.verdict)


def cmd_all(cfg, out, state, only=None):
    from .acceptance import run_all
    results = run_all(only, echo=lambda line: print(line, flush=True))
    summary = [{"criterion": r.number, "name": r.name, "passed": r.ok, "runtime": r.runtime,
                "budget": r.budget, "details": {k: v for k, v in r.details.items()
                                                 if k != "csv"}} for r in results]
    out.write(_json({"results": summary}), "json")
    return EXIT_OK if all(r.ok for r in results) else EXIT_VERDICT


COMMANDS = {
    "hamiltonian": cmd_hamiltonian, "rate": cmd_rate, "rate-ball": cmd_rate_ball,
    "growth": cmd_growth, "path-opt": cmd_path_opt, "simulate": cmd_simulate,
    "density": cmd_density, "varadhan": cmd_varadhan, "wf": cmd_wf,
    "malliavin": cmd_malliavin, "tauberian": cmd_tauberian, "all": cmd_all,
}


def run(cfg: ExperimentConfig, command: str, *, only=None) -> int:
    """Run ``command`` under ``cfg``; returns the exit status.  The manifest is always written."""
    out = Output(cfg.output.dir, command)
    state: dict = {}
    t0 = time.perf_counter()
    status, message = "complete", None
    try:
        if command in STOCHASTIC and cfg.seed is None:
            raise ConfigError("seed: required for stochastic commands (use --seed)")
        fn = COMMANDS[command]
        code = fn(cfg, out, state, only) if command == "all" else fn(cfg, out, state)
        if code == EXIT_VERDICT:
            status = state.get("verdict", "FAIL")
    except KeyboardInterrupt:
        if "flush" in state:
            state["flush"]()
        code, status, message = EXIT_ERROR, "interrupted", "interrupted; partial results written"
    except (ConfigError, ModelError, RunError, ValueError, RuntimeError) as exc:
        code, status, message = EXIT_ERROR, "error", f"{type(exc).__name__}: {exc}"
    manifest = {
        "command": command, "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.config_hash(), "seed": cfg.seed, "versions": _versions(),
        "wall_time": time.perf_counter() - t0, "status": status, "exit_code": code,
        "message": message, "artifacts": list(out.written),
    }
    out.write(_json(manifest), "json", "manifest")
    if message:
        print(f"levyld {command}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"levyld {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run(cfg, args.command, only=getattr(args, "only", None))


if __name__ == "__main__":
    sys.exit(main())
