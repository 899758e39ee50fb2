"""Command line front end: ``lpsplines fit | validate | simulate``.

Exit codes: 0 success, 1 bad input (config, CSV or parameters),
2 non-convergence of the mode or penalty search, 3 failure of the
validation chain. The configuration grammar is documented in
``docs/config.md``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .diagnostics import ks_distance, skewness
from .hyper import CRITERIA, SCALES, SelectionError, select_lambda
from .laplace import ConditioningError, NonConvergenceError, SaddlePointError
from .mcmc import ChainConfig, StepSizeError, run_chain
from .model import EvaluationError
from .negbin import CountDataset, NegativeBinomialModel, simulate_fixture
from .propodds import SURVEY_FREQUENCIES, ProportionalOddsModel, simulate_survey
from .skewfit import (GRID, MARGINAL_METHODS, AxisFitError, axis_marginal_logdensity,
                      build_skew_posterior, laplace_posterior, sample_joint)

FIT_SCHEMA = "lpsplines.fit"
VALIDATE_SCHEMA = "lpsplines.validate"
SCHEMA_VERSION = 1
MODELS = ("prop_odds", "negbin")
QUANTILES = (0.025, 0.5, 0.975)

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_CHAIN = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration, data file or simulation parameters."""


# ---- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class Covariate:
    name: str
    L: int = 10
    r: int = 2


@dataclass(frozen=True)
class FitConfig:
    model: str
    data: Path
    response: str
    covariates: tuple
    criterion: str = "marginal_posterior"
    scale: str = "lambda"
    a: float = 1.0
    b: float = 1e-4
    q_scale: float = 1e-6
    skew: bool = True
    skew_method: str = "laplace"
    mode_anchored: bool = False
    curve_draws: int = 10_000
    grid_points: int = 100
    mcmc: bool = False
    chain: ChainConfig = field(default_factory=ChainConfig)
    seed: int = 0
    output: Path = Path("out")


def _get(table, key, kind, default, where):
    if key not in table:
        return default
    val = table[key]
    ok = (isinstance(val, kind) and not (kind is int and isinstance(val, bool))
          if kind is not float else isinstance(val, (int, float)) and not isinstance(val, bool))
    if not ok:
        raise ConfigError(f"{where}{key}: expected {kind.__name__}, got {type(val).__name__}")
    return float(val) if kind is float else val


def _check_keys(table, allowed, where):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where or 'top level'}: {', '.join(extra)}")


def parse_config(text: str, base_dir=".") -> FitConfig:
    """Parse and validate a TOML configuration document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    _check_keys(doc, ("model", "data", "response", "seed", "output", "covariates",
                      "selection", "prior", "skew", "curves", "mcmc"), "")
    base = Path(base_dir)
    model = _get(doc, "model", str, None, "")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {model!r}")
    data = _get(doc, "data", str, None, "")
    response = _get(doc, "response", str, None, "")
    if data is None or response is None:
        raise ConfigError("'data' and 'response' are required")
    covs = doc.get("covariates")
    if not isinstance(covs, list) or not covs:
        raise ConfigError("at least one [[covariates]] table is required")
    covariates = []
    for i, c in enumerate(covs):
        where = f"covariates[{i}]."
        if not isinstance(c, dict):
            raise ConfigError(f"{where[:-1]} must be a table")
        _check_keys(c, ("name", "L", "r"), where[:-1])
        name = _get(c, "name", str, None, where)
        if not name:
            raise ConfigError(f"{where}name is required")
        L = _get(c, "L", int, 10 if model == "prop_odds" else 11, where)
        r = _get(c, "r", int, 2, where)
        if r < 1 or L < r + 1:
            raise ConfigError(f"{where[:-1]}: need r >= 1 and L >= r + 1 (got L={L}, r={r})")
        if model == "negbin" and L < 4:
            raise ConfigError(f"{where}L: the negbin basis needs L >= 4 cubic B-splines")
        covariates.append(Covariate(name, L, r))
    if model == "negbin" and len(covariates) != 1:
        raise ConfigError("negbin takes exactly one covariate")

    sel = doc.get("selection", {})
    _check_keys(sel, ("criterion", "scale"), "selection")
    criterion = _get(sel, "criterion", str, "marginal_posterior", "selection.")
    scale = _get(sel, "scale", str, "lambda", "selection.")
    if criterion not in CRITERIA:
        raise ConfigError(f"selection.criterion must be one of {CRITERIA}")
    if scale not in SCALES:
        raise ConfigError(f"selection.scale must be one of {SCALES}")

    pri = doc.get("prior", {})
    _check_keys(pri, ("a", "b", "q_scale"), "prior")
    a = _get(pri, "a", float, 1.0, "prior.")
    b = _get(pri, "b", float, 1e-4, "prior.")
    q_scale = _get(pri, "q_scale", float, 1e-6, "prior.")
    if not (a > 0 and b > 0 and q_scale >= 0):
        raise ConfigError("prior: need a > 0, b > 0 and q_scale >= 0")

    sk = doc.get("skew", {})
    _check_keys(sk, ("enabled", "method", "mode_anchored"), "skew")
    skew = _get(sk, "enabled", bool, True, "skew.")
    method = _get(sk, "method", str, "laplace", "skew.")
    if method not in MARGINAL_METHODS:
        raise ConfigError(f"skew.method must be one of {MARGINAL_METHODS}")
    anchored = _get(sk, "mode_anchored", bool, False, "skew.")

    cur = doc.get("curves", {})
    _check_keys(cur, ("draws", "grid_points"), "curves")
    draws = _get(cur, "draws", int, 10_000, "curves.")
    grid_points = _get(cur, "grid_points", int, 100, "curves.")
    if draws < 100 or grid_points < 2:
        raise ConfigError("curves: need draws >= 100 and grid_points >= 2")

    mc = doc.get("mcmc", {})
    _check_keys(mc, ("enabled", "n_iter", "burn_in", "thin", "step_scale", "seed"), "mcmc")
    seed = _get(doc, "seed", int, 0, "")
    try:
        chain = ChainConfig(n_iter=_get(mc, "n_iter", int, 20_000, "mcmc."),
                            burn_in=_get(mc, "burn_in", int, 5_000, "mcmc."),
                            thin=_get(mc, "thin", int, 1, "mcmc."),
                            step_scale=_get(mc, "step_scale", float, None, "mcmc."),
                            seed=_get(mc, "seed", int, seed, "mcmc."))
    except ValueError as exc:
        raise ConfigError(f"mcmc: {exc}") from None

    return FitConfig(model=model, data=base / data, response=response,
                     covariates=tuple(covariates), criterion=criterion, scale=scale,
                     a=a, b=b, q_scale=q_scale, skew=skew, skew_method=method,
                     mode_anchored=anchored, curve_draws=draws, grid_points=grid_points,
                     mcmc=_get(mc, "enabled", bool, False, "mcmc."), chain=chain, seed=seed,
                     output=base / _get(doc, "output", str, "out", ""))


def load_config(path) -> FitConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)


# ---- data ---------------------------------------------------------------------

def read_table(path, columns) -> dict:
    """Read the named numeric columns of an RFC 4180 CSV with a header row."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, strict=True))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: empty file (a header row is required)")
    header, body = rows[0], rows[1:]
    if not body:
        raise ConfigError(f"{path}: no data rows")
    out = {}
    for col in columns:
        if col not in header:
            raise ConfigError(f"{path}: column {col!r} not found in header")
        j = header.index(col)
        vals = []
        for i, row in enumerate(body, start=2):
            if len(row) != len(header):
                raise ConfigError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
            cell = row[j].strip()
            if cell == "":
                raise ConfigError(f"{path}:{i}: missing value in column {col!r}")
            try:
                v = float(cell)
            except ValueError:
                raise ConfigError(f"{path}:{i}: non-numeric value {cell!r} in {col!r}") from None
            if not math.isfinite(v):
                raise ConfigError(f"{path}:{i}: non-finite value in column {col!r}")
            vals.append(v)
        out[col] = np.array(vals)
    return out


def _integer_column(v, name):
    if np.any(v != np.round(v)):
        raise ConfigError(f"response {name!r} must hold integers")
    return v.astype(int)


def build_model(cfg: FitConfig):
    names = [c.name for c in cfg.covariates]
    cols = read_table(cfg.data, [cfg.response] + names)
    y = _integer_column(cols[cfg.response], cfg.response)
    if cfg.model == "negbin":
        if np.any(y < 0):
            raise ConfigError("negbin counts must be non-negative")
        c = cfg.covariates[0]
        ds = CountDataset(y, cols[c.name])
        if np.ptp(ds.x) <= 0:
            raise ConfigError(f"covariate {c.name!r} is constant")
        return NegativeBinomialModel(ds, n_segments=c.L - 3, r=c.r, a=cfg.a, b=cfg.b)
    if np.any(y < 1):
        raise ConfigError("ordinal responses must be coded 1..R")
    R = int(y.max())
    if R < 2 or len(np.unique(y)) != R:
        raise ConfigError(f"ordinal response must use every category 1..{R}")
    X = np.column_stack([cols[n] for n in names])
    if np.any(np.ptp(X, axis=0) <= 0):
        raise ConfigError("a covariate is constant")
    return ProportionalOddsModel.from_data(y, X, R, L=[c.L for c in cfg.covariates],
                                           r=[c.r for c in cfg.covariates], names=names,
                                           a=cfg.a, b=cfg.b, q_scale=cfg.q_scale)


# ---- fitting ------------------------------------------------------------------

@dataclass
class FitResult:
    model: object
    hyper: object
    posterior: object


def run_fit(cfg: FitConfig, threads=1) -> FitResult:
    model = build_model(cfg)
    hyper = select_lambda(model, cfg.criterion, scale=cfg.scale)
    if cfg.skew:
        post = build_skew_posterior(hyper.fit, model, hyper.mode, cfg.mode_anchored,
                                    workers=threads, method=cfg.skew_method)
    else:
        post = laplace_posterior(hyper.fit, model)
    return FitResult(model, hyper, post)


def _summary(mean, sd, skew, quantiles):
    return {"mean": mean, "sd": sd, "skewness": skew,
            "q025": quantiles[0], "q500": quantiles[1], "q975": quantiles[2]}


def _gamma_summaries(res: FitResult, skew_on: bool):
    fit = res.hyper.fit
    names = res.model.parameter_names
    out = []
    for s in range(fit.k1):
        m, sd = float(fit.gamma_hat[s]), math.sqrt(float(fit.cov_gg[s, s]))
        entry = {"name": names[s],
                 "laplace": _summary(m, sd, 0.0, [float(norm.ppf(q, m, sd)) for q in QUANTILES]),
                 "skew_normal": None}
        if skew_on:
            mean, var, g1 = res.posterior.gamma_moments(s)
            sn, clamped = res.posterior.gamma_marginal(s)
            entry["skew_normal"] = dict(
                _summary(mean, math.sqrt(var), g1, [float(v) for v in sn.ppf(QUANTILES)]),
                psi=sn.psi, omega=sn.omega, alpha=sn.alpha, clamped=bool(clamped))
        out.append(entry)
    return out


def fit_document(res: FitResult, cfg: FitConfig) -> dict:
    h, fit, model = res.hyper, res.hyper.fit, res.model
    names = model.parameter_names
    sd = np.sqrt(np.diag(fit.covariance))
    k1 = fit.k1
    return {
        "schema": FIT_SCHEMA,
        "version": SCHEMA_VERSION,
        "generator": f"lpsplines {__version__}",
        "model": cfg.model,
        "n": int(len(model.dataset.y)),
        "seed": cfg.seed,
        "selection": {"criterion": h.mode_criterion, "scale": cfg.scale,
                      "iterations": h.iterations, "grad_norm": h.grad_norm,
                      "value": h.value, "notes": h.notes},
        "terms": [{"name": c.name, "L": c.L, "r": c.r, "lambda": float(lam),
                   "log_lambda": float(u), "edf": float(e), "boundary": b}
                  for c, lam, u, e, b in zip(cfg.covariates, h.mode, h.upsilon, h.edf,
                                             h.boundary)],
        "laplace": {"iterations": fit.iterations, "grad_norm": fit.grad_norm,
                    "log_posterior": fit.log_posterior, "log_det_cov": fit.log_det_cov},
        "skew_correction": {"enabled": cfg.skew, "method": cfg.skew_method if cfg.skew else None,
                            "mode_anchored": cfg.mode_anchored if cfg.skew else None},
        "gamma": _gamma_summaries(res, cfg.skew),
        "theta": [{"name": names[k1 + i], "mode": float(fit.theta_hat[i]),
                   "sd": float(sd[k1 + i])} for i in range(len(fit.theta_hat))],
    }


def curve_rows(res: FitResult, cfg: FitConfig):
    """Rows ``(term, x, fit, lower, upper)`` for every covariate."""
    model, post, fit = res.model, res.posterior, res.hyper.fit
    draws = sample_joint(post, cfg.curve_draws, np.random.default_rng([cfg.seed, 1]))
    theta = draws[:, fit.k1:]
    rows = []
    for j, c in enumerate(cfg.covariates):
        spec = model.terms[j].spec
        grid = np.linspace(spec.xmin, spec.xmax, cfg.grid_points)
        cur = model.term_curve(j, grid, theta)
        lo, hi = np.quantile(cur, [0.025, 0.975], axis=0, method="linear")
        mode = model.term_curve(j, grid, fit.theta_hat)[0]
        rows += [(c.name, x, m, a, b) for x, m, a, b in zip(grid, mode, lo, hi)]
    return rows


# ---- writers ------------------------------------------------------------------

def _clean(obj):
    """JSON-ready copy with numpy scalars converted and non-finite floats as null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc):
    text = json.dumps(_clean(doc), indent=2, ensure_ascii=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---- commands -----------------------------------------------------------------

def _with_overrides(cfg: FitConfig, args) -> FitConfig:
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, chain=replace(cfg.chain, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, output=Path(args.out))
    return cfg


def cmd_fit(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    res = run_fit(cfg, args.threads)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "fit.json", fit_document(res, cfg))
    write_csv(out / "curves.csv", ["term", "x", "fit", "lower", "upper"], curve_rows(res, cfg))
    write_json(out / "posterior.json", res.posterior.to_dict())
    return EXIT_OK


def _axis_overlay(res: FitResult, cfg: FitConfig, s, t_chain):
    post, fit = res.posterior, res.hyper.fit
    t = np.linspace(*GRID)
    logd = axis_marginal_logdensity(fit, res.model, post.frame, s, t,
                                    cfg.skew_method if cfg.skew else "plug-in")
    d = np.exp(logd - np.max(logd))
    target = d / trapezoid(d, t)
    sn_d = post.axis_fits[s].pdf(t)
    h = t[1] - t[0]
    edges = np.concatenate([[t[0] - h / 2], t + h / 2])
    counts, _ = np.histogram(t_chain, bins=edges)
    hist = counts / (len(t_chain) * h)
    return [(a, b, c, e) for a, b, c, e in zip(t, target, sn_d, hist)]


def compare_with_chain(res: FitResult, chain) -> list:
    """Per-gamma KS distances of the Laplace and skew-normal marginals to chain draws."""
    fit, post = res.hyper.fit, res.posterior
    names = res.model.parameter_names
    comps = []
    for s in range(fit.k1):
        d = chain.draws[:, s]
        m, sd = float(fit.gamma_hat[s]), math.sqrt(float(fit.cov_gg[s, s]))
        sn, _ = post.gamma_marginal(s)
        comps.append({"name": names[s],
                      "ks_laplace": ks_distance(lambda x: norm.cdf(x, m, sd), d),
                      "ks_skew_normal": ks_distance(sn.cdf, d),
                      "chain_mean": float(d.mean()), "chain_sd": float(d.std()),
                      "chain_skewness": skewness(d), "ess": float(chain.ess_per_param[s])})
    return comps


def cmd_validate(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    if not cfg.mcmc:
        raise ConfigError("validate needs [mcmc] enabled = true")
    res = run_fit(cfg, args.threads)
    fit, post = res.hyper.fit, res.posterior
    chain_cfg = replace(cfg.chain, fixed_lambda=tuple(float(v) for v in res.hyper.mode))
    try:
        chain = run_chain(res.model, chain_cfg, xi0=fit.mode, precond=fit.covariance)
    except (StepSizeError, EvaluationError, FloatingPointError) as exc:
        print(f"error: validation chain failed: {exc}", file=sys.stderr)
        return EXIT_CHAIN
    comps = compare_with_chain(res, chain)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    t_chain = post.frame.to_whitened(chain.draws[:, : fit.k1])
    for s in range(fit.k1):
        write_csv(out / f"axis_{s + 1}.csv", ["t", "target_density", "skew_normal_density",
                                              "chain_density"],
                  _axis_overlay(res, cfg, s, np.atleast_2d(t_chain)[:, s]))
    write_json(out / "validate.json", {
        "schema": VALIDATE_SCHEMA, "version": SCHEMA_VERSION, "model": cfg.model,
        "seed": cfg.seed, "lambda": res.hyper.mode.tolist(),
        "chain": {"n_iter": chain_cfg.n_iter, "burn_in": chain_cfg.burn_in,
                  "thin": chain_cfg.thin, "acceptance_rate": chain.acceptance_rate,
                  "step_scale": chain.step_scale},
        "gamma": comps,
    })
    return EXIT_OK


def simulate_rows(model, n, seed, gamma=6.0, effects="survey"):
    """Header and rows of a simulated dataset."""
    if n < 2:
        raise ConfigError("n must be >= 2")
    if model == "negbin":
        if not gamma > 0:
            raise ConfigError("gamma must be positive")
        ds = simulate_fixture(n, gamma, seed)
        return ["x", "y"], [(float(x), int(y)) for x, y in zip(ds.x, ds.y)]
    if model == "prop_odds":
        if effects not in ("survey", "none"):
            raise ConfigError("effects must be 'survey' or 'none'")
        eff = None if effects == "survey" else [lambda x: 0.0 * x, lambda x: 0.0 * x]
        ds, _ = simulate_survey(n, seed, SURVEY_FREQUENCIES, eff)
        return (["x1", "x2", "y"],
                [(float(a), float(b), int(y)) for (a, b), y in zip(ds.X, ds.y)])
    raise ConfigError(f"model must be one of {MODELS}")


def cmd_simulate(args) -> int:
    params = {}
    if args.config:
        try:
            doc = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        params = doc.get("simulate", doc)
        _check_keys(params, ("model", "n", "gamma", "effects", "seed", "output"), "simulate")
    model = args.model or params.get("model")
    n = args.n if args.n is not None else params.get("n", 120 if model == "negbin" else 552)
    seed = args.seed if args.seed is not None else params.get("seed", 0)
    gamma = args.gamma if args.gamma is not None else params.get("gamma", 6.0)
    effects = args.effects or params.get("effects", "survey")
    out = args.out or params.get("output")
    if not out:
        raise ConfigError("an output path is required (--out)")
    if not isinstance(n, int) or isinstance(n, bool) or not isinstance(seed, int):
        raise ConfigError("n and seed must be integers")
    try:
        gamma = float(gamma)
    except (TypeError, ValueError):
        raise ConfigError("gamma must be a number") from None
    header, rows = simulate_rows(model, n, seed, gamma, effects)
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    write_csv(path, header, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpsplines",
                                description="Laplace P-spline fits with skew-normal corrections.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help="output directory (file for simulate)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")

    common(sub.add_parser("fit", help="fit a model and write fit.json, curves.csv, posterior.json"))
    common(sub.add_parser("validate", help="compare the approximations with an MCMC chain"))
    sim = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    common(sim, config_required=False)
    sim.add_argument("--model", choices=MODELS)
    sim.add_argument("--n", type=int)
    sim.add_argument("--gamma", type=float, help="negbin overdispersion (default 6)")
    sim.add_argument("--effects", choices=("survey", "none"),
                     help="prop_odds covariate effects (default survey)")
    return p


COMMANDS = {"fit": cmd_fit, "validate": cmd_validate, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors; map to bad input
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonConvergenceError, SelectionError, SaddlePointError, ConditioningError,
            AxisFitError, EvaluationError) as exc:
        print(f"error: fit did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
