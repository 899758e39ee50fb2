"""Reference sampler: Metropolis-within-Gibbs with preconditioned MALA moves.

The penalty parameters get exact Gamma updates,

    lambda_j | theta_j ~ G(a + rank(P)/2, b + theta_j' P theta_j / 2),

and the latent vector is moved by Langevin proposals preconditioned with
the Laplace covariance. With ``fixed_lambda`` set the chain targets
``p(xi | lambda, D)`` only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .diagnostics import ess_per_param
from .laplace import find_mode
from .model import LatentModel

TARGET_ACCEPTANCE = 0.57
MIN_ACCEPTANCE = 0.01


class StepSizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 20_000
    burn_in: int = 5_000
    thin: int = 1
    step_scale: float | None = None
    seed: int = 0
    fixed_lambda: tuple | None = None

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class ChainOutput:
    draws: np.ndarray
    acceptance_rate: float
    ess_per_param: np.ndarray
    lambda_draws: np.ndarray | None = None
    step_scale: float = math.nan
    names: list = field(default_factory=list)

    def to_csv(self, path):
        names = self.names or [f"xi_{j + 1}" for j in range(self.draws.shape[1])]
        header = list(names)
        rows = self.draws
        if self.lambda_draws is not None:
            header += [f"lambda_{j + 1}" for j in range(self.lambda_draws.shape[1])]
            rows = np.hstack([rows, self.lambda_draws])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) for v in row])


def gibbs_lambda(theta_j, P, a, b, rng) -> float:
    """Draw lambda_j from its Gamma full conditional."""
    q = P.quad(theta_j)
    shape = a + 0.5 * P.rank
    rate = b + 0.5 * q
    return float(rng.gamma(shape, 1.0 / rate))


class _Langevin:
    """Preconditioned MALA kernel with a cached current state."""

    def __init__(self, model, lam, precond):
        self.model = model
        self.L = np.linalg.cholesky(precond)
        self.Linv = linalg.solve_triangular(self.L, np.eye(len(self.L)), lower=True)
        self.A = precond
        self.set_lambda(lam)

    def set_lambda(self, lam):
        self.lam = np.asarray(lam, dtype=float)
        self.K = self.model.prior_precision(self.lam)

    def target(self, x):
        return self.model.log_posterior_gradient(x, self.lam, self.K)

    def log_q(self, to, frm, grad_frm, tau):
        # L^-1 (to - frm - tau^2/2 A g) = L^-1 (to - frm) - tau^2/2 L' g
        z = self.Linv @ (to - frm) - 0.5 * tau * tau * (self.L.T @ grad_frm)
        return -0.5 * float(z @ z) / (tau * tau)

    def step(self, x, lp, grad, tau, rng):
        prop = (x + 0.5 * tau * tau * (self.A @ grad)
                + tau * (self.L @ rng.standard_normal(len(x))))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # far-out proposals may overflow; they are rejected below
            lp_new, grad_new = self.target(prop)
        log_u = math.log(rng.random())
        if not np.isfinite(lp_new) or grad_new is None or not np.all(np.isfinite(grad_new)):
            return x, lp, grad, False
        log_ratio = (lp_new - lp + self.log_q(x, prop, grad_new, tau)
                     - self.log_q(prop, x, grad, tau))
        if log_u < log_ratio:
            return prop, lp_new, grad_new, True
        return x, lp, grad, False


def mala_step(model: LatentModel, xi, lam, step_scale, precond, rng):
    """One preconditioned Langevin move; returns ``(xi_new, accepted)``."""
    kern = _Langevin(model, lam, np.asarray(precond, dtype=float))
    xi = np.asarray(xi, dtype=float)
    lp, grad = kern.target(xi)
    x, _, _, acc = kern.step(xi, lp, grad, float(step_scale), rng)
    return x, acc


def default_step_scale(dim) -> float:
    return 1.65 * dim ** (-1.0 / 6.0)


def run_chain(model: LatentModel, config: ChainConfig, xi0=None, precond=None,
              lam0=None) -> ChainOutput:
    """Run one chain; the step size is tuned toward 57% acceptance during burn-in.

    ``precond`` defaults to the Laplace covariance at the starting penalty
    (``fixed_lambda`` if given, else ``lam0``, else the hyper-posterior mode).
    """
    rng = np.random.default_rng(config.seed)
    fixed = config.fixed_lambda is not None
    if fixed:
        lam = model._check_lambda(config.fixed_lambda)
    elif lam0 is not None:
        lam = model._check_lambda(lam0)
    else:
        from .hyper import select_lambda

        lam = select_lambda(model).mode
    if precond is None or xi0 is None:
        fit = find_mode(model, lam, xi0)
        precond = fit.covariance if precond is None else precond
        xi0 = fit.mode if xi0 is None else xi0
    kern = _Langevin(model, lam, np.asarray(precond, dtype=float))
    x = np.array(xi0, dtype=float)
    lp, grad = kern.target(x)
    if not np.isfinite(lp):
        raise ValueError("chain must start at a point of positive posterior density")
    tau = config.step_scale or default_step_scale(model.dim)
    log_tau = math.log(tau)
    n_keep = (config.n_iter - config.burn_in) // config.thin
    draws = np.empty((n_keep, model.dim))
    lam_draws = None if fixed else np.empty((n_keep, model.n_lambda))
    prior = model.prior
    parts = [model.partition.term_slice(j) for j in range(model.n_lambda)]
    n_acc = 0
    n_post = 0
    tune_acc = 0
    k = 0
    for it in range(config.n_iter):
        if not fixed:
            lam = np.array([gibbs_lambda(x[s], P, prior.a, prior.b, rng)
                            for s, P in zip(parts, prior.penalties)])
            kern.set_lambda(lam)
            lp, grad = kern.target(x)
        x, lp, grad, acc = kern.step(x, lp, grad, math.exp(log_tau), rng)
        if it < config.burn_in:
            tune_acc += acc
            log_tau += (float(acc) - TARGET_ACCEPTANCE) / (it + 1) ** 0.6
            continue
        n_acc += acc
        n_post += 1
        if (it - config.burn_in) % config.thin == 0 and k < n_keep:
            draws[k] = x
            if lam_draws is not None:
                lam_draws[k] = lam
            k += 1
    rate = n_acc / max(n_post, 1)
    if rate < MIN_ACCEPTANCE:
        raise StepSizeError(f"acceptance rate {rate:.4f} below {MIN_ACCEPTANCE} after tuning")
    names = list(getattr(model, "parameter_names", []))
    return ChainOutput(draws[:k], rate, ess_per_param(draws[:k]),
                       None if lam_draws is None else lam_draws[:k], math.exp(log_tau), names)
