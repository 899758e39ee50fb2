"""Approximate marginal posterior of the penalty parameters and its maximizer.

For a given ``lambda`` the Laplace fit at the conditional mode gives

    log p(lambda | D) ~ ell(xi_hat) + log p(xi_hat | lambda)
                        + 0.5 log|Sigma_lambda| + log p(lambda)

up to an additive constant (drop ``log p(lambda)`` for the marginal
likelihood). The optimizer moves in ``upsilon = log lambda``. By default it
maximizes the lambda-scale density; ``scale="upsilon"`` maximizes the
density of upsilon instead, which carries the Jacobian ``sum_j upsilon_j``
and favours larger penalties.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .laplace import LaplaceFit, LaplaceOptions, find_mode
from .model import LatentModel

MARGINAL_POSTERIOR = "marginal_posterior"
MARGINAL_LIKELIHOOD = "marginal_likelihood"
CRITERIA = (MARGINAL_POSTERIOR, MARGINAL_LIKELIHOOD)
SCALES = ("lambda", "upsilon")

UPSILON_BOUNDS = (-12.0, 12.0)
# inner modes must be much tighter than the outer finite-difference step
INNER_OPTIONS = LaplaceOptions(tol=1e-10)


class SelectionError(RuntimeError):
    pass


def log_marginal_lambda(model: LatentModel, lam, criterion=MARGINAL_POSTERIOR, xi0=None,
                        opts: LaplaceOptions | None = None, return_fit=False):
    """Log of the approximate marginal posterior (or likelihood) of ``lam``."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    lam = model._check_lambda(lam)
    fit = find_mode(model, lam, xi0, opts or INNER_OPTIONS)
    value = (fit.log_posterior + 0.5 * float(model.penalty_ranks() @ np.log(lam))
             + 0.5 * fit.log_det_cov)
    if criterion == MARGINAL_POSTERIOR:
        value += model.log_lambda_prior(lam)
    return (value, fit) if return_fit else value


class LambdaCriterion:
    """Callable criterion in lambda or upsilon with warm-started inner modes."""

    def __init__(self, model: LatentModel, criterion=MARGINAL_POSTERIOR,
                 opts: LaplaceOptions | None = None, warm_start=True):
        if criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        self.model = model
        self.criterion = criterion
        self.opts = opts or INNER_OPTIONS
        self.warm_start = warm_start
        self._last_mode = None
        self.n_evals = 0

    def fit(self, lam) -> tuple[float, LaplaceFit]:
        xi0 = self._last_mode if self.warm_start else None
        value, fit = log_marginal_lambda(self.model, lam, self.criterion, xi0, self.opts,
                                         return_fit=True)
        if self.warm_start:
            self._last_mode = fit.mode
        self.n_evals += 1
        return value, fit

    def log_density(self, lam) -> float:
        return self.fit(lam)[0]

    def log_density_upsilon(self, ups) -> float:
        ups = np.atleast_1d(np.asarray(ups, dtype=float))
        return self.log_density(np.exp(ups)) + float(np.sum(ups))

    def objective(self, scale="lambda"):
        """Function of upsilon maximized by :func:`select_lambda`."""
        if scale == "lambda":
            return lambda u: self.log_density(np.exp(np.atleast_1d(u)))
        if scale == "upsilon":
            return self.log_density_upsilon
        raise ValueError(f"scale must be one of {SCALES}")

    __call__ = log_density_upsilon


@dataclass(frozen=True)
class HyperPosterior:
    mode: np.ndarray
    upsilon: np.ndarray
    mode_criterion: str
    edf: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    boundary: tuple
    fit: LaplaceFit = field(repr=False)
    log_density: Callable = field(repr=False)
    log_density_upsilon: Callable = field(repr=False)

    @property
    def notes(self):
        out = []
        for j, b in enumerate(self.boundary):
            if b == "upper":
                out.append(f"term {j}: penalty at upper guard, effectively polynomial "
                           f"(edf={self.edf[j]:.2f})")
            elif b == "lower":
                out.append(f"term {j}: penalty at lower guard, effectively unpenalized")
        return out


def _fd_gradient(f, u, f0, h):
    g = np.empty_like(u)
    for i in range(len(u)):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2 * h)
    return g


def _fd_hessian(f, u, f0, h):
    J = len(u)
    H = np.empty((J, J))
    I = np.eye(J) * h
    for i in range(J):
        H[i, i] = (f(u + I[i]) - 2 * f0 + f(u - I[i])) / h**2
        for j in range(i):
            H[i, j] = H[j, i] = (f(u + I[i] + I[j]) - f(u + I[i] - I[j])
                                 - f(u - I[i] + I[j]) + f(u - I[i] - I[j])) / (4 * h * h)
    return H


def select_lambda(model: LatentModel, criterion=MARGINAL_POSTERIOR, ups0=None,
                  bounds=UPSILON_BOUNDS, fd_step=1e-4, hess_step=1e-2, grad_tol=1e-6,
                  max_iter=100, opts: LaplaceOptions | None = None,
                  warm_start=True, scale="lambda") -> HyperPosterior:
    """Maximize the chosen criterion over ``upsilon = log lambda`` in a box.

    With ``scale="lambda"`` the maximizer is the mode of the criterion as a
    function of lambda (upsilon is only the working parametrization); with
    ``scale="upsilon"`` it is the mode of the induced density of upsilon.
    For the marginal likelihood, which is not a density in lambda, the
    two coincide and ``scale`` is ignored.

    Gradient by central differences (step ``fd_step``), Hessian by central
    second differences, Levenberg-Marquardt damped Newton steps projected
    onto ``bounds``. Components stuck on a bound are reported, not fatal.
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}")
    crit = LambdaCriterion(model, criterion, opts, warm_start)
    objective = crit.objective("lambda" if criterion == MARGINAL_LIKELIHOOD else scale)
    lo, hi = bounds
    J = model.n_lambda
    u = np.full(J, np.log(10.0)) if ups0 is None else np.array(ups0, dtype=float).reshape(J)
    u = np.clip(u, lo, hi)
    f = objective(u)
    mu = None
    gnorm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = _fd_gradient(objective, u, f, fd_step)
        pinned = ((u <= lo) & (g < 0)) | ((u >= hi) & (g > 0))
        free = ~pinned
        gnorm = float(np.max(np.abs(g[free]))) if free.any() else 0.0
        if gnorm < grad_tol:
            converged = True
            break
        H = _fd_hessian(objective, u, f, hess_step)
        Hf = -H[np.ix_(free, free)]
        gf = g[free]
        if mu is None:
            mu = 1e-4 * max(float(np.max(np.abs(np.diag(Hf)))), 1.0)
        accepted = False
        for attempt in range(40):
            damp = 0.0 if attempt == 0 else mu
            try:
                c = linalg.cho_factor(Hf + damp * np.eye(len(gf)), lower=True)
            except linalg.LinAlgError:
                if attempt > 0:
                    mu *= 5.0
                continue
            d = np.zeros(J)
            d[free] = linalg.cho_solve(c, gf)
            u_new = np.clip(u + d, lo, hi)
            if np.allclose(u_new, u, rtol=0, atol=1e-13):
                break
            f_new = objective(u_new)
            if f_new > f:
                u, f, accepted = u_new, f_new, True
                if attempt > 0:
                    mu *= 0.2
                break
            if attempt > 0:
                mu *= 5.0
        if not accepted:
            # no ascent direction left at finite-difference resolution
            converged = gnorm < 10.0 * grad_tol
            break
    if not converged:
        raise SelectionError(
            f"penalty selection did not converge after {it} iterations (|grad|={gnorm:.3g})")
    lam = np.exp(u)
    value, fit = crit.fit(lam)
    boundary = tuple("upper" if x >= hi else "lower" if x <= lo else None for x in u)
    edf = effective_dims(model, lam, fit)
    return HyperPosterior(lam, u, criterion, edf, value, gnorm, it,
                          boundary, fit, crit.log_density, crit.log_density_upsilon)


def effective_dims(model: LatentModel, lam, fit: LaplaceFit | None = None) -> np.ndarray:
    """Per-term trace of (-H_lambda)^-1 (-H_0) over the term's theta block.

    ``H_0`` is the log-likelihood Hessian at the conditional mode.
    """
    lam = model._check_lambda(lam)
    if fit is None:
        fit = find_mode(model, lam)
    H0 = model.loglik_derivatives(fit.mode).hessian
    A = fit.covariance @ (-H0)
    return np.array([np.trace(A[s, s]) for s in
                     (model.partition.term_slice(j) for j in range(model.n_lambda))])
