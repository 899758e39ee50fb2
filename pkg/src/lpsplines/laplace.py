"""Conditional posterior mode and Gaussian (Laplace) approximation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .model import LatentModel, LatentPartition


class NonConvergenceError(RuntimeError):
    def __init__(self, message, grad_norm=np.nan, lam=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.lam = lam


class SaddlePointError(RuntimeError):
    pass


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LaplaceOptions:
    tol: float = 1e-8
    rel_tol: float = 1e-12
    max_iter: int = 200
    max_damping_tries: int = 60


class GaussianLaw:
    """Multivariate normal with density, sampling and sub-block marginals."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.chol = np.linalg.cholesky(self.cov)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = linalg.solve_triangular(self.chol, np.atleast_2d(x - self.mean).T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        out = -0.5 * (np.sum(z * z, axis=0) + logdet + self.dim * np.log(2 * np.pi))
        return out if x.ndim > 1 else float(out[0])

    def sample(self, M, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = rng.standard_normal((int(M), self.dim))
        return self.mean + z @ self.chol.T

    def marginal(self, idx) -> "GaussianLaw":
        idx = np.atleast_1d(np.arange(self.dim)[idx])
        return GaussianLaw(self.mean[idx], self.cov[np.ix_(idx, idx)])


@dataclass(frozen=True)
class LaplaceFit:
    mode: np.ndarray
    covariance: np.ndarray = field(repr=False)
    precision: np.ndarray = field(repr=False)
    log_det_cov: float
    log_posterior: float
    converged: bool
    iterations: int
    grad_norm: float
    lam: np.ndarray
    partition: LatentPartition = field(repr=False)

    @property
    def k1(self) -> int:
        return self.partition.k1

    @property
    def gamma_hat(self) -> np.ndarray:
        return self.mode[: self.k1]

    @property
    def theta_hat(self) -> np.ndarray:
        return self.mode[self.k1:]

    @property
    def cov_gg(self):
        return self.covariance[: self.k1, : self.k1]

    @property
    def cov_gt(self):
        return self.covariance[: self.k1, self.k1:]

    @property
    def cov_tg(self):
        return self.covariance[self.k1:, : self.k1]

    @property
    def cov_tt(self):
        return self.covariance[self.k1:, self.k1:]

    @cached_property
    def theta_given_gamma(self) -> "ConditionalTheta":
        return ConditionalTheta.from_fit(self)


def _try_cholesky(A):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None


def _max_abs(v) -> float:
    return float(np.max(np.abs(v)))


def find_mode(model: LatentModel, lam, xi0=None, opts: LaplaceOptions | None = None,
              **kwargs) -> LaplaceFit:
    """Newton-Raphson on the conditional log-posterior with Levenberg-Marquardt fallback.

    An undamped Newton step is always tried first; when it fails to increase
    the log-posterior (or ``-H`` is not positive definite) the step
    ``(-H + mu I)^-1 U`` is used, with ``mu`` shrunk by 0.2 after a success
    and grown by 5 after a failure.
    """
    opts = opts or LaplaceOptions(**kwargs)
    lam = model._check_lambda(lam)
    xi = np.array(model.initial_xi() if xi0 is None else xi0, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise ValueError("starting point must be finite")
    ev = model.gradient_hessian(xi, lam)
    if not np.isfinite(ev.loglik):
        raise NonConvergenceError("log-posterior is -inf at the starting point", lam=lam)
    f, U, H = ev.loglik, ev.gradient, ev.hessian
    mu = None
    iterations = 0
    last_rel = np.inf
    converged = False
    for _ in range(opts.max_iter + 1):
        gnorm = _max_abs(U)
        negH = -H
        chol = _try_cholesky(negH)
        scale = max(1.0, abs(f))
        if gnorm < opts.tol and chol is not None:
            step = linalg.cho_solve(chol, U)
            if last_rel < opts.rel_tol or 0.5 * float(U @ step) < opts.rel_tol * scale:
                converged = True
                break
        if iterations >= opts.max_iter:
            break
        accepted = None
        if chol is not None:
            step = linalg.cho_solve(chol, U)
            trial = model.gradient_hessian(xi + step, lam)
            floor = 0.5 * float(U @ step) < opts.rel_tol * scale
            if trial.loglik >= f:
                accepted = (xi + step, trial)
            elif floor and np.isfinite(trial.loglik) and _max_abs(trial.gradient) < gnorm:
                # f no longer resolves the ascent; a strict drop in |U| decides
                accepted = (xi + step, trial)
            elif gnorm < opts.tol:
                # at the roundoff floor; no further progress is possible
                converged = True
                break
        if accepted is None:
            if mu is None:
                mu = 1e-4 * max(float(np.max(np.diag(negH))), 1e-8)
            for _ in range(opts.max_damping_tries):
                c = _try_cholesky(negH + mu * np.eye(len(xi)))
                if c is None:
                    mu *= 5.0
                    continue
                step = linalg.cho_solve(c, U)
                trial = model.gradient_hessian(xi + step, lam)
                if trial.loglik > f:
                    accepted = (xi + step, trial)
                    mu *= 0.2
                    break
                mu *= 5.0
            if accepted is None:
                if chol is not None and 0.5 * float(U @ linalg.cho_solve(chol, U)) < opts.rel_tol * scale:
                    # the remaining ascent is below double-precision resolution of f
                    converged = True
                    break
                raise NonConvergenceError(
                    f"damped steps failed to increase the log-posterior (|U|={gnorm:.3g})",
                    gnorm, lam)
        xi, ev = accepted
        last_rel = (ev.loglik - f) / scale
        f, U, H = ev.loglik, ev.gradient, ev.hessian
        iterations += 1
    gnorm = _max_abs(U)
    if not converged:
        raise NonConvergenceError(
            f"no convergence after {opts.max_iter} iterations (|U|={gnorm:.3g})", gnorm, lam)
    negH = -H
    chol = _try_cholesky(negH)
    if chol is None:
        raise SaddlePointError("-H is not positive definite at the final point")
    cov = linalg.cho_solve(chol, np.eye(len(xi)))
    cov = 0.5 * (cov + cov.T)
    log_det_cov = -2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    return LaplaceFit(xi, cov, negH, log_det_cov, f, True, iterations, gnorm, lam,
                      model.partition)


def laplace_conditional(fit: LaplaceFit) -> GaussianLaw:
    """N(mode, covariance) approximation of xi given lambda."""
    if not fit.converged:
        raise ValueError("Laplace fit did not converge")
    return GaussianLaw(fit.mode, fit.covariance)


@dataclass(frozen=True)
class ConditionalTheta:
    """Gaussian law of theta given gamma implied by the joint Laplace fit.

    ``E(theta | gamma) = theta_hat + S_tg S_gg^-1 (gamma - gamma_hat)`` and
    the covariance ``S_tt - S_tg S_gg^-1 S_gt`` does not depend on gamma.
    """

    gamma_hat: np.ndarray
    theta_hat: np.ndarray
    regression: np.ndarray  # S_tg S_gg^-1, shape (k2, k1)
    cov: np.ndarray

    @classmethod
    def from_fit(cls, fit: LaplaceFit):
        if not fit.converged:
            raise ValueError("Laplace fit did not converge")
        chol = _try_cholesky(fit.cov_gg)
        if chol is None:
            raise ConditioningError("gamma block of the covariance is singular")
        reg = linalg.cho_solve(chol, fit.cov_gt).T
        cov = fit.cov_tt - reg @ fit.cov_gt
        return cls(fit.gamma_hat.copy(), fit.theta_hat.copy(), reg, 0.5 * (cov + cov.T))

    def mean(self, gamma) -> np.ndarray:
        """Conditional mean for one gamma (k1,) or many (M, k1)."""
        d = np.asarray(gamma, dtype=float) - self.gamma_hat
        return self.theta_hat + d @ self.regression.T

    @cached_property
    def chol(self):
        return np.linalg.cholesky(self.cov)

    @cached_property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def law(self, gamma) -> GaussianLaw:
        return GaussianLaw(self.mean(gamma), self.cov)


def conditional_theta_given_gamma(fit: LaplaceFit, gamma) -> GaussianLaw:
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if gamma.shape != (fit.k1,):
        raise ValueError(f"gamma must have length {fit.k1}")
    return fit.theta_given_gamma.law(gamma)
