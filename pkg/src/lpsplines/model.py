"""Common contract for latent Gaussian P-spline models.

A model owns a partitioned latent vector ``xi = (gamma, theta)`` where
``gamma`` holds the ``k1`` non-penalized parameters and ``theta`` stacks
the penalized spline coefficients of every additive term. Concrete models
implement the log-likelihood and its analytic derivatives; this module
adds the Gaussian prior ``N(e, K_lambda^-1)`` with
``K_lambda = diag(Q, lambda_1 P_1, ..., lambda_J P_J)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag


class EvaluationError(FloatingPointError):
    """The log-likelihood came back as NaN or +inf."""

    def __init__(self, message, xi=None):
        super().__init__(message)
        self.xi = None if xi is None else np.array(xi, copy=True)


@dataclass(frozen=True)
class LatentPartition:
    k1: int
    k2: int
    term_offsets: tuple

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("both k1 and k2 must be >= 1")
        pos = 0
        for start, length in self.term_offsets:
            if start != pos or length < 1:
                raise ValueError("term blocks must tile [0, k2) without overlap")
            pos += length
        if pos != self.k2:
            raise ValueError("term blocks must tile [0, k2) without overlap")

    @property
    def dim(self) -> int:
        return self.k1 + self.k2

    @property
    def n_terms(self) -> int:
        return len(self.term_offsets)

    def term_slice(self, j: int) -> slice:
        """Slice of the j-th penalized block inside the full ``xi``."""
        start, length = self.term_offsets[j]
        return slice(self.k1 + start, self.k1 + start + length)

    @property
    def gamma(self) -> slice:
        return slice(0, self.k1)

    @property
    def theta(self) -> slice:
        return slice(self.k1, self.dim)

    @classmethod
    def from_sizes(cls, k1, term_sizes):
        offsets, pos = [], 0
        for size in term_sizes:
            offsets.append((pos, int(size)))
            pos += int(size)
        return cls(int(k1), pos, tuple(offsets))


@dataclass(frozen=True)
class PriorSpec:
    gamma_mean: np.ndarray
    gamma_precision: np.ndarray
    penalties: tuple
    a: float = 1.0
    b: float = 1e-4

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("Gamma prior constants must be positive")

    @classmethod
    def default(cls, k1, penalties, a=1.0, b=1e-4, q_scale=1e-6):
        return cls(np.zeros(k1), q_scale * np.eye(k1), tuple(penalties), a, b)


@dataclass(frozen=True)
class ModelEvaluation:
    loglik: float
    gradient: np.ndarray = field(repr=False)
    hessian: np.ndarray = field(repr=False)
    n_clamped: int = 0


class LatentModel:
    """Base class; subclasses provide the likelihood and its derivatives.

    Subclasses must set ``partition`` and ``prior`` and implement
    ``loglik``, ``loglik_derivatives`` and ``initial_xi``. Overriding
    ``loglik_gradient`` is optional but speeds up samplers.
    """

    partition: LatentPartition
    prior: PriorSpec

    # ---- likelihood, supplied by concrete models --------------------------
    def loglik(self, xi) -> float:
        raise NotImplementedError

    def loglik_derivatives(self, xi) -> ModelEvaluation:
        raise NotImplementedError

    def loglik_gradient(self, xi):
        ev = self.loglik_derivatives(xi)
        return ev.loglik, ev.gradient

    def initial_xi(self) -> np.ndarray:
        raise NotImplementedError

    def extra_log_prior(self, gamma):
        """Non-Gaussian log-prior on ``gamma`` (value, gradient, hessian)."""
        k1 = self.partition.k1
        return 0.0, np.zeros(k1), np.zeros((k1, k1))

    # ---- prior ------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.partition.dim

    @property
    def n_lambda(self) -> int:
        return self.partition.n_terms

    @property
    def parameter_names(self):
        p = self.partition
        names = [f"gamma_{r + 1}" for r in range(p.k1)]
        for j in range(p.n_terms):
            s = p.term_slice(j)
            names += [f"theta_{j + 1}_{l + 1}" for l in range(s.stop - s.start)]
        return names

    @property
    def prior_mean(self) -> np.ndarray:
        return np.concatenate([self.prior.gamma_mean, np.zeros(self.partition.k2)])

    def prior_precision(self, lam) -> np.ndarray:
        lam = self._check_lambda(lam)
        blocks = [self.prior.gamma_precision]
        blocks += [l * P.matrix for l, P in zip(lam, self.prior.penalties)]
        return block_diag(*blocks)

    def penalty_ranks(self) -> np.ndarray:
        return np.array([P.rank for P in self.prior.penalties], dtype=float)

    def _check_lambda(self, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if lam.shape != (self.n_lambda,):
            raise ValueError(f"expected {self.n_lambda} penalty parameters, got {lam.shape}")
        if np.any(~(lam > 0)):
            raise ValueError(f"penalty parameters must be strictly positive, got {lam}")
        return lam

    def log_prior_xi(self, xi, lam) -> float:
        """log p(xi | lambda) keeping every lambda-dependent constant."""
        lam = self._check_lambda(lam)
        d = np.asarray(xi, dtype=float) - self.prior_mean
        K = self.prior_precision(lam)
        val = 0.5 * float(self.penalty_ranks() @ np.log(lam)) - 0.5 * float(d @ K @ d)
        return val + self.extra_log_prior(d[: self.partition.k1] + self.prior.gamma_mean)[0]

    def log_lambda_prior(self, lam) -> float:
        lam = self._check_lambda(lam)
        a, b = self.prior.a, self.prior.b
        return float(np.sum((a - 1.0) * np.log(lam) - b * lam))

    # ---- posterior --------------------------------------------------------
    def _finite_or_raise(self, value, xi):
        if np.isnan(value) or value == np.inf:
            raise EvaluationError(f"log-likelihood is {value}", xi)

    def log_posterior(self, xi, lam) -> float:
        """ell(xi) - 0.5 (xi - e)' K_lambda (xi - e) + extra gamma prior."""
        xi = np.asarray(xi, dtype=float)
        ll = self.loglik(xi)
        self._finite_or_raise(ll, xi)
        if ll == -np.inf:
            return -np.inf
        d = xi - self.prior_mean
        K = self.prior_precision(lam)
        extra = self.extra_log_prior(xi[: self.partition.k1])[0]
        return ll - 0.5 * float(d @ K @ d) + extra

    def log_posterior_gradient(self, xi, lam, K=None):
        xi = np.asarray(xi, dtype=float)
        ll, g = self.loglik_gradient(xi)
        self._finite_or_raise(ll, xi)
        if ll == -np.inf:
            return -np.inf, None
        d = xi - self.prior_mean
        if K is None:
            K = self.prior_precision(lam)
        Kd = K @ d
        k1 = self.partition.k1
        ev, eg, _ = self.extra_log_prior(xi[:k1])
        grad = g - Kd
        grad[:k1] += eg
        return ll - 0.5 * float(d @ Kd) + ev, grad

    def gradient_hessian(self, xi, lam) -> ModelEvaluation:
        """Value, gradient U_lambda and Hessian H_lambda of the log-posterior."""
        xi = np.asarray(xi, dtype=float)
        ev = self.loglik_derivatives(xi)
        self._finite_or_raise(ev.loglik, xi)
        if ev.loglik == -np.inf:
            return ev
        d = xi - self.prior_mean
        K = self.prior_precision(lam)
        Kd = K @ d
        k1 = self.partition.k1
        pv, pg, ph = self.extra_log_prior(xi[:k1])
        grad = ev.gradient - Kd
        grad[:k1] += pg
        H = ev.hessian - K
        H[:k1, :k1] += ph
        H = 0.5 * (H + H.T)
        value = ev.loglik - 0.5 * float(d @ Kd) + pv
        return ModelEvaluation(value, grad, H, ev.n_clamped)
