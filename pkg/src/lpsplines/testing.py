"""Conjugate Gaussian fixture with closed-form posteriors, for validation.

``y = Z xi + eps`` with ``eps ~ N(0, sigma^2 I)`` and ``Z = [X, B_1, ..., B_J]``.
Everything the approximations produce is exact for this model, so it
serves as the degenerate reference case.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .basis import BasisSpec, PenaltyMatrix, evaluate_basis, full_rank_penalty
from .model import LatentModel, LatentPartition, ModelEvaluation, PriorSpec


class GaussianModel(LatentModel):
    def __init__(self, y, X, bases, penalties, sigma=1.0, gamma_mean=None,
                 gamma_precision=None, a=1.0, b=1e-4):
        self.y = np.asarray(y, dtype=float)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] != len(self.y):
            X = X.T
        self.Z = np.hstack([X] + [np.asarray(B, dtype=float) for B in bases])
        self.sigma = float(sigma)
        k1 = X.shape[1]
        self.partition = LatentPartition.from_sizes(k1, [np.shape(B)[1] for B in bases])
        gm = np.zeros(k1) if gamma_mean is None else np.asarray(gamma_mean, dtype=float)
        Q = 1e-6 * np.eye(k1) if gamma_precision is None else np.asarray(gamma_precision, float)
        self.prior = PriorSpec(gm, Q, tuple(penalties), a, b)
        self._ZtZ = self.Z.T @ self.Z / self.sigma**2
        self._Zty = self.Z.T @ self.y / self.sigma**2

    def loglik(self, xi) -> float:
        r = self.y - self.Z @ xi
        return -0.5 * float(r @ r) / self.sigma**2

    def loglik_derivatives(self, xi) -> ModelEvaluation:
        xi = np.asarray(xi, dtype=float)
        r = self.y - self.Z @ xi
        return ModelEvaluation(-0.5 * float(r @ r) / self.sigma**2,
                               self.Z.T @ r / self.sigma**2, -self._ZtZ.copy())

    def loglik_gradient(self, xi):
        r = self.y - self.Z @ xi
        return -0.5 * float(r @ r) / self.sigma**2, self.Z.T @ r / self.sigma**2

    def initial_xi(self) -> np.ndarray:
        return np.zeros(self.dim)

    # ---- closed forms -------------------------------------------------------
    def exact_posterior(self, lam):
        """Mean and covariance of xi | lambda, y."""
        K = self.prior_precision(lam)
        A = self._ZtZ + K
        cov = linalg.inv(A)
        mean = cov @ (self._Zty + K @ self.prior_mean)
        return mean, 0.5 * (cov + cov.T)

    def exact_log_evidence(self, lam) -> float:
        """log p(y | lambda) from the n x n marginal covariance (needs K > 0)."""
        K = self.prior_precision(lam)
        S = self.sigma**2 * np.eye(len(self.y)) + self.Z @ linalg.inv(K) @ self.Z.T
        r = self.y - self.Z @ self.prior_mean
        c = linalg.cho_factor(S, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
        return float(-0.5 * (r @ linalg.cho_solve(c, r) + logdet + len(r) * np.log(2 * np.pi)))


def gaussian_fixture(n=200, k1=2, L=8, seed=0, sigma=0.5, ridge=1e-3) -> GaussianModel:
    """Random-design Gaussian model with one smooth term and full-rank penalty."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, n))
    X = np.column_stack([np.ones(n)] + [rng.standard_normal(n) for _ in range(k1 - 1)])
    spec = BasisSpec(0.0, 1.0, L - 3)
    B = evaluate_basis(spec, x).values
    gamma = rng.normal(0, 1, k1)
    y = X @ gamma + np.sin(2 * np.pi * x) + sigma * rng.standard_normal(n)
    P = full_rank_penalty(L, 2, ridge)
    return GaussianModel(y, X, [B], [P], sigma=sigma)


def scalar_penalty(L) -> PenaltyMatrix:
    return PenaltyMatrix(0, np.eye(L), L)
