"""Negative-binomial P-spline model for overdispersed counts.

``y_i ~ NB(mu_i, gamma)`` with mean ``mu_i`` and variance
``mu_i + mu_i^2 / gamma``, ``log mu_i = b(x_i)' theta`` on a raw cubic
B-spline basis. The single non-penalized parameter is ``log gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .basis import BasisSpec, SplineTerm, evaluate_basis, full_rank_penalty
from .model import LatentModel, LatentPartition, ModelEvaluation, PriorSpec

LOG_MU_MAX = 700.0
# beyond this the Gamma prior term -b*gamma underflows the posterior to zero
LOG_GAMMA_MAX = 300.0


@dataclass(frozen=True)
class CountDataset:
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        x = np.asarray(self.x, dtype=float)
        if y.shape != x.shape or y.ndim != 1:
            raise ValueError("y and x must be vectors of equal length")
        if not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("counts must be finite nonnegative integers")
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return len(self.y)


def _as_design(basis):
    return basis.values if hasattr(basis, "values") else np.asarray(basis, dtype=float)


def _nb_terms(log_gamma, eta, y):
    g = np.exp(log_gamma)
    mu = np.exp(eta)
    log1p_ratio = np.log1p(mu / g)  # log((g + mu) / g)
    ll = (gammaln(y + g) - gammaln(g) - gammaln(y + 1.0)
          - g * log1p_ratio + y * (eta - np.log(g + mu)))
    return g, mu, ll


def nb_loglik(log_gamma, theta, dataset: CountDataset, basis) -> float:
    eta = _as_design(basis) @ np.asarray(theta, dtype=float)
    if np.any(eta > LOG_MU_MAX) or not abs(log_gamma) <= LOG_GAMMA_MAX:
        return -np.inf
    _, _, ll = _nb_terms(float(log_gamma), eta, dataset.y)
    total = float(np.sum(ll))
    return total if np.isfinite(total) else -np.inf


def nb_grad_hess(log_gamma, theta, dataset: CountDataset, basis) -> ModelEvaluation:
    """Log-likelihood, gradient and Hessian in ``(log gamma, theta)``."""
    B = _as_design(basis)
    eta = B @ np.asarray(theta, dtype=float)
    dim = 1 + B.shape[1]
    if np.any(eta > LOG_MU_MAX) or not abs(log_gamma) <= LOG_GAMMA_MAX:
        return ModelEvaluation(-np.inf, np.full(dim, np.nan), np.full((dim, dim), np.nan))
    y = dataset.y.astype(float)
    g, mu, ll = _nb_terms(float(log_gamma), eta, y)
    gm = g + mu
    # derivatives in gamma and eta
    d_g = digamma(y + g) - digamma(g) - np.log1p(mu / g) + (mu - y) / gm
    d_gg = (polygamma(1, y + g) - polygamma(1, g) + 1.0 / g - 2.0 / gm
            + (g + y) / gm / gm)
    pm, pg = mu / gm, g / gm
    d_e = pg * (y - mu)
    d_ee = -(g + y) * pm * pg
    d_ge = (y - mu) / gm * pm
    grad = np.empty(dim)
    grad[0] = g * d_g.sum()
    grad[1:] = B.T @ d_e
    H = np.empty((dim, dim))
    H[0, 0] = g * d_g.sum() + g * g * d_gg.sum()
    cross = B.T @ (g * d_ge)
    H[0, 1:] = cross
    H[1:, 0] = cross
    H[1:, 1:] = (B * d_ee[:, None]).T @ B
    return ModelEvaluation(float(ll.sum()), grad, H)


def nb_gradient(log_gamma, theta, dataset: CountDataset, B):
    eta = B @ theta
    if np.any(eta > LOG_MU_MAX) or not abs(log_gamma) <= LOG_GAMMA_MAX:
        return -np.inf, None
    y = dataset.y
    g, mu, ll = _nb_terms(float(log_gamma), eta, y)
    gm = g + mu
    d_g = digamma(y + g) - digamma(g) - np.log1p(mu / g) + (mu - y) / gm
    grad = np.empty(1 + B.shape[1])
    grad[0] = g * d_g.sum()
    grad[1:] = B.T @ (g * (y - mu) / gm)
    return float(ll.sum()), grad


class NegativeBinomialModel(LatentModel):
    """NB counts with a P-spline log-mean and a Gamma prior on the overdispersion.

    Parameters
    ----------
    dataset : CountDataset
    n_segments : int
        Inner knot spans of the raw cubic basis on ``[min x, max x]``.
    a, b : float
        Gamma prior on the penalty parameter.
    gamma_a, gamma_b : float
        Gamma prior on the overdispersion ``gamma`` (applied on the log scale,
        Jacobian included).
    """

    def __init__(self, dataset: CountDataset, n_segments=8, r=2, a=1.0, b=1e-4,
                 gamma_a=1e-4, gamma_b=1e-4, ridge=1e-6):
        self.dataset = dataset
        spec = BasisSpec(float(dataset.x.min()), float(dataset.x.max()), int(n_segments))
        self.term = SplineTerm("x", spec, full_rank_penalty(spec.n_basis, r, ridge))
        self.terms = [self.term]
        self.B = evaluate_basis(spec, dataset.x).values
        self.partition = LatentPartition.from_sizes(1, [spec.n_basis])
        self.prior = PriorSpec(np.zeros(1), np.zeros((1, 1)), (self.term.penalty,), a, b)
        self.gamma_a = float(gamma_a)
        self.gamma_b = float(gamma_b)

    def loglik(self, xi) -> float:
        return nb_loglik(xi[0], xi[1:], self.dataset, self.B)

    def loglik_derivatives(self, xi) -> ModelEvaluation:
        return nb_grad_hess(xi[0], xi[1:], self.dataset, self.B)

    def loglik_gradient(self, xi):
        return nb_gradient(xi[0], xi[1:], self.dataset, self.B)

    def extra_log_prior(self, gamma):
        lg = float(gamma[0])
        e = np.exp(lg)
        val = self.gamma_a * lg - self.gamma_b * e
        return val, np.array([self.gamma_a - self.gamma_b * e]), np.array([[-self.gamma_b * e]])

    def initial_xi(self) -> np.ndarray:
        y = self.dataset.y.astype(float)
        m = max(y.mean(), 0.5)
        v = y.var()
        g0 = m * m / (v - m) if v > m * 1.05 else 100.0
        # cubic B-splines sum to one, so a constant coefficient is a constant log-mean
        theta0 = np.full(self.partition.k2, np.log(m))
        return np.concatenate([[np.log(g0)], theta0])

    def mean_curve(self, grid, theta_draws):
        B = self.term.design(grid)
        return np.exp(np.atleast_2d(theta_draws) @ B.T)

    def term_curve(self, j, grid, theta_draws):
        return np.atleast_2d(theta_draws) @ self.term.design(grid).T

    @property
    def parameter_names(self):
        return ["log_gamma"] + [f"theta_x_{l + 1}" for l in range(self.partition.k2)]


# ---- simulation -------------------------------------------------------------

def fixture_mean(x, n):
    """Smooth nonlinear stand-in for the unknown true mean curve."""
    x = np.asarray(x, dtype=float)
    return np.exp(3.0 + 0.8 * np.sin(2.0 * np.pi * x / n) - 0.6 * (x / n - 0.5) ** 2 * 4.0)


def draw_counts(mu, gamma, rng) -> np.ndarray:
    """Gamma-Poisson mixture draws with mean ``mu`` and overdispersion ``gamma``."""
    mu = np.asarray(mu, dtype=float)
    rates = rng.gamma(shape=gamma, scale=mu / gamma)
    return rng.poisson(rates)


def nb_simulate(theta_true, gamma_true, n, seed, spec: BasisSpec | None = None) -> CountDataset:
    """Counts at x = 1..n with log-mean ``b(x)' theta_true``."""
    if not gamma_true > 0:
        raise ValueError("overdispersion must be positive")
    x = np.arange(1, n + 1, dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    if spec is None:
        spec = BasisSpec(1.0, float(n), len(theta_true) - 3)
    mu = np.exp(evaluate_basis(spec, x).values @ theta_true)
    rng = np.random.default_rng(seed)
    return CountDataset(draw_counts(mu, gamma_true, rng), x)


def simulate_fixture(n=120, gamma=6.0, seed=0) -> CountDataset:
    """Counts at x = 1..n around :func:`fixture_mean`."""
    if not gamma > 0:
        raise ValueError("overdispersion must be positive")
    x = np.arange(1, n + 1, dtype=float)
    rng = np.random.default_rng(seed)
    return CountDataset(draw_counts(fixture_mean(x, n), gamma, rng), x)
