"""Independent reference implementations used only by the tests.

Each oracle is written from the defining formula, deliberately avoiding
the vectorized code paths of the package.
"""

import math

import numpy as np


def bspline_recursive(knots, i, k, x):
    """Textbook Cox-de Boor recursion B_{i,k}(x), half-open spans."""
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    out = 0.0
    d1 = knots[i + k] - knots[i]
    d2 = knots[i + k + 1] - knots[i + 1]
    if d1 > 0:
        out += (x - knots[i]) / d1 * bspline_recursive(knots, i, k - 1, x)
    if d2 > 0:
        out += (knots[i + k + 1] - x) / d2 * bspline_recursive(knots, i + 1, k - 1, x)
    return out


def po_loglik_naive(gamma, eta, y):
    """sum_i log(F(gamma_{y_i} + eta_i) - F(gamma_{y_i - 1} + eta_i)), one row at a time."""
    R = len(gamma) + 1
    total = 0.0
    for e, yi in zip(eta, y):
        def F(r):
            if r <= 0:
                return 0.0
            if r >= R:
                return 1.0
            return 1.0 / (1.0 + math.exp(-(gamma[r - 1] + e)))
        total += math.log(F(yi) - F(yi - 1))
    return total


def fd_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def fd_jacobian(grad, x, h=1e-5):
    """Central differences of a vector function; rows index the output."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        cols.append((grad(x + e) - grad(x - e)) / (2 * step))
    return np.column_stack(cols)


def max_rel_err(a, b, floor=1.0):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def gaussian_conditional(mean, cov, idx_given, value):
    """Conditional law of the remaining coordinates given ``x[idx_given] = value``."""
    d = len(mean)
    g = np.asarray(idx_given)
    t = np.setdiff1d(np.arange(d), g)
    Sgg = cov[np.ix_(g, g)]
    Stg = cov[np.ix_(t, g)]
    m = mean[t] + Stg @ np.linalg.solve(Sgg, np.asarray(value) - mean[g])
    C = cov[np.ix_(t, t)] - Stg @ np.linalg.solve(Sgg, Stg.T)
    return m, C


def gamma_target_model(k=5.0, a=3.0, b=2.0):
    """Two-coordinate latent model with closed-form laws.

    ``xi[0]`` has likelihood ``x^(k-1) e^(-x)``, so with a flat prior it is
    Gamma(k, 1); ``xi[1]`` is a one-coefficient penalized term with identity
    penalty and no data. At fixed lambda it is N(0, 1/lambda); with lambda
    drawn by Gibbs the lambda marginal is the prior Gamma(a, rate b).
    """
    from lpsplines.basis import PenaltyMatrix
    from lpsplines.model import LatentModel, LatentPartition, ModelEvaluation, PriorSpec

    class GammaTarget(LatentModel):
        def __init__(self):
            self.k = k
            self.partition = LatentPartition.from_sizes(1, [1])
            self.prior = PriorSpec(np.zeros(1), np.zeros((1, 1)),
                                   (PenaltyMatrix(0, np.eye(1), 1),), a, b)

        def loglik(self, xi):
            x = xi[0]
            return (self.k - 1) * math.log(x) - x if x > 0 else -np.inf

        def loglik_derivatives(self, xi):
            x = xi[0]
            if x <= 0:
                return ModelEvaluation(-np.inf, np.full(2, np.nan), np.full((2, 2), np.nan))
            return ModelEvaluation(self.loglik(xi), np.array([(self.k - 1) / x - 1, 0.0]),
                                   np.diag([-(self.k - 1) / x**2, 0.0]))

        def initial_xi(self):
            return np.array([self.k, 0.0])

    return GammaTarget()
