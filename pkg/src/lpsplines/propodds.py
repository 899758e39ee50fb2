"""Additive proportional-odds model for ordinal responses.

``logit P(Y <= r | x) = gamma_r + f_1(x_1) + ... + f_J(x_J)`` with each
``f_j`` a recentered cubic B-spline expansion. The latent vector is
``xi = (gamma_1..gamma_{R-1}, theta_1, ..., theta_J)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .basis import SplineTerm
from .model import LatentModel, LatentPartition, ModelEvaluation, PriorSpec

ETA_CLAMP = 30.0

#: Relative category frequencies of the Likert item used as calibration target.
SURVEY_FREQUENCIES = (0.549, 0.304, 0.082, 0.054, 0.011)


@dataclass(frozen=True)
class OrdinalDataset:
    y: np.ndarray
    X: np.ndarray
    R: int

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.R < 2:
            raise ValueError("need at least two categories")
        if y.ndim != 1 or len(y) < 1:
            raise ValueError("y must be a non-empty vector")
        if len(y) != X.shape[0]:
            raise ValueError("y and X have different numbers of rows")
        if np.any(y != np.round(y)) or y.min() < 1 or y.max() > self.R:
            raise ValueError(f"responses must be integers in 1..{self.R}")
        object.__setattr__(self, "y", y.astype(int))
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return len(self.y)

    def frequencies(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.R + 1)[1:] / self.n


def _stack_design(bases) -> np.ndarray:
    if isinstance(bases, np.ndarray):
        return bases
    return np.hstack([np.asarray(b, dtype=float) for b in bases])


def _cumulative(gamma, offset):
    """F matrix with columns F_0 = 0, F_1..F_{R-1}, F_R = 1, plus clamp count."""
    eta = gamma[None, :] + offset[:, None]
    n_clamped = int(np.count_nonzero(np.abs(eta) > ETA_CLAMP))
    eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    n = len(offset)
    F = np.empty((n, len(gamma) + 2))
    F[:, 0] = 0.0
    F[:, -1] = 1.0
    F[:, 1:-1] = expit(eta)
    return F, n_clamped


def po_loglik(gamma, theta, dataset: OrdinalDataset, bases) -> float:
    """sum_i log pi_{i, y_i}; -inf when gamma is not strictly increasing."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(np.diff(gamma) <= 0):
        return -np.inf
    offset = _stack_design(bases) @ np.asarray(theta, dtype=float)
    F, _ = _cumulative(gamma, offset)
    rows = np.arange(dataset.n)
    pi = F[rows, dataset.y] - F[rows, dataset.y - 1]
    if np.any(pi <= 0):
        return -np.inf
    return float(np.sum(np.log(pi)))


def _workspace(gamma, theta, dataset, Xt):
    offset = Xt @ theta
    F, n_clamped = _cumulative(gamma, offset)
    pi = np.diff(F, axis=1)  # pi[:, r-1] = pi_ir
    v = F * (1.0 - F)  # v[:, r] = v_ir, zero at r = 0 and r = R
    return F, pi, v, n_clamped


def po_grad_hess(gamma, theta, dataset: OrdinalDataset, bases) -> ModelEvaluation:
    """Log-likelihood with its gradient and Hessian in (gamma, theta)."""
    gamma = np.asarray(gamma, dtype=float)
    theta = np.asarray(theta, dtype=float)
    Xt = _stack_design(bases)
    R = dataset.R
    k1, k2 = R - 1, Xt.shape[1]
    dim = k1 + k2
    if np.any(np.diff(gamma) <= 0):
        return ModelEvaluation(-np.inf, np.full(dim, np.nan), np.full((dim, dim), np.nan))
    F, pi, v, n_clamped = _workspace(gamma, theta, dataset, Xt)
    n = dataset.n
    rows = np.arange(n)
    y = dataset.y
    pi_y = pi[rows, y - 1]
    if np.any(pi_y <= 0):
        return ModelEvaluation(-np.inf, np.full(dim, np.nan), np.full((dim, dim), np.nan),
                               n_clamped)
    loglik = float(np.sum(np.log(pi_y)))

    v_y, v_ym1 = v[rows, y], v[rows, y - 1]
    z = (1.0 - 2.0 * F) * v
    w = 1.0 + pi - 2.0 * F[:, 1:]  # w[:, r-1] = w_ir

    # per-observation d log pi_{i y_i} / d gamma_s, columns s = 1..R-1
    A = np.zeros((n, R + 1))
    A[rows, y] += v_y / pi_y
    A[rows, y - 1] -= v_ym1 / pi_y
    A = A[:, 1:R]
    w_y = w[rows, y - 1]
    grad = np.concatenate([A.sum(axis=0), Xt.T @ w_y])

    H = np.empty((dim, dim))
    # gamma-gamma: diagonal delta terms minus the outer product of scores
    diag = np.zeros(R + 1)
    np.add.at(diag, y, z[rows, y] / pi_y)
    np.add.at(diag, y - 1, -z[rows, y - 1] / pi_y)
    H[:k1, :k1] = np.diag(diag[1:R]) - A.T @ A
    # theta-theta: pi_y w_y - 2 sum_{j <= y} pi_j w_j
    cum_pw = np.cumsum(pi * w, axis=1)[rows, y - 1]
    d_tt = pi_y * w_y - 2.0 * cum_pw
    H[k1:, k1:] = (Xt * d_tt[:, None]).T @ Xt
    # theta-gamma cross block
    C = np.zeros((n, R + 1))
    C[rows, y] += v_y
    C[rows, y - 1] += v_ym1
    cross = -Xt.T @ C[:, 1:R]
    H[k1:, :k1] = cross
    H[:k1, k1:] = cross.T
    return ModelEvaluation(loglik, grad, 0.5 * (H + H.T), n_clamped)


def po_grad(gamma, theta, dataset: OrdinalDataset, Xt):
    """Log-likelihood and gradient only (sampler fast path)."""
    if np.any(np.diff(gamma) <= 0):
        return -np.inf, None
    offset = Xt @ theta
    F, _ = _cumulative(gamma, offset)
    rows = np.arange(dataset.n)
    y = dataset.y
    F_y, F_ym1 = F[rows, y], F[rows, y - 1]
    pi_y = F_y - F_ym1
    if np.any(pi_y <= 0):
        return -np.inf, None
    v_y = F_y * (1.0 - F_y)
    v_ym1 = F_ym1 * (1.0 - F_ym1)
    R = dataset.R
    g_gamma = (np.bincount(y, weights=v_y / pi_y, minlength=R + 1)
               - np.bincount(y - 1, weights=v_ym1 / pi_y, minlength=R + 1))[1:R]
    w_y = 1.0 + pi_y - 2.0 * F_y
    return float(np.sum(np.log(pi_y))), np.concatenate([g_gamma, Xt.T @ w_y])


def empirical_intercepts(y, R) -> np.ndarray:
    """Logits of the (lightly smoothed) empirical cumulative frequencies."""
    counts = np.bincount(np.asarray(y, dtype=int), minlength=R + 1)[1:] + 0.5
    cum = np.cumsum(counts)[:-1] / counts.sum()
    return logit(cum)


class ProportionalOddsModel(LatentModel):
    """Additive PO model on recentered B-spline terms.

    Parameters
    ----------
    dataset : OrdinalDataset
    terms : list of SplineTerm
        One term per column of ``dataset.X``.
    prior : PriorSpec, optional
        Defaults to ``gamma ~ N(0, 1e6 I)`` and ``lambda_j ~ G(1, 1e-4)``.
    """

    def __init__(self, dataset: OrdinalDataset, terms, prior: PriorSpec | None = None):
        terms = list(terms)
        if len(terms) != dataset.X.shape[1]:
            raise ValueError("need one spline term per covariate column")
        self.dataset = dataset
        self.terms = terms
        self.designs = [t.design(dataset.X[:, j]) for j, t in enumerate(terms)]
        self.Xt = np.hstack(self.designs)
        k1 = dataset.R - 1
        self.partition = LatentPartition.from_sizes(k1, [t.size for t in terms])
        if prior is None:
            prior = PriorSpec.default(k1, [t.penalty for t in terms])
        if len(prior.penalties) != len(terms):
            raise ValueError("need one penalty per term")
        self.prior = prior

    @classmethod
    def from_data(cls, y, X, R=None, L=10, r=2, names=None, a=1.0, b=1e-4, q_scale=1e-6):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        R = int(np.max(y)) if R is None else int(R)
        ds = OrdinalDataset(np.asarray(y), X, R)
        names = names or [f"x{j + 1}" for j in range(X.shape[1])]
        Ls = np.broadcast_to(L, (X.shape[1],))
        rs = np.broadcast_to(r, (X.shape[1],))
        terms = [SplineTerm.additive(nm, X[:, j], int(Ls[j]), int(rs[j]))
                 for j, nm in enumerate(names)]
        prior = PriorSpec.default(R - 1, [t.penalty for t in terms], a, b, q_scale)
        return cls(ds, terms, prior)

    def split(self, xi):
        xi = np.asarray(xi, dtype=float)
        k1 = self.partition.k1
        return xi[:k1], xi[k1:]

    def loglik(self, xi) -> float:
        g, t = self.split(xi)
        return po_loglik(g, t, self.dataset, self.Xt)

    def loglik_derivatives(self, xi) -> ModelEvaluation:
        g, t = self.split(xi)
        return po_grad_hess(g, t, self.dataset, self.Xt)

    def loglik_gradient(self, xi):
        g, t = self.split(xi)
        return po_grad(g, t, self.dataset, self.Xt)

    def initial_xi(self) -> np.ndarray:
        g0 = empirical_intercepts(self.dataset.y, self.dataset.R)
        return np.concatenate([g0, np.zeros(self.partition.k2)])

    def term_curve(self, j, grid, theta_draws):
        """Values of f_j on ``grid`` for each row of ``theta_draws`` (full theta)."""
        start, length = self.partition.term_offsets[j]
        B = self.terms[j].design(grid)
        th = np.atleast_2d(theta_draws)[:, start:start + length]
        return th @ B.T

    @property
    def parameter_names(self):
        names = [f"gamma_{r + 1}" for r in range(self.partition.k1)]
        for t in self.terms:
            names += [f"theta_{t.name}_{l + 1}" for l in range(t.size)]
        return names


# ---- simulation -------------------------------------------------------------

def category_probabilities(gamma, offset) -> np.ndarray:
    F, _ = _cumulative(np.asarray(gamma, dtype=float), np.atleast_1d(offset).astype(float))
    return np.diff(F, axis=1)


def po_simulate(gamma, offsets, seed) -> np.ndarray:
    """Draw ordinal responses given intercepts and per-unit additive offsets."""
    rng = np.random.default_rng(seed)
    F, _ = _cumulative(np.asarray(gamma, dtype=float), np.asarray(offsets, dtype=float))
    u = rng.random(len(offsets))
    return 1 + np.sum(u[:, None] > F[:, 1:-1], axis=1)


def calibrate_intercepts(frequencies, offsets) -> np.ndarray:
    """Intercepts whose average cumulative probabilities over ``offsets`` hit
    the cumulative sums of ``frequencies``."""
    freq = np.asarray(frequencies, dtype=float)
    target = np.cumsum(freq / freq.sum())[:-1]
    offsets = np.asarray(offsets, dtype=float)
    out = []
    for c in target:
        out.append(brentq(lambda g: np.mean(expit(g + offsets)) - c, -60.0, 60.0,
                          xtol=1e-14))
    return np.array(out)


def survey_effects():
    """True effects for the survey-like simulation: linear in x1, U-shaped in x2."""
    def f_linear(x):
        return -0.06 * (np.asarray(x) - 14.0)

    def f_ushape(x):
        return 2.0 * ((np.asarray(x) - 52.5) / 37.5) ** 2

    return [f_linear, f_ushape]


SURVEY_RANGES = ((4.0, 24.0), (15.0, 90.0))


def simulate_survey(n=552, seed=0, frequencies=SURVEY_FREQUENCIES, effects=None,
                    ranges=SURVEY_RANGES, calibration_size=200_000):
    """Survey-like ordinal dataset with additive covariate effects.

    Covariates are uniform on ``ranges``; intercepts are calibrated so that
    the population category frequencies equal ``frequencies``. Returns the
    dataset and the intercepts used.
    """
    effects = survey_effects() if effects is None else effects
    rng = np.random.default_rng([int(seed), 17])
    cal = np.random.default_rng(12345)
    Xc = np.column_stack([cal.uniform(lo, hi, calibration_size) for lo, hi in ranges])
    oc = sum(f(Xc[:, j]) for j, f in enumerate(effects))
    gamma = calibrate_intercepts(frequencies, oc)
    X = np.column_stack([rng.uniform(lo, hi, n) for lo, hi in ranges])
    off = sum(f(X[:, j]) for j, f in enumerate(effects))
    y = po_simulate(gamma, off, rng.integers(2**63))
    return OrdinalDataset(y, X, len(frequencies)), gamma
