"""Skew-corrected posterior for the non-penalized block ``gamma``.

Pipeline, all at a fixed penalty vector:

1. An (unnormalized) marginal log-density for gamma comes from the joint
   posterior with theta integrated out by a Gaussian approximation, either
   around the conditional mode of theta or around the linear predictor
   ``E(theta | gamma)`` of the Laplace fit.
2. ``Sigma_gg = V diag(zeta) V'`` whitens gamma: ``t = zeta^-1/2 V'(gamma - gamma_hat)``.
3. Along each whitened axis the marginal is evaluated on a grid and a
   skew-normal is fitted by matching mean, variance and skewness.
4. The axes are treated as independent, which gives a closed-form joint
   density for gamma and, with the Gaussian theta | gamma, an exact
   sampler for the whole latent vector.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid

from .laplace import ConditionalTheta, GaussianLaw, LaplaceFit
from .model import LatentModel
from .skewnormal import SkewNormal, sample_moments

SCHEMA_VERSION = 1
GRID = (-8.0, 8.0, 401)
WIDE_GRID = (-16.0, 16.0, 401)
# relative density at the grid edge above which mass is deemed to escape
EDGE_MASS_TOL = 1e-9
# largest tolerated fraction of mass beyond the widened grid
TAIL_MASS_TOL = 1e-6


class AxisFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class WhitenedFrame:
    V: np.ndarray
    zeta: np.ndarray
    gamma_hat: np.ndarray

    @property
    def k1(self) -> int:
        return len(self.zeta)

    def to_whitened(self, gamma):
        d = np.asarray(gamma, dtype=float) - self.gamma_hat
        return (d @ self.V) / np.sqrt(self.zeta)

    def from_whitened(self, t):
        t = np.asarray(t, dtype=float)
        return self.gamma_hat + (t * np.sqrt(self.zeta)) @ self.V.T

    def axis_point(self, s, t):
        """gamma_hat + t sqrt(zeta_s) v_s for scalar or vector ``t``."""
        t = np.asarray(t, dtype=float)
        return self.gamma_hat + np.multiply.outer(t, np.sqrt(self.zeta[s]) * self.V[:, s])


def whiten(fit_or_cov, gamma_hat=None) -> WhitenedFrame:
    """Eigen-decomposition of the gamma covariance block.

    Eigenvalues are sorted in decreasing order and each eigenvector is
    signed so that its largest-magnitude entry is positive.
    """
    if isinstance(fit_or_cov, LaplaceFit):
        cov, gamma_hat = fit_or_cov.cov_gg, fit_or_cov.gamma_hat
    else:
        cov = np.atleast_2d(np.asarray(fit_or_cov, dtype=float))
        gamma_hat = np.zeros(len(cov)) if gamma_hat is None else gamma_hat
    cov = 0.5 * (cov + cov.T)
    zeta, V = np.linalg.eigh(cov)
    if not np.all(zeta > 0):
        raise np.linalg.LinAlgError("gamma covariance block is not positive definite")
    order = np.argsort(zeta)[::-1]
    zeta, V = zeta[order], V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(V.shape[1])])
    return WhitenedFrame(V, zeta, np.array(gamma_hat, dtype=float))


MARGINAL_METHODS = ("laplace", "plug-in")


def _theta_profile(model: LatentModel, lam, gamma, theta0, max_iter=100):
    """Maximize the joint log-posterior over theta with gamma held fixed.

    Returns ``(f, log|-H_tt|, theta)`` at the conditional mode; ``f`` is
    ``-inf`` where the posterior vanishes for every theta (e.g. unordered
    intercepts).
    """
    k1 = len(gamma)
    th = np.array(theta0, dtype=float)
    ev = model.gradient_hessian(np.concatenate([gamma, th]), lam)
    if not np.isfinite(ev.loglik):
        return -np.inf, 0.0, th
    f = ev.loglik
    mu = 0.0
    for _ in range(max_iter):
        U = ev.gradient[k1:]
        A = -ev.hessian[k1:, k1:]
        try:
            c = linalg.cho_factor(A + mu * np.eye(len(th)), lower=True)
        except linalg.LinAlgError:
            mu = max(10.0 * mu, 1e-6 * float(np.max(np.abs(np.diag(A)))) + 1e-12)
            continue
        step = linalg.cho_solve(c, U)
        if mu == 0.0 and 0.5 * float(U @ step) < 1e-13 * max(1.0, abs(f)):
            break
        trial = model.gradient_hessian(np.concatenate([gamma, th + step]), lam)
        if trial.loglik >= f:
            th, ev, f = th + step, trial, trial.loglik
            mu = 0.0 if mu < 1e-8 else 0.2 * mu
        else:
            mu = max(5.0 * mu, 1e-4 * float(np.max(np.abs(np.diag(A)))))
    A = -ev.hessian[k1:, k1:]
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        return -np.inf, 0.0, th
    return float(f), float(logdet), th


def marginal_gamma_logdensity(fit: LaplaceFit, model: LatentModel, gamma,
                              method="laplace") -> np.ndarray:
    """Unnormalized log p(gamma | lambda, D) for one or many gamma rows.

    ``method="plug-in"`` evaluates the joint log-posterior at
    ``(gamma, E(theta | gamma))`` and adds half the log determinant of the
    fixed conditional covariance of theta. ``method="laplace"`` replaces
    both ingredients by their gamma-specific versions: the conditional mode
    of theta and the curvature there. The two agree exactly when the
    posterior is Gaussian; the second also tracks how the spread of theta
    changes with gamma, which moves the location of the marginal.
    """
    if method not in MARGINAL_METHODS:
        raise ValueError(f"unknown marginal method {method!r}")
    cond = fit.theta_given_gamma
    gamma = np.asarray(gamma, dtype=float)
    single = gamma.ndim == 1
    G = np.atleast_2d(gamma)
    T = cond.mean(G)
    out = np.empty(len(G))
    if method == "plug-in":
        for i in range(len(G)):
            out[i] = model.log_posterior(np.concatenate([G[i], T[i]]), fit.lam)
        out += 0.5 * cond.log_det
    else:
        for i in range(len(G)):
            f, logdet, _ = _theta_profile(model, fit.lam, G[i], T[i])
            out[i] = f - 0.5 * logdet
    return float(out[0]) if single else out


def axis_marginal_logdensity(fit, model, frame: WhitenedFrame, s, t, method="laplace"):
    t = np.asarray(t, dtype=float)
    tt = np.atleast_1d(t)
    G = np.atleast_2d(frame.axis_point(s, tt))
    if method != "laplace":
        vals = marginal_gamma_logdensity(fit, model, G, method)
    else:
        # walk outward from the point closest to the mode, warm-starting theta
        vals = np.empty(len(tt))
        start = int(np.argmin(np.abs(tt)))
        cond = fit.theta_given_gamma
        for idx in (range(start, len(tt)), range(start - 1, -1, -1)):
            th = None
            for i in idx:
                guess = cond.mean(G[i]) if th is None else th
                f, logdet, th_i = _theta_profile(model, fit.lam, G[i], guess)
                vals[i] = f - 0.5 * logdet
                th = th_i if np.isfinite(f) else None
    return vals if t.ndim else float(vals[0])


@dataclass(frozen=True)
class AxisFit:
    params: SkewNormal
    clamped: bool
    moments: tuple  # mean, variance, skewness of the target
    grid: tuple
    mode_anchored: bool = False


def _grid_moments(t, logd):
    finite = np.isfinite(logd)
    if not finite.any():
        raise AxisFitError("axis density is zero on the whole grid")
    d = np.where(finite, np.exp(logd - np.max(logd[finite])), 0.0)
    mass = trapezoid(d, t)
    p = d / mass
    m = trapezoid(t * p, t)
    v = trapezoid((t - m) ** 2 * p, t)
    g = trapezoid((t - m) ** 3 * p, t) / v**1.5
    return d, (float(m), float(v), float(g))


def _tail_mass_fraction(t, d) -> float:
    """Mass beyond the grid relative to the mass on it, from an exponential tail."""
    h = t[1] - t[0]
    tail = 0.0
    for a, b in ((d[-1], d[-2]), (d[0], d[1])):
        if a == 0.0:
            continue
        rate = (np.log(b) - np.log(a)) / h if b > 0 else np.inf
        tail += a / rate if rate > 0 else np.inf
    return tail / trapezoid(d, t)


def fit_density_on_grid(logdensity, grid=GRID, mode_anchored=False) -> AxisFit:
    """Moment-matched skew-normal for a univariate log-density callable.

    The grid is widened once when the density is not negligible at its
    edges; on the widened grid a truncated tail is tolerated up to
    ``TAIL_MASS_TOL`` of the mass.
    """
    for g in (grid, WIDE_GRID):
        t = np.linspace(*g)
        logd = np.asarray(logdensity(t), dtype=float)
        if np.any(np.isnan(logd)) or np.any(logd == np.inf):
            raise AxisFitError("axis log-density is not finite")
        d, mom = _grid_moments(t, logd)
        ok = all(np.isfinite(mom)) and mom[1] > 0
        if ok and max(d[0], d[-1]) <= EDGE_MASS_TOL:
            break
    else:
        if not (ok and _tail_mass_fraction(t, d) <= TAIL_MASS_TOL):
            raise AxisFitError("density mass escapes the widened grid [-16, 16]")
    sn, clamped = SkewNormal.from_moments(*mom)
    if mode_anchored:
        # keep the matched shape, place the SN mode on the target's mode
        i = int(np.argmax(d))
        i = min(max(i, 1), len(t) - 2)
        y0, y1, y2 = np.log(np.maximum(d[i - 1:i + 2], 1e-300))
        h = t[1] - t[0]
        denom = y0 - 2 * y1 + y2
        t_mode = t[i] + (0.5 * h * (y0 - y2) / denom if denom < 0 else 0.0)
        sn = SkewNormal(sn.psi + t_mode - sn.mode(), sn.omega, sn.alpha)
    return AxisFit(sn, clamped, mom, g, mode_anchored)


def fit_skew_normal_to_axis(fit, model, frame, s, mode_anchored=False,
                            method="laplace") -> AxisFit:
    return fit_density_on_grid(lambda t: axis_marginal_logdensity(fit, model, frame, s, t, method),
                               mode_anchored=mode_anchored)


@dataclass(frozen=True)
class SkewCorrectedPosterior:
    frame: WhitenedFrame
    axis_fits: tuple
    theta_conditional: ConditionalTheta = field(repr=False)
    lambda_hat: np.ndarray
    clamped: tuple = ()
    parameter_names: tuple = ()

    @property
    def k1(self) -> int:
        return self.frame.k1

    @property
    def k2(self) -> int:
        return len(self.theta_conditional.theta_hat)

    def logpdf_gamma(self, gamma):
        t = np.atleast_2d(self.frame.to_whitened(gamma))
        out = np.zeros(len(t))
        for s, sn in enumerate(self.axis_fits):
            out += sn.logpdf(t[:, s]) - 0.5 * np.log(self.frame.zeta[s])
        return out if np.ndim(gamma) > 1 else float(out[0])

    def logpdf(self, xi):
        """Joint log-density of (gamma, theta)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        g, th = xi[:, : self.k1], xi[:, self.k1:]
        out = np.atleast_1d(self.logpdf_gamma(g))
        cond = self.theta_conditional
        L = cond.chol
        resid = th - cond.mean(g)
        z = np.linalg.solve(L, resid.T)
        out += -0.5 * (np.sum(z * z, axis=0) + cond.log_det + self.k2 * np.log(2 * np.pi))
        return out if out.size > 1 else float(out[0])

    def sample_whitened(self, M, rng):
        W = rng.standard_normal((2, int(M), self.k1))
        return np.column_stack([sn.from_normals(W[0][:, s], W[1][:, s])
                                for s, sn in enumerate(self.axis_fits)])

    def gamma_moments(self, s) -> tuple:
        """Exact mean, variance and skewness of gamma_s under the factorized law.

        gamma_s is a linear combination of independent skew-normal axes, so
        its first three cumulants are weighted sums of the axis cumulants.
        """
        c = np.sqrt(self.frame.zeta) * self.frame.V[s]
        mean = self.frame.gamma_hat[s] + sum(ci * sn.mean for ci, sn in zip(c, self.axis_fits))
        var = sum(ci**2 * sn.var for ci, sn in zip(c, self.axis_fits))
        k3 = sum(ci**3 * sn.skewness * sn.sd**3 for ci, sn in zip(c, self.axis_fits))
        return float(mean), float(var), float(k3 / var**1.5)

    def gamma_marginal(self, s) -> tuple:
        """Skew-normal law for gamma_s; returns ``(SkewNormal, clamped)``.

        Exact when k1 == 1; otherwise the skew-normal sharing the exact first
        three moments of gamma_s.
        """
        if self.k1 == 1:
            sn = self.axis_fits[0]
            scale = float(np.sqrt(self.frame.zeta[0]) * self.frame.V[0, 0])
            loc = float(self.frame.gamma_hat[0])
            alpha = sn.alpha if scale > 0 else -sn.alpha
            return SkewNormal(loc + scale * sn.psi, abs(scale) * sn.omega, alpha), False
        return SkewNormal.from_moments(*self.gamma_moments(s))

    def to_dict(self):
        c = self.theta_conditional
        return {
            "schema": "lpsplines.skew_posterior",
            "version": SCHEMA_VERSION,
            "lambda_hat": self.lambda_hat.tolist(),
            "parameter_names": list(self.parameter_names),
            "frame": {"V": self.frame.V.tolist(), "zeta": self.frame.zeta.tolist(),
                      "gamma_hat": self.frame.gamma_hat.tolist()},
            "axes": [dict(sn.to_dict(), clamped=bool(cl))
                     for sn, cl in zip(self.axis_fits, self.clamped)],
            "theta_conditional": {"theta_hat": c.theta_hat.tolist(),
                                  "regression": c.regression.tolist(),
                                  "cov": c.cov.tolist()},
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != "lpsplines.skew_posterior" or doc.get("version") != SCHEMA_VERSION:
            raise ValueError("unsupported posterior document")
        fr = doc["frame"]
        frame = WhitenedFrame(np.array(fr["V"], dtype=float), np.array(fr["zeta"], dtype=float),
                              np.array(fr["gamma_hat"], dtype=float))
        axes = tuple(SkewNormal(a["psi"], a["omega"], a["alpha"]) for a in doc["axes"])
        tc = doc["theta_conditional"]
        cond = ConditionalTheta(frame.gamma_hat, np.array(tc["theta_hat"], dtype=float),
                                np.array(tc["regression"], dtype=float).reshape(-1, frame.k1),
                                np.array(tc["cov"], dtype=float))
        return cls(frame, axes, cond, np.array(doc["lambda_hat"], dtype=float),
                   tuple(a["clamped"] for a in doc["axes"]), tuple(doc["parameter_names"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def build_skew_posterior(fit: LaplaceFit, model: LatentModel, lam_hat=None,
                         mode_anchored=False, workers=1,
                         method="laplace") -> SkewCorrectedPosterior:
    """Fit every whitened axis and assemble the factorized posterior.

    ``method`` selects how the gamma marginal is evaluated along each axis,
    see :func:`marginal_gamma_logdensity`.
    """
    if method not in MARGINAL_METHODS:
        raise ValueError(f"unknown marginal method {method!r}")
    frame = whiten(fit)

    def one(s):
        return fit_skew_normal_to_axis(fit, model, frame, s, mode_anchored, method)

    if workers > 1 and frame.k1 > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            fits = list(ex.map(one, range(frame.k1)))
    else:
        fits = [one(s) for s in range(frame.k1)]
    lam = fit.lam if lam_hat is None else np.asarray(lam_hat, dtype=float)
    names = tuple(getattr(model, "parameter_names", ()))
    return SkewCorrectedPosterior(frame, tuple(f.params for f in fits), fit.theta_given_gamma,
                                  np.array(lam, dtype=float), tuple(f.clamped for f in fits),
                                  names)


def laplace_posterior(fit: LaplaceFit, model: LatentModel | None = None) -> SkewCorrectedPosterior:
    """The Laplace Gaussian written in factorized form (every axis has alpha = 0)."""
    frame = whiten(fit)
    axes = tuple(SkewNormal(0.0, 1.0, 0.0) for _ in range(frame.k1))
    names = tuple(getattr(model, "parameter_names", ())) if model is not None else ()
    return SkewCorrectedPosterior(frame, axes, fit.theta_given_gamma, np.array(fit.lam, dtype=float),
                                  (False,) * frame.k1, names)


def sample_gamma(posterior: SkewCorrectedPosterior, M, seed=None) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return posterior.frame.from_whitened(posterior.sample_whitened(M, rng))


def sample_joint(posterior: SkewCorrectedPosterior, M, seed=None) -> np.ndarray:
    """Independent draws of ``xi = (gamma, theta)``, one per row."""
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gamma = posterior.frame.from_whitened(posterior.sample_whitened(M, rng))
    cond = posterior.theta_conditional
    z = rng.standard_normal((int(M), posterior.k2))
    theta = cond.mean(gamma) + z @ cond.chol.T
    return np.hstack([gamma, theta])


def marginal_component_fit(posterior: SkewCorrectedPosterior, s, M=100_000, seed=None,
                           antithetic=True):
    """Skew-normal fitted by moments to Monte Carlo draws of gamma_s.

    With ``antithetic`` the symmetric normal part of every whitened draw is
    paired with its negation (same half-normal part), so each draw keeps
    the right law while the sample odd moments lose the symmetric noise;
    without it, the slant of a near-Gaussian marginal is dominated by
    Monte Carlo error. Returns ``(SkewNormal, clamped)``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not antithetic:
        g = sample_gamma(posterior, M, rng)[:, s]
        return SkewNormal.from_moments(*sample_moments(g))
    half = (int(M) + 1) // 2
    W0 = np.abs(rng.standard_normal((half, posterior.k1)))
    W1 = rng.standard_normal((half, posterior.k1))
    W0, W1 = np.vstack([W0, W0]), np.vstack([W1, -W1])
    t = np.column_stack([sn.from_normals(W0[:, j], W1[:, j])
                         for j, sn in enumerate(posterior.axis_fits)])
    g = posterior.frame.from_whitened(t)[: int(M), s]
    return SkewNormal.from_moments(*sample_moments(g))


def laplace_gamma_law(fit: LaplaceFit) -> GaussianLaw:
    return GaussianLaw(fit.gamma_hat, fit.cov_gg)
