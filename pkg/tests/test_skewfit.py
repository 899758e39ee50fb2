import json

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid
from scipy.special import expit, logsumexp

from lpsplines.basis import PenaltyMatrix
from lpsplines.laplace import GaussianLaw, find_mode
from lpsplines.model import LatentModel, LatentPartition, PriorSpec
from lpsplines.propodds import (OrdinalDataset, ProportionalOddsModel, empirical_intercepts,
                                po_grad_hess, po_loglik)
from lpsplines.skewfit import (MARGINAL_METHODS, AxisFitError, SkewCorrectedPosterior,
                               WhitenedFrame, axis_marginal_logdensity, build_skew_posterior,
                               fit_density_on_grid, laplace_posterior, marginal_component_fit,
                               marginal_gamma_logdensity, sample_gamma, sample_joint, whiten)
from lpsplines.skewnormal import SkewNormal, sample_moments


class TinyPO(LatentModel):
    """Proportional odds with a free two-column design and ridge penalty."""

    def __init__(self, y, B, R):
        self.ds = OrdinalDataset(y, np.zeros(len(y)), R)
        self.B = B
        k2 = B.shape[1]
        self.partition = LatentPartition.from_sizes(R - 1, [k2])
        self.prior = PriorSpec.default(R - 1, [PenaltyMatrix(2, np.eye(k2), k2)])

    def loglik(self, xi):
        k = self.partition.k1
        return po_loglik(xi[:k], xi[k:], self.ds, self.B)

    def loglik_derivatives(self, xi):
        k = self.partition.k1
        return po_grad_hess(xi[:k], xi[k:], self.ds, self.B)

    def initial_xi(self):
        return np.concatenate([empirical_intercepts(self.ds.y, self.ds.R),
                               np.zeros(self.B.shape[1])])


@pytest.fixture(scope="module")
def tiny():
    rng = np.random.default_rng(0)
    n = 100
    x = rng.uniform(-1, 1, n)
    B = np.column_stack([x, x**2 - np.mean(x**2)])
    u = rng.logistic(size=n)
    y = 1 + np.sum(u[:, None] > np.array([-0.5, 1.5])[None, :] + 0.8 * x[:, None], axis=1)
    model = TinyPO(y, B, 3)
    return model, find_mode(model, [1.0])


def _theta_integral(model, fit, gamma, lam=1.0, npt=121, width=8.0):
    """log of the integral over theta of the joint posterior, on a 2-d trapezoid grid."""
    sd = np.sqrt(np.diag(fit.cov_tt))
    c = fit.theta_given_gamma.mean(gamma)
    a = np.linspace(-width, width, npt)
    T = np.stack(np.meshgrid(c[0] + a * sd[0], c[1] + a * sd[1], indexing="ij"), -1)
    T = T.reshape(-1, 2)
    off = T @ model.B.T
    G = gamma[None, None, :] + off[:, :, None]
    F = np.concatenate([np.zeros(off.shape + (1,)), expit(G), np.ones(off.shape + (1,))], -1)
    y = model.ds.y
    hi = np.take_along_axis(F, y[None, :, None], 2)[..., 0]
    lo = np.take_along_axis(F, (y - 1)[None, :, None], 2)[..., 0]
    lp = np.log(hi - lo).sum(1) - 0.5 * lam * np.sum(T * T, 1) - 0.5e-6 * gamma @ gamma
    return logsumexp(lp) + np.log((a[1] - a[0]) ** 2 * sd[0] * sd[1])


# ---- whitening --------------------------------------------------------------

def _random_pd(rng, k):
    A = rng.standard_normal((k, k))
    return A @ A.T + 0.1 * np.eye(k)


def test_whitening_identities_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(1, 21))
        S = _random_pd(rng, k)
        fr = whiten(S, rng.standard_normal(k))
        assert np.max(np.abs(fr.V.T @ fr.V - np.eye(k))) < 1e-12
        rec = fr.V @ np.diag(fr.zeta) @ fr.V.T
        assert np.max(np.abs(rec - S)) < 1e-10 * max(1.0, np.abs(S).max())
        W = np.diag(fr.zeta**-0.5) @ fr.V.T @ S @ fr.V @ np.diag(fr.zeta**-0.5)
        assert np.max(np.abs(W - np.eye(k))) < 1e-10
        assert np.all(np.diff(fr.zeta) <= 0)


def test_whitening_round_trip_and_signs():
    rng = np.random.default_rng(1)
    S = _random_pd(rng, 5)
    fr = whiten(S, np.arange(5.0))
    g = rng.standard_normal((20, 5))
    assert np.max(np.abs(fr.from_whitened(fr.to_whitened(g)) - g)) < 1e-12
    idx = np.argmax(np.abs(fr.V), axis=0)
    assert np.all(fr.V[idx, np.arange(5)] > 0)


def test_whitening_scalar():
    fr = whiten(np.array([[4.0]]), np.array([1.0]))
    assert fr.to_whitened(np.array([3.0]))[0] == pytest.approx(1.0)


def test_whitening_rejects_non_pd():
    with pytest.raises(np.linalg.LinAlgError):
        whiten(np.array([[1.0, 2.0], [2.0, 1.0]]))


# ---- gamma marginal ---------------------------------------------------------

@pytest.mark.parametrize("method", MARGINAL_METHODS)
def test_gaussian_marginal_exact(gauss_model, method):
    fit = find_mode(gauss_model, [2.0])
    mean, cov = gauss_model.exact_posterior([2.0])
    law = GaussianLaw(mean[:2], cov[:2, :2])
    rng = np.random.default_rng(2)
    G = mean[:2] + 0.3 * rng.standard_normal((6, 2))
    a = marginal_gamma_logdensity(fit, gauss_model, G, method)
    b = law.logpdf(G)
    assert np.ptp(a - b) < 1e-10


def test_plug_in_at_mode_uses_theta_hat(po_hyper, po_model):
    fit = po_hyper.fit
    val = marginal_gamma_logdensity(fit, po_model, fit.gamma_hat, "plug-in")
    ref = po_model.log_posterior(fit.mode, fit.lam) + 0.5 * fit.theta_given_gamma.log_det
    assert val == pytest.approx(ref, abs=1e-9)


def test_quadrature_oracle_tiny_theta(tiny):
    model, fit = tiny
    fr = whiten(fit)
    ts = np.linspace(-2, 2, 9)
    for s in range(2):
        q = np.array([_theta_integral(model, fit, g) for g in fr.axis_point(s, ts)])
        a = axis_marginal_logdensity(fit, model, fr, s, ts)
        assert np.ptp(q - a) < 0.01


def test_unknown_method(tiny):
    model, fit = tiny
    with pytest.raises(ValueError):
        marginal_gamma_logdensity(fit, model, fit.gamma_hat, "exact")


def test_axes_meet_at_mode(po_hyper, po_model):
    fit = po_hyper.fit
    fr = whiten(fit)
    vals = [axis_marginal_logdensity(fit, po_model, fr, s, 0.0) for s in range(fr.k1)]
    assert np.ptp(vals) < 1e-9


@pytest.mark.parametrize("method", MARGINAL_METHODS)
def test_gaussian_axis_curvature(gauss_model, method):
    fit = find_mode(gauss_model, [2.0])
    fr = whiten(fit)
    t = np.linspace(-4, 4, 17)
    for s in range(fr.k1):
        f = axis_marginal_logdensity(fit, gauss_model, fr, s, t, method)
        assert np.max(np.abs(f - f[8] + 0.5 * t**2)) < 1e-8


def test_symmetric_posterior_gives_symmetric_axis():
    # mirrored responses with identical covariates make p(gamma) symmetric about 0
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, 80)
    y = (rng.uniform(size=80) < expit(np.sin(4 * x))).astype(int) + 1
    model = ProportionalOddsModel.from_data(np.concatenate([y, 3 - y]), np.concatenate([x, x]),
                                            2, L=5)
    fit = find_mode(model, [2.0])
    fr = whiten(fit)
    fr = WhitenedFrame(fr.V, fr.zeta, np.zeros(1))
    t = np.linspace(0.5, 6, 12)
    for method in MARGINAL_METHODS:
        a = axis_marginal_logdensity(fit, model, fr, 0, t, method)
        b = axis_marginal_logdensity(fit, model, fr, 0, -t, method)
        assert np.max(np.abs(a - b)) < 1e-8


# ---- skew-normal fitting ------------------------------------------------------

def test_standard_normal_target():
    af = fit_density_on_grid(stats.norm.logpdf)
    sn = af.params
    assert abs(sn.psi) < 1e-6 and abs(sn.omega - 1) < 1e-6 and abs(sn.alpha) < 1e-6


def test_skew_normal_target_recovered():
    target = SkewNormal(0.0, 1.0, 3.0)
    sn = fit_density_on_grid(target.logpdf).params
    assert sn.psi == pytest.approx(0.0, abs=1e-4)
    assert sn.omega == pytest.approx(1.0, abs=1e-4)
    assert sn.alpha == pytest.approx(3.0, abs=1e-4)


def test_moment_match_exact_on_grid(po_hyper, po_model):
    fit = po_hyper.fit
    fr = whiten(fit)
    t = np.linspace(-8, 8, 401)
    for s in range(fr.k1):
        af = fit_density_on_grid(lambda u: axis_marginal_logdensity(fit, po_model, fr, s, u))
        if af.clamped:
            continue
        p = af.params.pdf(t)
        assert trapezoid(p, t) == pytest.approx(1.0, abs=1e-8)
        m = trapezoid(t * p, t)
        v = trapezoid((t - m) ** 2 * p, t)
        g = trapezoid((t - m) ** 3 * p, t) / v**1.5
        assert np.allclose([m, v, g], af.moments, atol=1e-6)


def test_grid_widening_and_failure():
    wide = fit_density_on_grid(stats.norm(0, 2.0).logpdf)
    assert wide.grid[1] == 16.0
    assert wide.params.omega == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(AxisFitError):
        fit_density_on_grid(stats.norm(0, 4.0).logpdf)
    with pytest.raises(AxisFitError):
        fit_density_on_grid(lambda t: np.zeros_like(t))
    with pytest.raises(AxisFitError):
        fit_density_on_grid(lambda t: np.full_like(t, np.nan))


def test_mode_anchored_variant():
    target = SkewNormal(0.0, 1.0, 4.0)
    af = fit_density_on_grid(target.logpdf, mode_anchored=True)
    assert af.params.mode() == pytest.approx(target.mode(), abs=1e-3)


# ---- assembled posterior -----------------------------------------------------

def test_zero_slant_equals_laplace(po_hyper, po_model):
    fit = po_hyper.fit
    post = laplace_posterior(fit, po_model)
    law = GaussianLaw(fit.gamma_hat, fit.cov_gg)
    rng = np.random.default_rng(4)
    G = fit.gamma_hat + 0.5 * rng.standard_normal((10, fit.k1)) @ np.linalg.cholesky(fit.cov_gg).T
    assert np.max(np.abs(post.logpdf_gamma(G) - law.logpdf(G))) < 1e-8


@pytest.fixture(scope="module")
def tiny_posterior(tiny):
    model, fit = tiny
    return build_skew_posterior(fit, model)


def test_density_integrates_to_one_k1_2(tiny_posterior):
    post = tiny_posterior
    a = np.linspace(-10, 10, 801)
    T = np.stack(np.meshgrid(a, a, indexing="ij"), -1).reshape(-1, 2)
    G = post.frame.from_whitened(T)
    dens = np.exp(post.logpdf_gamma(G)).reshape(801, 801)
    jac = np.prod(np.sqrt(post.frame.zeta))
    mass = trapezoid(trapezoid(dens, a, axis=1), a) * jac
    assert mass == pytest.approx(1.0, abs=1e-4)


def test_permuting_axes_leaves_density_unchanged(tiny_posterior):
    post = tiny_posterior
    perm = [1, 0]
    fr = post.frame
    swapped = SkewCorrectedPosterior(WhitenedFrame(fr.V[:, perm], fr.zeta[perm], fr.gamma_hat),
                                     tuple(post.axis_fits[i] for i in perm),
                                     post.theta_conditional, post.lambda_hat)
    G = fr.gamma_hat + np.random.default_rng(5).normal(0, 0.3, (7, 2))
    assert np.allclose(post.logpdf_gamma(G), swapped.logpdf_gamma(G), atol=1e-12)


def test_joint_density_is_gamma_times_conditional(tiny_posterior):
    post = tiny_posterior
    xi = sample_joint(post, 5, seed=0)
    ref = post.logpdf_gamma(xi[:, :2]) + np.array(
        [post.theta_conditional.law(g).logpdf(t) for g, t in zip(xi[:, :2], xi[:, 2:])])
    assert np.allclose(post.logpdf(xi), ref, atol=1e-10)


def test_sampler_conditional_covariance(tiny_posterior):
    post = tiny_posterior
    xi = sample_joint(post, 100_000, seed=1)
    g, th = xi[:, :2], xi[:, 2:]
    cond = post.theta_conditional
    resid = th - cond.mean(g)
    C = np.cov(resid.T)
    assert np.linalg.norm(C - cond.cov) / np.linalg.norm(cond.cov) < 0.05
    # within a narrow bin of gamma_1 the theta mean follows the regression line
    t = post.frame.to_whitened(g)
    sel = np.abs(t[:, 0] - 1.0) < 0.05
    assert np.allclose(th[sel].mean(0), cond.mean(g[sel]).mean(0),
                       atol=4 * np.sqrt(np.diag(cond.cov)).max() / np.sqrt(sel.sum()))


def test_per_axis_skewness(tiny_posterior):
    post = tiny_posterior
    t = post.frame.to_whitened(sample_gamma(post, 1_000_000, seed=2))
    for s, sn in enumerate(post.axis_fits):
        assert sample_moments(t[:, s])[2] == pytest.approx(sn.skewness, abs=0.02)


def test_gaussian_degeneracy_sampling(po_hyper, po_model):
    fit = po_hyper.fit
    g = sample_gamma(laplace_posterior(fit), 200_000, seed=3)
    sd = np.sqrt(np.diag(fit.cov_gg))
    assert np.max(np.abs(g.mean(0) - fit.gamma_hat) / sd) < 0.02
    assert np.max(np.abs(np.cov(g.T) - fit.cov_gg) / np.outer(sd, sd)) < 0.02


def test_sampling_reproducible(tiny_posterior):
    assert np.array_equal(sample_joint(tiny_posterior, 50, seed=9),
                          sample_joint(tiny_posterior, 50, seed=9))
    with pytest.raises(ValueError):
        sample_joint(tiny_posterior, 0)


def test_gamma_moments_match_sampling(tiny_posterior):
    post = tiny_posterior
    g = sample_gamma(post, 1_000_000, seed=4)
    for s in range(2):
        m, v, k = post.gamma_moments(s)
        em, ev, ek = sample_moments(g[:, s])
        assert em == pytest.approx(m, abs=4 * np.sqrt(v / 1e6))
        assert ev == pytest.approx(v, rel=0.01)
        assert ek == pytest.approx(k, abs=0.02)


def test_component_fit_single_axis(nb_hyper, nb_model):
    post = build_skew_posterior(nb_hyper.fit, nb_model)
    exact, _ = post.gamma_marginal(0)
    mc, _ = marginal_component_fit(post, 0, M=1_000_000, seed=5)
    assert mc.mean == pytest.approx(exact.mean, abs=4 * exact.sd / 1000)
    assert mc.sd == pytest.approx(exact.sd, rel=0.005)
    assert mc.skewness == pytest.approx(exact.skewness, abs=0.02)


def test_component_fit_gaussian_has_no_slant(po_hyper, po_model):
    post = laplace_posterior(po_hyper.fit, po_model)
    for s in range(post.k1):
        sn, _ = marginal_component_fit(post, s, M=1_000_000, seed=6)
        assert abs(sn.alpha) < 0.05


def test_rare_top_category_positive_slant(po_hyper, po_model):
    post = build_skew_posterior(po_hyper.fit, po_model)
    sn, clamped = marginal_component_fit(post, post.k1 - 1, M=200_000, seed=7)
    assert sn.alpha > 0 and sn.skewness > 0
    exact, _ = post.gamma_marginal(post.k1 - 1)
    assert exact.skewness > 0


def test_json_round_trip(tiny_posterior):
    post = tiny_posterior
    doc = json.loads(post.to_json())
    back = SkewCorrectedPosterior.from_dict(doc)
    xi = sample_joint(post, 10, seed=0)
    assert np.array_equal(post.logpdf(xi), back.logpdf(xi))
    doc["version"] = 99
    with pytest.raises(ValueError):
        SkewCorrectedPosterior.from_dict(doc)


def test_methods_agree_on_gaussian(gauss_model):
    fit = find_mode(gauss_model, [2.0])
    a = build_skew_posterior(fit, gauss_model, method="laplace")
    b = build_skew_posterior(fit, gauss_model, method="plug-in")
    for sa, sb in zip(a.axis_fits, b.axis_fits):
        assert abs(sa.alpha) < 1e-6 and abs(sb.alpha) < 1e-6
        assert sa.omega == pytest.approx(sb.omega, abs=1e-9)


def test_thread_count_does_not_change_fit(po_hyper, po_model):
    a = build_skew_posterior(po_hyper.fit, po_model, workers=1)
    b = build_skew_posterior(po_hyper.fit, po_model, workers=4)
    assert a.to_json() == b.to_json()
