import copy

import numpy as np
import pytest

from lpsplines.basis import BasisSpec, evaluate_basis, full_rank_penalty
from lpsplines.hyper import (MARGINAL_LIKELIHOOD, MARGINAL_POSTERIOR, LambdaCriterion,
                             SelectionError, effective_dims, log_marginal_lambda, select_lambda)
from lpsplines.model import PriorSpec
from lpsplines.propodds import ProportionalOddsModel
from lpsplines.testing import GaussianModel
from oracles import fd_gradient


@pytest.fixture(scope="module")
def conjugate_model():
    """Proper Gaussian prior on every coordinate, so the n x n evidence is well conditioned."""
    rng = np.random.default_rng(0)
    n = 60
    x = np.sort(rng.uniform(0, 1, n))
    B = evaluate_basis(BasisSpec(0.0, 1.0, 4), x).values
    y = 1 + np.sin(2 * np.pi * x) + 0.3 * rng.standard_normal(n)
    return GaussianModel(y, np.ones((n, 1)), [B], [full_rank_penalty(7, 2, 0.1)], sigma=0.3,
                         gamma_precision=np.eye(1))


def test_gaussian_evidence_differences(conjugate_model):
    lams = [0.05, 0.3, 1.0, 7.0, 100.0]
    diff = [log_marginal_lambda(conjugate_model, [l], MARGINAL_LIKELIHOOD)
            - conjugate_model.exact_log_evidence([l]) for l in lams]
    assert np.ptp(diff) < 1e-8


def test_posterior_minus_likelihood_is_log_prior(po_model):
    lam = np.array([30.0, 4.0])
    a = log_marginal_lambda(po_model, lam, MARGINAL_POSTERIOR)
    b = log_marginal_lambda(po_model, lam, MARGINAL_LIKELIHOOD)
    assert a - b == pytest.approx(po_model.log_lambda_prior(lam), abs=1e-10)


def test_jacobian_identity(small_po_model):
    crit = LambdaCriterion(small_po_model)
    rng = np.random.default_rng(1)
    for u in rng.uniform(-3, 6, (5, 1)):
        assert crit.log_density_upsilon(u) - crit.log_density(np.exp(u)) == pytest.approx(
            u.sum(), abs=1e-9)


def test_rate_shift_in_criterion(small_po_model):
    lam = np.array([12.0])
    base = log_marginal_lambda(small_po_model, lam)
    m = copy.copy(small_po_model)
    pr = m.prior
    m.prior = PriorSpec(pr.gamma_mean, pr.gamma_precision, pr.penalties, pr.a, pr.b + 0.5)
    assert log_marginal_lambda(m, lam) - base == pytest.approx(-0.5 * 12.0, abs=1e-9)


def test_invalid_criterion(small_po_model):
    with pytest.raises(ValueError):
        log_marginal_lambda(small_po_model, [1.0], "gcv")
    with pytest.raises(ValueError):
        select_lambda(small_po_model, scale="log")


@pytest.mark.parametrize("criterion", [MARGINAL_POSTERIOR, MARGINAL_LIKELIHOOD])
def test_selected_point_is_stationary(po_model, criterion):
    h = select_lambda(po_model, criterion)
    crit = LambdaCriterion(po_model, criterion)
    obj = crit.objective("lambda")
    free = np.array([b is None for b in h.boundary])
    g = fd_gradient(obj, h.upsilon, h=1e-4)
    assert np.max(np.abs(g[free])) < 1e-6
    assert h.grad_norm < 1e-6


def test_likelihood_selection_flags_linear_term(po_model):
    h = select_lambda(po_model, MARGINAL_LIKELIHOOD)
    # the linear effect is pushed to the upper guard, as an infinite penalty would be
    assert h.boundary[0] == "upper"
    assert h.edf[0] == pytest.approx(1.0, abs=0.05)
    assert any("effectively polynomial" in note for note in h.notes)


def test_grid_search_agrees(nb_model, nb_hyper):
    crit = LambdaCriterion(nb_model)
    ups = np.linspace(-4, 8, 200)
    vals = np.array([crit.log_density(np.exp([u])) for u in ups])
    cell = ups[1] - ups[0]
    assert abs(ups[np.argmax(vals)] - nb_hyper.upsilon[0]) <= cell
    assert nb_hyper.value >= vals.max() - 1e-9


def test_two_starts_agree(po_model, po_hyper):
    other = select_lambda(po_model, ups0=[-5.0, 8.0])
    assert np.max(np.abs(other.upsilon - po_hyper.upsilon)) < 1e-4


def test_warm_start_does_not_change_answer(po_model, po_hyper):
    cold = select_lambda(po_model, warm_start=False)
    assert np.max(np.abs(cold.upsilon - po_hyper.upsilon)) < 1e-6


def test_upsilon_scale_pushes_penalty_up(po_model, po_hyper):
    h = select_lambda(po_model, scale="upsilon")
    assert np.all(h.upsilon >= po_hyper.upsilon - 1e-6)


def test_selection_error_on_iteration_cap(po_model):
    with pytest.raises(SelectionError):
        select_lambda(po_model, max_iter=1, ups0=[-6.0, -6.0])


def test_linear_term_shrinks_to_one_dimension(po_hyper):
    assert po_hyper.edf[0] <= 1.3
    assert po_hyper.edf[1] >= 2.0
    assert np.all(np.isfinite(po_hyper.mode)) and np.all(po_hyper.mode > 0)


def test_edf_large_lambda_limit(po_model):
    edf = effective_dims(po_model, np.full(2, np.exp(12.0)))
    assert np.allclose(edf, 1.0, atol=0.05)


def test_edf_small_lambda_limit(po_model):
    ds = po_model.dataset
    flat = ProportionalOddsModel.from_data(ds.y, ds.X, ds.R, q_scale=0.0)
    edf = effective_dims(flat, np.full(2, np.exp(-12.0)))
    assert np.allclose(edf, 10.0, atol=0.05)


def test_edf_in_survey_envelope(po_model):
    # edf between 1 and 4 over the range of penalties seen on survey-sized data
    for lam in (18.0, 60.0, 200.0):
        edf = effective_dims(po_model, [lam, lam])
        assert np.all((edf >= 1.0) & (edf <= 4.0))


def test_edf_decreasing_in_lambda(nb_model):
    edf = [effective_dims(nb_model, [l])[0] for l in (0.01, 1.0, 100.0, 1e4)]
    assert np.all(np.diff(edf) < 0)
