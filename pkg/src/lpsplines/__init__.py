"""Laplacian P-splines with skew-normal corrections for non-penalized parameters."""

from .basis import (BasisMatrix, BasisSpec, PenaltyMatrix, SplineTerm, evaluate_basis,
                    penalty_matrix, recenter_basis, recentered_penalty)
from .hyper import HyperPosterior, effective_dims, log_marginal_lambda, select_lambda
from .laplace import (LaplaceFit, conditional_theta_given_gamma, find_mode,
                      laplace_conditional)
from .mcmc import ChainConfig, ChainOutput, gibbs_lambda, mala_step, run_chain
from .model import LatentModel, LatentPartition, ModelEvaluation, PriorSpec
from .negbin import CountDataset, NegativeBinomialModel, nb_loglik, nb_simulate
from .propodds import OrdinalDataset, ProportionalOddsModel, po_grad_hess, po_loglik
from .skewfit import (SkewCorrectedPosterior, WhitenedFrame, build_skew_posterior,
                      fit_skew_normal_to_axis, laplace_posterior, marginal_component_fit,
                      marginal_gamma_logdensity, sample_joint, whiten)
from .skewnormal import SkewNormal, SkewNormalParams

__version__ = "0.1.0"

__all__ = [
    "BasisMatrix", "BasisSpec", "PenaltyMatrix", "SplineTerm", "evaluate_basis",
    "penalty_matrix", "recenter_basis", "recentered_penalty",
    "HyperPosterior", "effective_dims", "log_marginal_lambda", "select_lambda",
    "LaplaceFit", "conditional_theta_given_gamma", "find_mode", "laplace_conditional",
    "ChainConfig", "ChainOutput", "gibbs_lambda", "mala_step", "run_chain",
    "LatentModel", "LatentPartition", "ModelEvaluation", "PriorSpec",
    "CountDataset", "NegativeBinomialModel", "nb_loglik", "nb_simulate",
    "OrdinalDataset", "ProportionalOddsModel", "po_grad_hess", "po_loglik",
    "SkewCorrectedPosterior", "WhitenedFrame", "build_skew_posterior",
    "fit_skew_normal_to_axis", "laplace_posterior", "marginal_component_fit",
    "marginal_gamma_logdensity", "sample_joint", "whiten",
    "SkewNormal", "SkewNormalParams",
]
