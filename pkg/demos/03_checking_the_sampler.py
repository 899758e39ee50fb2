"""
Checking the reference sampler on targets with known answers
============================================================

Before a chain is trusted as the yardstick for the approximations, it is
run on two targets whose laws are known exactly.

* A Gaussian additive model: at fixed lambda the posterior is Gaussian
  with closed-form mean and covariance.
* A data-free penalized coefficient: its penalty parameter keeps its
  Gamma prior, so the Gibbs draws of lambda must reproduce Gamma(a, b).

Run with ``python demos/03_checking_the_sampler.py`` (about 20 seconds).
"""

import numpy as np

from lpsplines.diagnostics import rhat
from lpsplines.mcmc import ChainConfig, run_chain
from lpsplines.testing import gaussian_fixture

model = gaussian_fixture(n=150, k1=2, L=8, seed=3)
lam = (5.0,)
mean, cov = model.exact_posterior(lam)

chains = [run_chain(model, ChainConfig(n_iter=40_000, burn_in=5_000, seed=s, fixed_lambda=lam))
          for s in (1, 2)]
draws = np.vstack([c.draws for c in chains])
sd = np.sqrt(np.diag(cov))
print("Gaussian target, 2 chains of 35000 draws")
print(f"  acceptance           {chains[0].acceptance_rate:.2f}, {chains[1].acceptance_rate:.2f}")
print(f"  max |mean error|/sd  {np.max(np.abs(draws.mean(0) - mean) / sd):.4f}")
print(f"  max variance error   {np.max(np.abs(draws.var(0) / sd**2 - 1)):.4f}")
print(f"  max R-hat            {rhat(np.stack([c.draws for c in chains])).max():.4f}")

# a Gamma-distributed lambda: theta carries no data, so lambda | D ~ Gamma(a, b)
from lpsplines.basis import PenaltyMatrix  # noqa: E402
from lpsplines.model import LatentModel, LatentPartition, ModelEvaluation, PriorSpec  # noqa: E402


class NoData(LatentModel):
    """One free coefficient with a standard normal likelihood, one penalized one without data."""

    def __init__(self, a, b):
        self.partition = LatentPartition.from_sizes(1, [1])
        self.prior = PriorSpec(np.zeros(1), np.zeros((1, 1)),
                               (PenaltyMatrix(0, np.eye(1), 1),), a, b)

    def loglik(self, xi):
        return -0.5 * xi[0] ** 2

    def loglik_derivatives(self, xi):
        return ModelEvaluation(self.loglik(xi), np.array([-xi[0], 0.0]), np.diag([-1.0, 0.0]))

    def initial_xi(self):
        return np.zeros(2)


a, b = 3.0, 2.0
out = run_chain(NoData(a, b), ChainConfig(n_iter=60_000, burn_in=5_000, seed=0), lam0=(a / b,))
lam_draws = out.lambda_draws[:, 0]
print("\nGibbs lambda, prior Gamma(3, rate 2)")
print(f"  mean     {lam_draws.mean():.4f}  (exact {a / b:.4f})")
print(f"  variance {lam_draws.var():.4f}  (exact {a / b**2:.4f})")
