"""Chain diagnostics and distribution distances."""

import numpy as np


def autocorrelation(x):
    """Normalized autocorrelation of a 1-d series via FFT."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(c, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n]
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """Geyer's initial positive sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / n)
    return float(n / tau)


def ess_per_param(draws) -> np.ndarray:
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    return np.array([effective_sample_size(draws[:, j]) for j in range(draws.shape[1])])


def rhat(chains) -> np.ndarray:
    """Gelman-Rubin potential scale reduction, one value per column.

    ``chains`` has shape (m, n, p) or is a list of (n, p) arrays.
    """
    c = np.asarray(chains, dtype=float)
    if c.ndim == 2:
        c = c[:, :, None]
    m, n = c.shape[:2]
    means = c.mean(axis=1)
    B = n * means.var(axis=0, ddof=1)
    W = c.var(axis=1, ddof=1).mean(axis=0)
    var_plus = (n - 1) / n * W + B / n
    return np.sqrt(var_plus / W)


def ks_distance(cdf, draws) -> float:
    """sup_x |F(x) - F_n(x)| between a CDF callable and a sample."""
    x = np.sort(np.asarray(draws, dtype=float))
    n = len(x)
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def skewness(x) -> float:
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    return float(np.mean(c**3) / np.mean(c * c) ** 1.5)
