"""Skew-normal distribution SN(psi, omega^2, alpha) and three-moment matching.

Density ``2/omega * phi(z) * Phi(alpha z)`` with ``z = (x - psi)/omega``.
With ``delta = alpha / sqrt(1 + alpha^2)`` and ``m = delta sqrt(2/pi)``:

    mean     = psi + omega m
    variance = omega^2 (1 - m^2)
    skewness = (4 - pi)/2 * m^3 / (1 - m^2)^(3/2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import log_ndtr, ndtr, owens_t

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
LOG_2PI = math.log(2.0 * math.pi)
#: skewness above which the moment fit is clamped
SKEW_CLAMP_TRIGGER = 0.995
SKEW_CLAMP_VALUE = 0.99
# |skewness| below this is roundoff; the cube-root inverse would turn it into a visible slant
SKEW_ZERO = 1e-12


def sn_skewness(delta):
    """Skewness of a skew-normal as a function of ``delta`` in [-1, 1]."""
    m = np.asarray(delta, dtype=float) * SQRT_2_OVER_PI
    return 0.5 * (4.0 - math.pi) * m**3 / (1.0 - m * m) ** 1.5


#: supremum of |skewness| over the family, reached as alpha -> infinity
SKEWNESS_SUP = float(sn_skewness(1.0))


def delta_from_skewness(g1, tol=1e-12) -> float:
    """Invert :func:`sn_skewness` by bisection (it is increasing in delta)."""
    g1 = float(g1)
    if abs(g1) >= SKEWNESS_SUP:
        raise ValueError(f"|skewness| {abs(g1):.6f} beyond the skew-normal range "
                         f"({SKEWNESS_SUP:.6f})")
    target = abs(g1)
    if target < SKEW_ZERO:
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sn_skewness(mid) < target:
            lo = mid
        else:
            hi = mid
    return math.copysign(0.5 * (lo + hi), g1)


@dataclass(frozen=True)
class SkewNormal:
    psi: float
    omega: float
    alpha: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("scale omega must be positive")

    @property
    def delta(self) -> float:
        return self.alpha / math.sqrt(1.0 + self.alpha**2)

    @property
    def mean(self) -> float:
        return self.psi + self.omega * self.delta * SQRT_2_OVER_PI

    @property
    def var(self) -> float:
        return self.omega**2 * (1.0 - 2.0 * self.delta**2 / math.pi)

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    @property
    def skewness(self) -> float:
        return float(sn_skewness(self.delta))

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.psi) / self.omega
        return (math.log(2.0) - math.log(self.omega) - 0.5 * LOG_2PI - 0.5 * z * z
                + log_ndtr(self.alpha * z))

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.psi) / self.omega
        return np.clip(ndtr(z) - 2.0 * owens_t(z, self.alpha), 0.0, 1.0)

    def ppf(self, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        lo = self.psi - 40.0 * self.omega
        hi = self.psi + 40.0 * self.omega
        out = [brentq(lambda x: float(self.cdf(x)) - p, lo, hi, xtol=1e-13 * self.omega)
               for p in q]
        return np.array(out)

    def mode(self) -> float:
        res = minimize_scalar(lambda x: -float(self.logpdf(x)),
                              bracket=(self.psi - self.omega, self.psi + self.omega),
                              tol=1e-12)
        return float(res.x)

    def sample(self, M, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        w = rng.standard_normal((2, int(M)))
        return self.from_normals(w[0], w[1])

    def from_normals(self, w0, w1):
        """Stochastic representation delta |W0| + sqrt(1 - delta^2) W1."""
        d = self.delta
        return self.psi + self.omega * (d * np.abs(w0) + math.sqrt(1.0 - d * d) * w1)

    def to_dict(self):
        return {"psi": self.psi, "omega": self.omega, "alpha": self.alpha}

    @classmethod
    def from_moments(cls, mean, var, skew):
        """Exact three-moment match; returns ``(SkewNormal, clamped)``."""
        if not (np.isfinite(mean) and np.isfinite(var) and np.isfinite(skew)) or var <= 0:
            raise ValueError("moments must be finite with positive variance")
        clamped = abs(skew) >= SKEW_CLAMP_TRIGGER
        if clamped:
            skew = math.copysign(SKEW_CLAMP_VALUE, skew)
        d = delta_from_skewness(skew)
        m = d * SQRT_2_OVER_PI
        omega = math.sqrt(var / (1.0 - m * m))
        alpha = d / math.sqrt(1.0 - d * d)
        return cls(float(mean - omega * m), float(omega), float(alpha)), clamped


SkewNormalParams = SkewNormal


def sample_moments(x):
    """Mean, (population) variance and skewness of a sample."""
    x = np.asarray(x, dtype=float)
    m = x.mean()
    c = x - m
    v = np.mean(c * c)
    return float(m), float(v), float(np.mean(c**3) / v**1.5)
