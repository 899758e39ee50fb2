"""Equidistant cubic B-spline bases, recentering and difference penalties."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGREE = 3
GL_NODES_PER_SPAN = 8


class DomainError(ValueError):
    """Raised when a point falls outside the basis domain."""


class InvalidOrderError(ValueError):
    """Raised for a difference order incompatible with the basis size."""


@dataclass(frozen=True)
class BasisSpec:
    """Knot layout of an equidistant cubic B-spline basis.

    The grid has ``n_inner_segments`` equal spans on ``[xmin, xmax]`` and
    is extended by ``degree`` knots on both sides with the same spacing.
    """

    xmin: float
    xmax: float
    n_inner_segments: int = 8
    degree: int = DEGREE
    recentered: bool = False

    def __post_init__(self):
        if not self.xmin < self.xmax:
            raise ValueError(f"need xmin < xmax, got [{self.xmin}, {self.xmax}]")
        if self.n_inner_segments < 1:
            raise ValueError("n_inner_segments must be a positive integer")
        if self.degree != DEGREE:
            raise ValueError("only cubic bases (degree 3) are supported")

    @property
    def spacing(self) -> float:
        return (self.xmax - self.xmin) / self.n_inner_segments

    @property
    def knots(self) -> np.ndarray:
        k = np.arange(-self.degree, self.n_inner_segments + self.degree + 1)
        return self.xmin + k * self.spacing

    @property
    def n_raw(self) -> int:
        return self.n_inner_segments + self.degree

    @property
    def n_basis(self) -> int:
        return self.n_raw - 1 if self.recentered else self.n_raw

    @classmethod
    def for_columns(cls, xmin, xmax, L=10, recentered=True):
        """Spec whose (recentered or raw) basis has exactly ``L`` columns."""
        n_raw = L + 1 if recentered else L
        return cls(xmin, xmax, n_raw - DEGREE, DEGREE, recentered)


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    spec: BasisSpec

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class PenaltyMatrix:
    order: int
    matrix: np.ndarray
    rank: int

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def quad(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.matrix @ theta)


def _check_domain(spec: BasisSpec, x: np.ndarray):
    # tiny slack so that grid endpoints built by linspace are accepted
    tol = 1e-12 * (spec.xmax - spec.xmin)
    bad = (x < spec.xmin - tol) | (x > spec.xmax + tol) | ~np.isfinite(x)
    if np.any(bad):
        first = x[np.argmax(bad)]
        raise DomainError(
            f"point {first!r} outside basis domain [{spec.xmin}, {spec.xmax}]"
        )


def _cox_de_boor(knots: np.ndarray, degree: int, x: np.ndarray) -> np.ndarray:
    """Vectorized triangular Cox-de Boor scheme on a uniform knot vector."""
    n_basis = len(knots) - degree - 1
    # span index j with knots[j] <= x < knots[j+1]
    j = np.searchsorted(knots, x, side="right") - 1
    j = np.clip(j, degree, n_basis - 1)
    n = len(x)
    N = np.zeros((n, degree + 1))
    N[:, 0] = 1.0
    left = np.empty((n, degree + 1))
    right = np.empty((n, degree + 1))
    for d in range(1, degree + 1):
        left[:, d] = x - knots[j + 1 - d]
        right[:, d] = knots[j + d] - x
        saved = np.zeros(n)
        for r in range(d):
            temp = N[:, r] / (right[:, r + 1] + left[:, d - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, d - r] * temp
        N[:, d] = saved
    out = np.zeros((n, n_basis))
    rows = np.arange(n)
    for r in range(degree + 1):
        out[rows, j - degree + r] = N[:, r]
    return out


def raw_basis(spec: BasisSpec, points) -> BasisMatrix:
    x = np.atleast_1d(np.asarray(points, dtype=float))
    _check_domain(spec, x)
    x = np.clip(x, spec.xmin, spec.xmax)
    raw_spec = BasisSpec(spec.xmin, spec.xmax, spec.n_inner_segments, spec.degree, False)
    return BasisMatrix(_cox_de_boor(spec.knots, spec.degree, x), raw_spec)


def column_means(spec: BasisSpec) -> np.ndarray:
    """Average of each raw B-spline over ``[xmin, xmax]``.

    Gauss-Legendre with 8 nodes per knot span, exact for piecewise cubics.
    """
    nodes, weights = np.polynomial.legendre.leggauss(GL_NODES_PER_SPAN)
    h = spec.spacing
    starts = spec.xmin + h * np.arange(spec.n_inner_segments)
    x = (starts[:, None] + 0.5 * h * (nodes[None, :] + 1.0)).ravel()
    w = np.tile(0.5 * h * weights, spec.n_inner_segments)
    B = _cox_de_boor(spec.knots, spec.degree, x)
    return (w @ B) / (spec.xmax - spec.xmin)


def recenter_basis(raw: BasisMatrix) -> BasisMatrix:
    """Subtract each column's average over the domain and drop the last column."""
    spec = raw.spec
    if raw.values.shape[1] != spec.n_raw:
        raise ValueError("recenter_basis expects a raw basis")
    means = column_means(spec)
    values = raw.values[:, :-1] - means[:-1]
    return BasisMatrix(values, BasisSpec(spec.xmin, spec.xmax, spec.n_inner_segments,
                                         spec.degree, True))


def evaluate_basis(spec: BasisSpec, points) -> BasisMatrix:
    """Design matrix of ``spec`` at ``points``; recentered when ``spec.recentered`` is set."""
    raw = raw_basis(spec, points)
    return recenter_basis(raw) if spec.recentered else raw


def difference_matrix(n: int, r: int) -> np.ndarray:
    return np.diff(np.eye(n), n=r, axis=0)


def penalty_matrix(L: int, r: int = 2) -> PenaltyMatrix:
    """P = D_r' D_r on ``L`` coefficients (rank ``L - r``)."""
    if r < 1 or r >= L:
        raise InvalidOrderError(f"difference order r={r} requires 1 <= r < L={L}")
    D = difference_matrix(L, r)
    return PenaltyMatrix(r, D.T @ D, L - r)


def recentered_penalty(L: int, r: int = 2) -> PenaltyMatrix:
    """Difference penalty for a recentered basis with ``L`` kept columns.

    Differences are taken over all ``L + 1`` raw coefficients with the
    dropped one pinned at zero, so the penalty still annihilates exactly
    the polynomials of degree < r in x (minus the constant, which is
    absorbed by the centering). The rank is ``L - r + 1``.
    """
    if r < 1 or r >= L:
        raise InvalidOrderError(f"difference order r={r} requires 1 <= r < L={L}")
    D = difference_matrix(L + 1, r)[:, :-1]
    return PenaltyMatrix(r, D.T @ D, L + 1 - r)


def full_rank_penalty(L: int, r: int = 2, eps: float = 1e-6) -> PenaltyMatrix:
    """D_r' D_r + eps I, a proper prior precision template."""
    P = penalty_matrix(L, r)
    return PenaltyMatrix(r, P.matrix + eps * np.eye(L), L)


@dataclass(frozen=True)
class SplineTerm:
    """A covariate entering the predictor through a penalized B-spline."""

    name: str
    spec: BasisSpec
    penalty: PenaltyMatrix = field(repr=False)

    @property
    def size(self) -> int:
        return self.spec.n_basis

    def design(self, x) -> np.ndarray:
        return evaluate_basis(self.spec, x).values

    @classmethod
    def additive(cls, name, x, L=10, r=2, xmin=None, xmax=None):
        """Recentered term spanning the observed range of ``x``."""
        x = np.asarray(x, dtype=float)
        lo = float(x.min()) if xmin is None else float(xmin)
        hi = float(x.max()) if xmax is None else float(xmax)
        spec = BasisSpec.for_columns(lo, hi, L, recentered=True)
        return cls(name, spec, recentered_penalty(L, r))
