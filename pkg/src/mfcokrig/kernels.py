"""Matern correlation functions, correlation matrices and whitening primitives.

All emulator modules consume these. Every function here is pure and safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln, kv

from .exceptions import ConditioningError, InvalidParameterError

DEFAULT_JITTER = 1e-8
DEFAULT_SMOOTHNESS = 2.5


@dataclass(frozen=True)
class CorrelationParams:
    """Per-dimension Matern range parameters with a shared smoothness.

    Ranges are in the units of the corresponding input dimension; smoothness
    defaults to 2.5, the only value used by the emulators (the general-nu
    Bessel path exists for cross-checking).
    """

    ranges: np.ndarray
    smoothness: float = DEFAULT_SMOOTHNESS

    def __post_init__(self):
        ranges = np.atleast_1d(np.asarray(self.ranges, dtype=float))
        if ranges.ndim != 1:
            raise InvalidParameterError("ranges must be a 1-D vector")
        if not np.all(np.isfinite(ranges)) or np.any(ranges <= 0):
            raise InvalidParameterError(
                f"ranges must be strictly positive and finite, got {ranges}"
            )
        if not np.isfinite(self.smoothness) or self.smoothness <= 0:
            raise InvalidParameterError(
                f"smoothness must be positive, got {self.smoothness}"
            )
        object.__setattr__(self, "ranges", ranges)

    @property
    def dim(self) -> int:
        return self.ranges.shape[0]


def matern_correlation(u, range_, smoothness=DEFAULT_SMOOTHNESS):
    """Isotropic Matern correlation at distance ``u``.

    Uses the closed form for smoothness 2.5; any other smoothness goes
    through the modified-Bessel-function definition.
    """
    if range_ <= 0 or smoothness <= 0:
        raise InvalidParameterError(
            f"range and smoothness must be positive, got {range_}, {smoothness}"
        )
    u = np.asarray(u, dtype=float)
    if smoothness == 2.5:
        return _matern25(u, range_)
    return _matern_bessel(u, range_, smoothness)


def _matern25(u, range_):
    t = np.sqrt(5.0) * u / range_
    return (1.0 + t + t * t / 3.0) * np.exp(-t)


def _matern_bessel(u, range_, nu):
    """General-nu Matern via the modified Bessel function of the second kind."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    t = np.atleast_1d(np.sqrt(2.0 * nu) * u / range_)
    out = np.ones_like(t)
    pos = t > 0
    tp = t[pos]
    log_c = (1.0 - nu) * np.log(2.0) - gammaln(nu) + nu * np.log(tp)
    out[pos] = np.exp(log_c) * kv(nu, tp)
    return float(out[0]) if scalar else out


def product_correlation(x, x2, params: CorrelationParams):
    """Product of per-dimension Matern correlations between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.shape[0] != params.dim:
        raise InvalidParameterError(
            f"dimension mismatch: x {x.shape}, x2 {x2.shape}, ranges {params.dim}"
        )
    out = 1.0
    for i in range(params.dim):
        out *= float(
            matern_correlation(abs(x[i] - x2[i]), params.ranges[i], params.smoothness)
        )
    return out


def _pairwise_product_matern(A, B, params: CorrelationParams):
    """(len(A) x len(B)) product-Matern matrix, vectorized over dimensions."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != params.dim or B.shape[1] != params.dim:
        raise InvalidParameterError(
            f"dimension mismatch: designs have {A.shape[1]}/{B.shape[1]} columns, "
            f"ranges have {params.dim}"
        )
    out = np.ones((A.shape[0], B.shape[0]))
    for i in range(params.dim):
        d = np.abs(A[:, i, None] - B[None, :, i])
        out *= matern_correlation(d, params.ranges[i], params.smoothness)
    return out


@dataclass
class CorrelationMatrix:
    """A unit-diagonal correlation matrix with its jittered Cholesky factor.

    ``values`` keeps the raw (pre-jitter) matrix; the lower-triangular factor
    ``chol`` satisfies ``chol @ chol.T = values + jitter * I``.
    """

    values: np.ndarray
    jitter: float
    chol: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def solve(self, B):
        """(values + jitter I)^{-1} B via the cached factor."""
        return cho_solve((self.chol, True), np.asarray(B, dtype=float))

    def whiten(self, M):
        """L^{-1} M for the cached lower factor L."""
        return solve_triangular(self.chol, np.asarray(M, dtype=float), lower=True)

    @property
    def log_det(self) -> float:
        """log |values + jitter I| from the cached factor."""
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def correlation_matrix(X, params: CorrelationParams, jitter=DEFAULT_JITTER):
    """Correlation matrix of a design, factorized with diagonal jitter.

    Raises ConditioningError when the Cholesky factorization fails even after
    jitter, identifying the ranges that were tried.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if jitter < 0:
        raise InvalidParameterError(f"jitter must be nonnegative, got {jitter}")
    R = _pairwise_product_matern(X, X, params)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    try:
        L = cholesky(R + jitter * np.eye(R.shape[0]), lower=True)
    except np.linalg.LinAlgError as err:
        raise ConditioningError(
            f"correlation matrix of {R.shape[0]} points is not positive definite "
            f"with jitter {jitter:g} (ranges {params.ranges})"
        ) from err
    return CorrelationMatrix(values=R, jitter=float(jitter), chol=L)


def cross_correlation_vector(x0, X, params: CorrelationParams):
    """Correlations between a prediction point and each row of a design."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != params.dim:
        raise InvalidParameterError(
            f"dimension mismatch: x0 has {x0.shape[0]} entries, ranges {params.dim}"
        )
    return _pairwise_product_matern(x0[None, :], X, params)[0]


def whiten(R: CorrelationMatrix, M):
    """S with S^T S = M^T R^{-1} M, using the lower Cholesky factor of R.

    Any square root of R^{-1} satisfies the downstream contracts; the
    triangular solve is the cheap and stable choice.
    """
    M = np.asarray(M, dtype=float)
    try:
        return R.whiten(M)
    except np.linalg.LinAlgError as err:  # pragma: no cover - guarded upstream
        raise ConditioningError("whitening failed: singular correlation matrix") from err
