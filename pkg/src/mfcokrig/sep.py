"""Separable autoregressive cokriging with a sparse Cholesky output prior.

The level-t outputs are a matrix-variate GP whose N x N cross-precision is
parameterized through column regressions on nearest preceding locations in a
maximin ordering. Correlation ranges are sampled by per-level MH chains on
their marginal posterior; the regression blocks and conditional variances
have conjugate closed forms, and prediction walks a sequential Student-t
chain over locations. The p = 0 configuration is the conditionally
independent (parallel partial) baseline.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky
from sklearn.base import BaseEstimator

from .design import (
    NeighborSets,
    SpatialOrdering,
    build_neighbor_sets,
    maximin_order,
    rescale_unit,
    subset_row_indices,
)
from .exceptions import ConditioningError, InvalidParameterError
from .kernels import (
    DEFAULT_JITTER,
    CorrelationMatrix,
    CorrelationParams,
    correlation_matrix,
    cross_correlation_vector,
)
from .mcmc import (
    ChainSettings,
    effective_sample_size,
    half_cauchy_logpdf,
    map_estimate,
    random_walk_mh,
)
from .validation import as_per_level, check_multifidelity, resolve_bounds


@dataclass
class CholeskyFactors:
    """Conjugate posterior summaries of the modified Cholesky factors.

    For ordered location j: a | d ~ Normal(a_hat[j], d * V_hat[j]) and
    d ~ InverseGamma(dof / 2, d_hat[j] / 2). Locations with empty neighbor
    sets carry no regression block.
    """

    a_hat: list  # per location, (|C_j|,) coefficient means
    V_hat: list  # per location, (|C_j|, |C_j|) SPD scale matrices
    d_hat: np.ndarray  # (N,) positive
    dof: float

    @property
    def n_locations(self) -> int:
        return self.d_hat.shape[0]


def basis_matrix(X, kind):
    """Mean-basis rows for a design; 'constant' or 'linear'."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if kind == "constant":
        return np.ones((X.shape[0], 1))
    if kind == "linear":
        return np.hstack([np.ones((X.shape[0], 1)), X])
    raise InvalidParameterError(f"unknown basis kind {kind!r}")


def gls_estimates(R: CorrelationMatrix, H, Y, U=None, gamma=1.0, basis_name="basis"):
    """Generalized least squares of the (discrepancy-adjusted) outputs on H.

    Returns (beta_hat, B_hat, S): the coefficient matrix, the stacked
    coefficient matrix including the fixed discrepancy scale, and the
    whitened residuals S with S^T S = resid^T R^{-1} resid.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Y = np.asarray(Y, dtype=float)
    Ytil = Y - gamma * U if U is not None else Y
    beta, S, _ = _gls(R, H, Ytil, basis_name)
    if U is not None:
        B_hat = np.vstack([beta, gamma * np.eye(Y.shape[1])])
    else:
        B_hat = beta
    return beta, B_hat, S


def _gls(R: CorrelationMatrix, H, Ytil, basis_name="basis"):
    Hw = R.whiten(H)
    Yw = R.whiten(Ytil)
    G = Hw.T @ Hw
    try:
        cho_G = cholesky(G, lower=True)
    except np.linalg.LinAlgError as err:
        raise InvalidParameterError(
            f"basis {basis_name!r} is rank-deficient (H^T R^-1 H singular)"
        ) from err
    beta = cho_solve((cho_G, True), Hw.T @ Yw)
    S = Yw - Hw @ beta
    log_det_G = 2.0 * float(np.sum(np.log(np.diag(cho_G))))
    return beta, S, (cho_G, log_det_G)


class _GroupedNeighbors:
    """Neighbor sets regrouped by cardinality for batched linear algebra."""

    def __init__(self, neighbors: NeighborSets):
        self.sets = neighbors.sets
        self.empty_cols = np.array(
            [j for j, s in enumerate(neighbors.sets) if len(s) == 0], dtype=int
        )
        groups = {}
        for j, s in enumerate(neighbors.sets):
            if len(s):
                groups.setdefault(len(s), []).append(j)
        self.groups = [
            (k, np.asarray(cols, dtype=int),
             np.stack([neighbors.sets[j] for j in cols]))
            for k, cols in sorted(groups.items())
        ]


def _conjugate_factors(S, grouped: _GroupedNeighbors, tau2, lam, want_factors=False):
    """d_hat, log|V_hat| per location; optionally the full (a_hat, V_hat)."""
    N = S.shape[1]
    colsq = np.einsum("ij,ij->j", S, S)
    d_hat = colsq + lam
    log_det_V = np.zeros(N)
    a_hat = [np.empty(0)] * N if want_factors else None
    V_hat = [np.empty((0, 0))] * N if want_factors else None
    for k, cols, idx in grouped.groups:
        Sc = S[:, idx]  # (n, g, k)
        Sj = S[:, cols]  # (n, g)
        b = np.einsum("ngk,ng->gk", Sc, Sj)
        if k == 1:
            Gd = colsq[idx[:, 0]] + 1.0 / tau2  # (g,)
            a = b[:, 0] / Gd
            quad = b[:, 0] * a
            log_det_V[cols] = -np.log(Gd)
            if want_factors:
                for gi, j in enumerate(cols):
                    a_hat[j] = np.array([a[gi]])
                    V_hat[j] = np.array([[1.0 / Gd[gi]]])
        else:
            G = np.einsum("ngk,ngl->gkl", Sc, Sc)
            G[:, np.arange(k), np.arange(k)] += 1.0 / tau2
            cho = np.linalg.cholesky(G)
            a = np.linalg.solve(G, b[..., None])[..., 0]
            quad = np.einsum("gk,gk->g", b, a)
            log_det_V[cols] = -2.0 * np.log(
                np.diagonal(cho, axis1=1, axis2=2)
            ).sum(axis=1)
            if want_factors:
                Vinvs = G
                for gi, j in enumerate(cols):
                    a_hat[j] = a[gi]
                    V_hat[j] = np.linalg.inv(Vinvs[gi])
        d_hat[cols] = colsq[cols] - quad + lam
    if np.any(d_hat <= 0):
        raise ConditioningError("nonpositive conditional variance encountered")
    return colsq, d_hat, log_det_V, a_hat, V_hat


@dataclass
class _Level:
    """Per-fidelity training structures (outputs in maximin-ordered columns)."""

    X: np.ndarray
    Ytil: np.ndarray  # Y_t - gamma * U_{t-1} (U term absent at the first level)
    Y: np.ndarray
    U: np.ndarray | None
    H: np.ndarray
    gamma: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.H.shape[1]


def level_log_posterior(level: _Level, grouped: _GroupedNeighbors, theta,
                        prior_scales, tau2, eta, lam, jitter=DEFAULT_JITTER,
                        smoothness=2.5):
    """Log of one level's factor of the marginal posterior of theta.

    Theta-independent normalizing constants (including the fixed tau^2
    powers) are dropped; they cancel in MH ratios and MAP extraction.
    """
    params = CorrelationParams(ranges=theta, smoothness=smoothness)
    R = correlation_matrix(level.X, params, jitter)
    _, S, (_, log_det_G) = _gls(R, level.H, level.Ytil)
    N = S.shape[1]
    nu = level.n + eta - level.q
    _, d_hat, log_det_V, _, _ = _conjugate_factors(S, grouped, tau2, lam)
    value = (
        -0.5 * N * (R.log_det + log_det_G)
        - 0.5 * nu * float(np.sum(np.log(d_hat)))
        + 0.5 * float(np.sum(log_det_V))
    )
    for i, scale in enumerate(prior_scales):
        value += half_cauchy_logpdf(theta[i], scale)
    if not np.isfinite(value):
        raise ConditioningError(
            f"non-finite log posterior at theta {np.asarray(theta).tolist()}"
        )
    return value


def posterior_ad(level: _Level, grouped: _GroupedNeighbors, theta, tau2, eta,
                 lam, jitter=DEFAULT_JITTER, smoothness=2.5) -> CholeskyFactors:
    """Conjugate posterior of the modified Cholesky factors at fixed theta."""
    params = CorrelationParams(ranges=theta, smoothness=smoothness)
    R = correlation_matrix(level.X, params, jitter)
    _, S, _ = _gls(R, level.H, level.Ytil)
    _, d_hat, _, a_hat, V_hat = _conjugate_factors(
        S, grouped, tau2, lam, want_factors=True
    )
    return CholeskyFactors(a_hat=a_hat, V_hat=V_hat, d_hat=d_hat,
                           dof=level.n + eta - level.q)


def reconstruct_precision(A, D):
    """Omega = (I - A)^T D^{-1} (I - A) for strictly lower-triangular A."""
    A = np.asarray(A, dtype=float)
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        D = np.diag(D)
    if np.any(D <= 0):
        raise InvalidParameterError("D must have strictly positive entries")
    if np.any(np.triu(A) != 0):
        raise InvalidParameterError("A must be strictly lower triangular")
    I_A = np.eye(A.shape[0]) - A
    return I_A.T @ (I_A / D[:, None])


def dense_sigma(factors: CholeskyFactors, neighbors: NeighborSets,
                use_mean_d=False):
    """Dense cross-covariance implied by the factor means (small-N checks).

    With use_mean_d the diagonal uses the inverse-gamma posterior mean
    d_hat / (dof - 2); otherwise the d_hat values are used as-is.
    """
    N = factors.n_locations
    A = np.zeros((N, N))
    for j, C in enumerate(neighbors.sets):
        if len(C):
            A[j, C] = factors.a_hat[j]
    d = factors.d_hat / (factors.dof - 2.0) if use_mean_d else factors.d_hat
    omega = reconstruct_precision(A, d)
    return np.linalg.inv(omega)


def neighbor_r_squared(Y, ordering: SpatialOrdering, neighbors: NeighborSets):
    """Coefficient of determination of each ordered column on its neighbors.

    Diagnostic for choosing p: columns are centered, then regressed on their
    conditioning sets; R^2 near 1 means a small neighbor set suffices.
    """
    Yc = Y - Y.mean(axis=0)
    out = np.full(Yc.shape[1], np.nan)
    for j, C in enumerate(neighbors.sets):
        if len(C) == 0:
            continue
        Xc = Yc[:, C]
        denom = float(Yc[:, j] @ Yc[:, j])
        if denom == 0:
            continue
        coef, *_ = np.linalg.lstsq(Xc, Yc[:, j], rcond=None)
        resid = Yc[:, j] - Xc @ coef
        out[j] = 1.0 - float(resid @ resid) / denom
    return out


@dataclass
class _LevelCache:
    """Everything prediction needs for one level at a fixed theta."""

    theta: np.ndarray
    R: CorrelationMatrix
    beta: np.ndarray
    cho_G: np.ndarray
    factors: CholeskyFactors
    K: np.ndarray = field(repr=False)  # R^{-1} (Ytil - H beta), (n, N)


@dataclass
class PredictiveSummary:
    """Per-location and aggregated predictive summaries at test inputs."""

    mean: np.ndarray  # (n0, N)
    q025: np.ndarray
    q975: np.ndarray
    agg_mean: np.ndarray  # (n0,)
    agg_q025: np.ndarray
    agg_q975: np.ndarray
    samples_per_input: int


class SepEmulator(BaseEstimator):
    """Separable autoregressive cokriging emulator.

    Parameters
    ----------
    p : neighbor-set size for the sparse Cholesky prior; 0 gives the
        conditionally independent parallel-partial baseline.
    tau2, eta, lam : prior hyperparameters for the regression blocks and
        conditional variances; scalars or per-level sequences.
    gamma : fixed scale-discrepancy between successive levels; scalar or a
        sequence of length m - 1. Never estimated.
    basis : 'constant' or 'linear' mean basis.
    theta_prior_scales : half-Cauchy scales for the ranges, (d,) or (m, d);
        defaults to half the input range per dimension.
    mcmc : ChainSettings for the per-level MH chains.
    jitter : diagonal jitter added to every correlation matrix.
    n_threads : worker cap for concurrent per-level chains (results are
        independent of this value).
    """

    def __init__(self, p=1, tau2=1.0, eta=4.0, lam=2.0, gamma=1.0,
                 basis="constant", theta_prior_scales=None, mcmc=None,
                 jitter=DEFAULT_JITTER, smoothness=2.5, seed=0, n_threads=1,
                 location_scaling="unit"):
        self.p = p
        self.tau2 = tau2
        self.eta = eta
        self.lam = lam
        self.gamma = gamma
        self.basis = basis
        self.theta_prior_scales = theta_prior_scales
        self.mcmc = mcmc
        self.jitter = jitter
        self.smoothness = smoothness
        self.seed = seed
        self.n_threads = n_threads
        self.location_scaling = location_scaling

    # ------------------------------------------------------------------ fit

    def fit(self, X, Y, locations=None, bounds=None):
        """Fit per-level chains for the correlation ranges.

        X : list of (n_t, d) designs, nested from the first level down.
        Y : list of (n_t, N) output matrices on a common set of locations.
        locations : (N, k) coordinates of the outputs; required when p > 0.
        """
        self._prepare(X, Y, locations, bounds)
        m = len(self.levels_)
        settings = self.mcmc if self.mcmc is not None else ChainSettings()
        levels = self.levels_
        tau2, eta, lam = self._tau2, self._eta, self._lam
        init = [self.prior_scales_[t].copy() for t in range(m)]

        def run(t):
            def target(theta):
                return level_log_posterior(
                    levels[t], self._grouped, theta, self.prior_scales_[t],
                    tau2[t], eta[t], lam[t], self.jitter, self.smoothness,
                )

            return random_walk_mh(
                target, init[t], settings.with_seed([self.seed, 101, t])
            )

        if self.n_threads > 1 and m > 1:
            with ThreadPoolExecutor(max_workers=self.n_threads) as pool:
                self.chains_ = list(pool.map(run, range(m)))
        else:
            self.chains_ = [run(t) for t in range(m)]

        self.theta_map_ = [map_estimate(c) for c in self.chains_]
        self.caches_ = [
            self._build_cache(t, self.theta_map_[t]) for t in range(m)
        ]
        acc = [c.acceptance_rate for c in self.chains_]
        notes = [
            f"level {t + 1} acceptance rate {a:.3f} outside [0.05, 0.95]"
            for t, a in enumerate(acc)
            if not 0.05 <= a <= 0.95
        ]
        for msg in notes:
            warnings.warn(msg, RuntimeWarning)
        self._finish_metadata(acc, notes)
        self.metadata_["ess"] = [
            [effective_sample_size(c.samples[:, i])
             for i in range(c.samples.shape[1])]
            for c in self.chains_
        ]
        return self

    def fit_fixed(self, X, Y, theta, locations=None, bounds=None):
        """Build the fitted state at externally supplied range parameters.

        Used when loading a serialized fit artifact: no chains are run, so
        only the plug-in prediction path is available.
        """
        self._prepare(X, Y, locations, bounds)
        self.chains_ = None
        self.theta_map_ = [np.asarray(t, dtype=float) for t in theta]
        if len(self.theta_map_) != len(self.levels_):
            raise InvalidParameterError(
                f"theta must have one vector per level ({len(self.levels_)})"
            )
        self.caches_ = [
            self._build_cache(t, self.theta_map_[t])
            for t in range(len(self.levels_))
        ]
        self._finish_metadata(acceptance=None, notes=[])
        return self

    def _prepare(self, X, Y, locations=None, bounds=None):
        X, Y = check_multifidelity(X, Y)
        m = len(X)
        N = Y[0].shape[1]
        d = X[0].shape[1]

        if locations is None:
            if self.p > 0:
                raise InvalidParameterError(
                    "locations are required when p > 0 (neighbor sets are "
                    "built from spatial proximity)"
                )
            self.ordering_ = SpatialOrdering(
                permutation=np.arange(N), locations=np.zeros((N, 1))
            )
        else:
            locations = np.atleast_2d(np.asarray(locations, dtype=float))
            if locations.shape[0] != N:
                raise InvalidParameterError(
                    f"locations has {locations.shape[0]} rows, outputs have {N}"
                )
            if self.location_scaling == "unit":
                coords = rescale_unit(locations)
            elif self.location_scaling == "raw":
                coords = locations
            else:
                raise InvalidParameterError(
                    f"unknown location_scaling {self.location_scaling!r}"
                )
            self.ordering_ = maximin_order(coords)
        self.neighbors_ = build_neighbor_sets(self.ordering_, self.p)
        self._grouped = _GroupedNeighbors(self.neighbors_)

        self.bounds_ = resolve_bounds(bounds, X[0])
        scales = self.theta_prior_scales
        if scales is None:
            scales = 0.5 * (self.bounds_[:, 1] - self.bounds_[:, 0])
        scales = np.asarray(scales, dtype=float)
        self.prior_scales_ = (
            np.tile(scales, (m, 1)) if scales.ndim == 1 else scales
        )
        if self.prior_scales_.shape != (m, d):
            raise InvalidParameterError(
                f"theta_prior_scales must broadcast to ({m}, {d})"
            )

        tau2 = as_per_level(self.tau2, m, "tau2")
        eta = as_per_level(self.eta, m, "eta")
        lam = as_per_level(self.lam, m, "lam")
        if np.any(tau2 <= 0) or np.any(eta <= 0) or np.any(lam <= 0):
            raise InvalidParameterError("tau2, eta and lam must be positive")
        gammas = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if gammas.size == 1:
            gammas = np.full(max(m - 1, 0), float(gammas[0]))
        if gammas.size != max(m - 1, 0):
            raise InvalidParameterError(
                f"gamma must have {m - 1} entries, got {gammas.size}"
            )
        self._tau2, self._eta, self._lam, self._gammas = tau2, eta, lam, gammas

        perm = self.ordering_.permutation
        levels = []
        for t in range(m):
            Yt = Y[t][:, perm]
            H = basis_matrix(X[t], self.basis)
            if t == 0:
                levels.append(_Level(X=X[t], Ytil=Yt, Y=Yt, U=None, H=H,
                                     gamma=1.0))
            else:
                rows = subset_row_indices(X[t - 1], X[t], atol=1e-12)
                U = Y[t - 1][:, perm][rows]
                g = float(gammas[t - 1])
                levels.append(_Level(X=X[t], Ytil=Yt - g * U, Y=Yt, U=U, H=H,
                                     gamma=g))
            nu = levels[t].n + eta[t] - levels[t].q
            if nu <= 2:
                raise InvalidParameterError(
                    f"level {t + 1}: n + eta - q = {nu} must exceed 2 for a "
                    "finite predictive variance"
                )
        self.levels_ = levels
        return self

    def _finish_metadata(self, acceptance, notes):
        self.metadata_ = {
            "model": "sep" if self.p > 0 else "pp-baseline",
            "levels": len(self.levels_),
            "locations": self.levels_[0].Ytil.shape[1],
            "neighbors_p": int(self.p),
            "jitter": float(self.jitter),
            "seed": self.seed,
            "acceptance_rates": acceptance,
            "warnings": notes,
            "location_rescaling": self.location_scaling,
            "theta_map": [t.tolist() for t in self.theta_map_],
            "gamma": self._gammas.tolist(),
        }

    def _build_cache(self, t, theta) -> _LevelCache:
        level = self.levels_[t]
        params = CorrelationParams(ranges=theta, smoothness=self.smoothness)
        try:
            R = correlation_matrix(level.X, params, self.jitter)
        except ConditioningError as err:
            raise ConditioningError(f"level {t + 1}: {err}") from err
        beta, S, (cho_G, _) = _gls(R, level.H, level.Ytil)
        _, d_hat, _, a_hat, V_hat = _conjugate_factors(
            S, self._grouped, self._tau2[t], self._lam[t], want_factors=True
        )
        factors = CholeskyFactors(
            a_hat=a_hat, V_hat=V_hat, d_hat=d_hat,
            dof=level.n + self._eta[t] - level.q,
        )
        K = R.solve(level.Ytil - level.H @ beta)
        return _LevelCache(theta=np.asarray(theta, dtype=float), R=R,
                           beta=beta, cho_G=cho_G, factors=factors, K=K)

    # ------------------------------------------------------------- predict

    def _check_fitted(self):
        if not hasattr(self, "caches_"):
            raise InvalidParameterError("emulator is not fitted")

    def _point_terms(self, cache: _LevelCache, level: _Level, x0):
        """(M0, Rx): the data-driven part of M_t(x0) and the scalar R_t(x0)."""
        params = CorrelationParams(ranges=cache.theta, smoothness=self.smoothness)
        r = cross_correlation_vector(x0, level.X, params)
        w = cache.R.solve(r)
        rho = float(r @ w)
        h0 = basis_matrix(x0[None, :], self.basis)[0]
        M0 = cache.beta.T @ h0 + cache.K.T @ r
        hv = h0 - level.H.T @ w
        bc = float(hv @ cho_solve((cache.cho_G, True), hv))
        Rx = max(1.0 - rho + bc, 0.0)
        return M0, Rx

    def predict(self, X0, theta_source="map"):
        """Predictive means of the highest-fidelity outputs at new inputs.

        Location parameters propagate exactly through the level chain; the
        sequential neighbor corrections vanish identically when evaluated at
        the already-computed means, so the result is the M vector of the
        final level. With theta_source='chain' the means are averaged over
        the retained chain draws instead of plugged in at the MAP.
        """
        self._check_fitted()
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        if theta_source == "map":
            theta_sets = [np.stack([c.theta for c in self.caches_])]
            weights = [1.0]
        elif theta_source == "chain":
            if self.chains_ is None:
                raise InvalidParameterError(
                    "chain-based prediction needs a chain-fitted emulator "
                    "(this one was rebuilt from a fixed theta)"
                )
            kept = min(c.n_kept for c in self.chains_)
            theta_sets = [
                np.stack([self.chains_[t].samples[i] for t in range(len(self.levels_))])
                for i in range(kept)
            ]
            weights = [1.0 / kept] * kept
        else:
            raise InvalidParameterError(f"unknown theta_source {theta_source!r}")

        out = np.zeros((X0.shape[0], self.levels_[0].Ytil.shape[1]))
        cache_map = {}
        for thetas, wgt in zip(theta_sets, weights):
            key = thetas.tobytes()
            if key not in cache_map:
                cache_map[key] = [
                    self._build_cache(t, thetas[t])
                    if not np.array_equal(thetas[t], self.caches_[t].theta)
                    else self.caches_[t]
                    for t in range(len(self.levels_))
                ]
            caches = cache_map[key]
            for i, x0 in enumerate(X0):
                mean = None
                for t, (cache, level) in enumerate(zip(caches, self.levels_)):
                    M0, _ = self._point_terms(cache, level, x0)
                    mean = M0 if t == 0 else M0 + level.gamma * mean
                out[i] += wgt * mean
        return out[:, self.ordering_.inverse()]

    def sample(self, X0, n_samples, seed=0, theta_source="map"):
        """Joint predictive samples of the highest-fidelity outputs.

        Returns (len(X0), n_samples, N) draws from the sequential Student-t
        predictive, walking levels and ordered locations. Deterministic given
        the seed; per-input streams are independent.
        """
        self._check_fitted()
        if n_samples <= 0:
            raise InvalidParameterError(f"n_samples must be positive, got {n_samples}")
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        m = len(self.levels_)
        N = self.levels_[0].Ytil.shape[1]
        out = np.empty((X0.shape[0], n_samples, N))

        for i, x0 in enumerate(X0):
            rng = np.random.default_rng([self.seed, seed, 7919, i])
            if theta_source == "map":
                groups = [(self.caches_, n_samples)]
            elif theta_source == "chain":
                if self.chains_ is None:
                    raise InvalidParameterError(
                        "chain-based sampling needs a chain-fitted emulator "
                        "(this one was rebuilt from a fixed theta)"
                    )
                kept = min(c.n_kept for c in self.chains_)
                idx = np.sort(rng.integers(0, kept, size=n_samples))
                groups = []
                for u in np.unique(idx):
                    thetas = [self.chains_[t].samples[u] for t in range(m)]
                    caches = [
                        self.caches_[t]
                        if np.array_equal(thetas[t], self.caches_[t].theta)
                        else self._build_cache(t, thetas[t])
                        for t in range(m)
                    ]
                    groups.append((caches, int(np.sum(idx == u))))
            else:
                raise InvalidParameterError(f"unknown theta_source {theta_source!r}")

            filled = 0
            for caches, count in groups:
                y_prev = None
                for t, (cache, level) in enumerate(zip(caches, self.levels_)):
                    M0, Rx = self._point_terms(cache, level, x0)
                    M = M0[None, :] if t == 0 else M0[None, :] + level.gamma * y_prev
                    y_prev = _sample_level(
                        M, Rx, cache.factors, self.neighbors_, count, rng
                    )
                out[i, filled:filled + count] = y_prev
                filled += count
        return out[:, :, self.ordering_.inverse()]

    def predictive_summary(self, X0, n_samples=500, seed=0, mask=None,
                           theta_source="map") -> PredictiveSummary:
        """Per-location means/quantiles and aggregated-average summaries.

        The aggregated statistic is computed per joint sample and then
        summarized; intervals are equal-tailed 95% empirical quantiles.
        """
        if n_samples < 100:
            warnings.warn(
                f"samples_per_input = {n_samples} < 100: quantiles are unstable",
                RuntimeWarning,
            )
        mean = self.predict(X0, theta_source=theta_source)
        draws = self.sample(X0, n_samples, seed=seed, theta_source=theta_source)
        q025 = np.quantile(draws, 0.025, axis=1)
        q975 = np.quantile(draws, 0.975, axis=1)
        agg = draws.mean(axis=2) if mask is None else draws[:, :, mask].mean(axis=2)
        agg_mean = mean.mean(axis=1) if mask is None else mean[:, mask].mean(axis=1)
        return PredictiveSummary(
            mean=mean, q025=q025, q975=q975,
            agg_mean=agg_mean,
            agg_q025=np.quantile(agg, 0.025, axis=1),
            agg_q975=np.quantile(agg, 0.975, axis=1),
            samples_per_input=int(n_samples),
        )


def _sample_level(M, Rx, factors: CholeskyFactors, neighbors: NeighborSets,
                  count, rng):
    """Sequential Student-t draws over ordered locations for one level.

    M is (1 or count, N); returns (count, N). The scale of location j is
    nu^{-1} d_hat_j (R(x0) + dy^T V_hat dy): the exact marginalization of
    the regression block against its conjugate posterior, which reduces to
    the R(x0)-scaled form at R(x0) = 1. Each draw feeds the conditioning
    sets of later locations.
    """
    N = factors.n_locations
    nu = factors.dof
    M = np.broadcast_to(M, (count, N))
    T = rng.standard_t(nu, size=(count, N))
    y = np.empty((count, N))
    base = factors.d_hat / nu  # (N,)
    for j in range(N):
        C = neighbors.sets[j]
        if len(C) == 0:
            y[:, j] = M[:, j] + np.sqrt(base[j] * Rx) * T[:, j]
            continue
        dy = y[:, C] - M[:, C]
        a = factors.a_hat[j]
        V = factors.V_hat[j]
        mu = M[:, j] + dy @ a
        if len(C) == 1:
            quad = V[0, 0] * dy[:, 0] ** 2
        else:
            quad = np.einsum("bk,kl,bl->b", dy, V, dy)
        y[:, j] = mu + np.sqrt(base[j] * (Rx + quad)) * T[:, j]
    return y
