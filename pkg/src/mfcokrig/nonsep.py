"""Nonseparable autoregressive cokriging through per-level PCA weights.

Each level's standardized outputs are projected onto their leading principal
directions; the component weights carry independent GPs linked across
fidelity levels by a regression on matched (or selected) lower-level
weights. Weight chains sample the correlation ranges; reconstruction maps
sampled weights back through the basis, adding noise for the discarded
directions.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from sklearn.base import BaseEstimator

from .design import subset_row_indices
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
    half_normal_logpdf,
    map_estimate,
    random_walk_mh,
)
from .validation import check_multifidelity, resolve_bounds

SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class StandardizationStats:
    """Per-location centers and the scale dividing the centered outputs."""

    center: np.ndarray  # (N,)
    scale: np.ndarray  # scalar () or per-location (N,)

    def apply(self, Y):
        return (Y - self.center) / self.scale

    def invert(self, Yc):
        return Yc * self.scale + self.center


def standardize(Y, per_location=False):
    """Center each location; scale globally (default) or per location.

    A single global scale keeps the spatial variance structure that the
    basis construction must capture; per-location scaling is available for
    data with wildly different units across locations.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] < 2:
        raise InvalidParameterError("standardization needs at least 2 rows")
    center = Y.mean(axis=0)
    Yc = Y - center
    if per_location:
        scale = np.maximum(Yc.std(axis=0, ddof=1), SCALE_FLOOR)
    else:
        scale = np.asarray(max(Yc.std(ddof=1), SCALE_FLOOR))
    stats = StandardizationStats(center=center, scale=scale)
    return Yc / scale, stats


def unstandardize(Yc, stats: StandardizationStats):
    return stats.invert(np.asarray(Yc, dtype=float))


@dataclass(frozen=True)
class PcBasis:
    """Orthonormal basis of the leading principal directions of one level.

    W holds the observed weights (scores); explained the per-component
    variance fractions; discarded_variances the score variances of the
    dropped directions, used as reconstruction noise.
    """

    K: np.ndarray  # (N, p)
    W: np.ndarray  # (n, p)
    explained: np.ndarray  # (p,)
    discarded_directions: np.ndarray = field(repr=False)  # (N, r)
    discarded_variances: np.ndarray = field(repr=False)  # (r,)

    @property
    def n_components(self) -> int:
        return self.K.shape[1]


def pca(Yc, p) -> PcBasis:
    """Top-p principal directions of a centered matrix, with score variances."""
    Yc = np.atleast_2d(np.asarray(Yc, dtype=float))
    n, N = Yc.shape
    r_max = min(n, N)
    if not 1 <= p <= r_max:
        raise InvalidParameterError(
            f"p must be in [1, {r_max}] for a {n} x {N} matrix, got {p}"
        )
    U, s, Vt = np.linalg.svd(Yc, full_matrices=False)
    # deterministic sign: largest-magnitude loading positive per component
    for ell in range(Vt.shape[0]):
        k = np.argmax(np.abs(Vt[ell]))
        if Vt[ell, k] < 0:
            Vt[ell] *= -1.0
    K = Vt[:p].T
    W = Yc @ K
    total = float(np.sum(s**2))
    explained = (s[:p] ** 2) / total if total > 0 else np.zeros(p)
    disc_var = s[p:] ** 2 / max(n - 1, 1)
    return PcBasis(
        K=K,
        W=W,
        explained=explained,
        discarded_directions=Vt[p:].T,
        discarded_variances=disc_var,
    )


@dataclass(frozen=True)
class WeightGpSpec:
    """Model structure of one weight process: predictors and prior."""

    level: int  # 0-based
    component: int  # 0-based
    predictors: np.ndarray  # indices into the previous level's components
    prior: str  # 'half-cauchy' or 'half-normal'
    prior_scales: np.ndarray  # (d,)


def weight_log_posterior(w, R: CorrelationMatrix, theta, prior, prior_scales,
                         W_prev=None):
    """Log posterior of one weight GP's ranges, coefficients integrated out.

    First-level processes are zero-mean; later levels regress on the chosen
    previous-level weight columns with a flat coefficient prior and Jeffreys
    variance prior.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if W_prev is None:
        qform = float(w @ R.solve(w))
        if qform <= 0:
            raise ConditioningError("nonpositive weight quadratic form")
        value = -0.5 * R.log_det - 0.5 * n * np.log(qform)
    else:
        W_prev = np.atleast_2d(np.asarray(W_prev, dtype=float))
        k = W_prev.shape[1]
        Ww = R.whiten(W_prev)
        ww = R.whiten(w)
        G = Ww.T @ Ww
        try:
            cho_G = np.linalg.cholesky(G)
        except np.linalg.LinAlgError as err:
            raise ConditioningError(
                "predictor weight matrix is rank-deficient"
            ) from err
        beta = cho_solve((cho_G, True), Ww.T @ ww)
        resid = ww - Ww @ beta
        qform = float(resid @ resid)
        qform = max(qform, 1e-300)
        log_det_G = 2.0 * float(np.sum(np.log(np.diag(cho_G))))
        value = -0.5 * R.log_det - 0.5 * log_det_G - 0.5 * (n - k) * np.log(qform)
    logpdf = half_cauchy_logpdf if prior == "half-cauchy" else half_normal_logpdf
    for i, scale in enumerate(prior_scales):
        value += logpdf(theta[i], scale)
    return value


@dataclass
class _WeightCache:
    """Prediction quantities of one weight GP at a fixed theta."""

    theta: np.ndarray
    R: CorrelationMatrix
    w: np.ndarray
    beta: np.ndarray | None  # (k,) for linked levels, None at the first
    Kvec: np.ndarray  # R^{-1} (w - W_prev beta), (n,)
    cho_G: np.ndarray | None
    WtRinv: np.ndarray | None  # W_prev^T R^{-1}, (k, n)
    sigma2: float
    dof: float


def _build_weight_cache(X, w, W_prev, theta, jitter, smoothness) -> _WeightCache:
    params = CorrelationParams(ranges=theta, smoothness=smoothness)
    R = correlation_matrix(X, params, jitter)
    n = w.shape[0]
    if W_prev is None:
        Kvec = R.solve(w)
        sigma2 = float(w @ Kvec) / n
        return _WeightCache(theta=np.asarray(theta, float), R=R, w=w, beta=None,
                            Kvec=Kvec, cho_G=None, WtRinv=None, sigma2=sigma2,
                            dof=float(n))
    k = W_prev.shape[1]
    RinvW = R.solve(W_prev)
    G = W_prev.T @ RinvW
    cho_G = np.linalg.cholesky(G)
    beta = cho_solve((cho_G, True), W_prev.T @ R.solve(w))
    resid = w - W_prev @ beta
    Kvec = R.solve(resid)
    sigma2 = float(resid @ Kvec) / (n - k)
    return _WeightCache(theta=np.asarray(theta, float), R=R, w=w, beta=beta,
                        Kvec=Kvec, cho_G=cho_G, WtRinv=RinvW.T, sigma2=sigma2,
                        dof=float(n - k))


def predict_weight(cache: _WeightCache, X, x0, w_prev_x0=None,
                   smoothness=2.5):
    """Student-t parameters (location, squared scale, dof) at one input.

    For linked levels the location and the basis-correction part of the
    scale consume the supplied previous-level weight values, which may be a
    vector over samples.
    """
    params = CorrelationParams(ranges=cache.theta, smoothness=smoothness)
    r = cross_correlation_vector(x0, X, params)
    rho = float(r @ cache.R.solve(r))
    if cache.beta is None:
        loc = float(r @ cache.Kvec)
        scale2 = cache.sigma2 * max(1.0 - rho, 0.0)
        return loc, scale2, cache.dof
    u = np.atleast_2d(np.asarray(w_prev_x0, dtype=float))  # (B, k)
    loc = u @ cache.beta + float(r @ cache.Kvec)
    g = u - (cache.WtRinv @ r)[None, :]  # (B, k)
    z = np.linalg.solve(cache.cho_G, g.T)  # triangular-compatible solve
    bc = np.einsum("kb,kb->b", z, z)
    scale2 = cache.sigma2 * np.maximum(1.0 - rho + bc, 0.0)
    return loc, scale2, cache.dof


def reconstruct(weights, basis: PcBasis, stats: StandardizationStats, seed=None,
                rng=None, truncation_noise=True):
    """Map weight draws back to output space in original units.

    weights is (B, p); adds independent noise along each discarded direction
    with its score variance, then unstandardizes. Deterministic given seed.
    """
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    if W.shape[1] != basis.n_components:
        raise InvalidParameterError(
            f"weights have {W.shape[1]} components, basis has {basis.n_components}"
        )
    Yc = W @ basis.K.T
    if truncation_noise and basis.discarded_variances.size:
        if rng is None:
            rng = np.random.default_rng(seed)
        sd = np.sqrt(basis.discarded_variances)
        eps = rng.standard_normal((W.shape[0], sd.size)) * sd
        Yc = Yc + eps @ basis.discarded_directions.T
    return stats.invert(Yc)


class NonsepEmulator(BaseEstimator):
    """Nonseparable (basis-weight) autoregressive cokriging emulator.

    Parameters
    ----------
    n_components : basis size p per level (the benchmark study uses 8 at
        both levels).
    predictor_mode : 'matched' links each component to its same-numbered
        lower-level weight; 'correlated' selects predictors with
        |correlation| above predictor_threshold (the matched one is always
        kept).
    prior_scale_factor : half-Cauchy / half-normal scales as a fraction of
        each input range (0.5 = half range).
    per_location_scale : standardize each location by its own spread instead
        of one global scale.
    """

    def __init__(self, n_components=8, predictor_mode="matched",
                 predictor_threshold=0.9, prior_scale_factor=0.5,
                 prior_scale_overrides=None, per_location_scale=False,
                 mcmc=None, jitter=DEFAULT_JITTER, smoothness=2.5, seed=0,
                 n_threads=1):
        self.n_components = n_components
        self.predictor_mode = predictor_mode
        self.predictor_threshold = predictor_threshold
        self.prior_scale_factor = prior_scale_factor
        self.prior_scale_overrides = prior_scale_overrides
        self.per_location_scale = per_location_scale
        self.mcmc = mcmc
        self.jitter = jitter
        self.smoothness = smoothness
        self.seed = seed
        self.n_threads = n_threads

    # ------------------------------------------------------------------ fit

    def fit(self, X, Y, bounds=None):
        """Standardize, build per-level bases, and fit every weight chain."""
        self._prepare(X, Y, bounds)
        settings = self.mcmc if self.mcmc is not None else ChainSettings()

        def run(spec: WeightGpSpec):
            t, ell = spec.level, spec.component
            w = self.bases_[t].W[:, ell]
            W_prev = (
                self.W_at_level_[t][:, spec.predictors] if t > 0 else None
            )

            def target(theta):
                params = CorrelationParams(ranges=theta,
                                           smoothness=self.smoothness)
                R = correlation_matrix(self.X_[t], params, self.jitter)
                return weight_log_posterior(w, R, theta, spec.prior,
                                            spec.prior_scales, W_prev)

            return random_walk_mh(
                target, spec.prior_scales.copy(),
                settings.with_seed([self.seed, 211, t, ell]),
            )

        if self.n_threads > 1 and len(self.specs_) > 1:
            with ThreadPoolExecutor(max_workers=self.n_threads) as pool:
                self.chains_ = list(pool.map(run, self.specs_))
        else:
            self.chains_ = [run(s) for s in self.specs_]

        self.theta_map_ = [map_estimate(c) for c in self.chains_]
        self._build_caches()
        acc = [c.acceptance_rate for c in self.chains_]
        notes = [
            f"level {s.level + 1} component {s.component + 1} acceptance "
            f"rate {a:.3f} outside [0.05, 0.95]"
            for s, a in zip(self.specs_, acc)
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

    def fit_fixed(self, X, Y, theta, bounds=None):
        """Fitted state at supplied per-(level, component) range parameters."""
        self._prepare(X, Y, bounds)
        if len(theta) != len(self.specs_):
            raise InvalidParameterError(
                f"theta must have {len(self.specs_)} vectors, got {len(theta)}"
            )
        self.chains_ = None
        self.theta_map_ = [np.asarray(t, dtype=float) for t in theta]
        self._build_caches()
        self._finish_metadata(acceptance=None, notes=[])
        return self

    def _prepare(self, X, Y, bounds=None):
        X, Y = check_multifidelity(X, Y)
        m = len(X)
        self.bounds_ = resolve_bounds(bounds, X[0])
        base_scales = self.prior_scale_factor * (
            self.bounds_[:, 1] - self.bounds_[:, 0]
        )

        self.stats_ = []
        self.bases_ = []
        for t in range(m):
            Yc, stats = standardize(Y[t], per_location=self.per_location_scale)
            p = min(self.n_components, min(Y[t].shape))
            self.stats_.append(stats)
            self.bases_.append(pca(Yc, p))
        self.X_ = X

        # previous-level weights evaluated at each level's own inputs
        self.W_at_level_ = [None]
        for t in range(1, m):
            rows = subset_row_indices(X[t - 1], X[t], atol=1e-12)
            self.W_at_level_.append(self.bases_[t - 1].W[rows])

        self.specs_ = []
        for t in range(m):
            p_t = self.bases_[t].n_components
            for ell in range(p_t):
                scales = np.asarray(base_scales, dtype=float).copy()
                if self.prior_scale_overrides:
                    key = (t, ell)
                    if key in self.prior_scale_overrides:
                        scales = np.asarray(
                            self.prior_scale_overrides[key], dtype=float
                        )
                if t == 0:
                    predictors = np.empty(0, dtype=int)
                    prior = "half-cauchy"
                else:
                    predictors = self._select_predictors(t, ell)
                    prior = "half-normal"
                    n_t = X[t].shape[0]
                    if n_t - len(predictors) <= 2:
                        raise InvalidParameterError(
                            f"level {t + 1} component {ell + 1}: n - predictors "
                            f"= {n_t - len(predictors)} must exceed 2"
                        )
                self.specs_.append(WeightGpSpec(level=t, component=ell,
                                                predictors=predictors,
                                                prior=prior,
                                                prior_scales=scales))

        return self

    def _build_caches(self):
        self.caches_ = {}
        for spec, theta in zip(self.specs_, self.theta_map_):
            t, ell = spec.level, spec.component
            W_prev = self.W_at_level_[t][:, spec.predictors] if t > 0 else None
            self.caches_[(t, ell)] = _build_weight_cache(
                self.X_[t], self.bases_[t].W[:, ell], W_prev, theta,
                self.jitter, self.smoothness,
            )

    def _finish_metadata(self, acceptance, notes):
        self.metadata_ = {
            "model": "nonsep",
            "levels": len(self.X_),
            "n_components": [b.n_components for b in self.bases_],
            "explained": [b.explained.tolist() for b in self.bases_],
            "jitter": float(self.jitter),
            "seed": self.seed,
            "acceptance_rates": acceptance,
            "warnings": notes,
            "standardization": (
                "per-location" if self.per_location_scale else "global-scale"
            ),
            "predictors": [s.predictors.tolist() for s in self.specs_],
        }

    def _select_predictors(self, t, ell):
        p_prev = self.bases_[t - 1].n_components
        if self.predictor_mode == "matched":
            return np.array([min(ell, p_prev - 1)], dtype=int)
        if self.predictor_mode == "correlated":
            w = self.bases_[t].W[:, ell]
            Wp = self.W_at_level_[t]
            keep = []
            for j in range(p_prev):
                c = np.corrcoef(w, Wp[:, j])[0, 1]
                if abs(c) > self.predictor_threshold or j == min(ell, p_prev - 1):
                    keep.append(j)
            return np.array(sorted(keep), dtype=int)
        raise InvalidParameterError(
            f"unknown predictor_mode {self.predictor_mode!r}"
        )

    # ------------------------------------------------------------- predict

    def _check_fitted(self):
        if not hasattr(self, "caches_"):
            raise InvalidParameterError("emulator is not fitted")

    def _propagate_weight_means(self, x0):
        """Location parameters of every weight, levels walked in order."""
        m = len(self.X_)
        means = []
        for t in range(m):
            p_t = self.bases_[t].n_components
            mt = np.empty(p_t)
            for ell in range(p_t):
                spec = self._spec(t, ell)
                cache = self.caches_[(t, ell)]
                if t == 0:
                    loc, _, _ = predict_weight(cache, self.X_[t], x0,
                                               smoothness=self.smoothness)
                    mt[ell] = loc
                else:
                    u = means[t - 1][spec.predictors][None, :]
                    loc, _, _ = predict_weight(cache, self.X_[t], x0, u,
                                               smoothness=self.smoothness)
                    mt[ell] = float(loc[0])
            means.append(mt)
        return means

    def _spec(self, t, ell) -> WeightGpSpec:
        for s in self.specs_:
            if s.level == t and s.component == ell:
                return s
        raise KeyError((t, ell))

    def predict(self, X0):
        """Point predictions: weight locations propagated, then projected."""
        self._check_fitted()
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        m = len(self.X_)
        out = np.empty((X0.shape[0], self.bases_[m - 1].K.shape[0]))
        for i, x0 in enumerate(X0):
            w_m = self._propagate_weight_means(x0)[m - 1]
            out[i] = reconstruct(w_m[None, :], self.bases_[m - 1],
                                 self.stats_[m - 1], truncation_noise=False)[0]
        return out

    def sample_weights(self, x0, n_samples, rng):
        """Joint weight draws across levels at one input: (m list of (B, p))."""
        m = len(self.X_)
        draws = []
        for t in range(m):
            p_t = self.bases_[t].n_components
            wt = np.empty((n_samples, p_t))
            for ell in range(p_t):
                spec = self._spec(t, ell)
                cache = self.caches_[(t, ell)]
                T = rng.standard_t(cache.dof, size=n_samples)
                if t == 0:
                    loc, s2, _ = predict_weight(cache, self.X_[t], x0,
                                                smoothness=self.smoothness)
                    wt[:, ell] = loc + np.sqrt(s2) * T
                else:
                    u = draws[t - 1][:, spec.predictors]
                    loc, s2, _ = predict_weight(cache, self.X_[t], x0, u,
                                                smoothness=self.smoothness)
                    wt[:, ell] = loc + np.sqrt(s2) * T
            draws.append(wt)
        return draws

    def sample(self, X0, n_samples, seed=0):
        """Joint predictive samples of the highest-fidelity outputs."""
        self._check_fitted()
        if n_samples <= 0:
            raise InvalidParameterError(f"n_samples must be positive, got {n_samples}")
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        m = len(self.X_)
        N = self.bases_[m - 1].K.shape[0]
        out = np.empty((X0.shape[0], n_samples, N))
        for i, x0 in enumerate(X0):
            rng = np.random.default_rng([self.seed, seed, 104729, i])
            w = self.sample_weights(x0, n_samples, rng)[m - 1]
            out[i] = reconstruct(w, self.bases_[m - 1], self.stats_[m - 1],
                                 rng=rng)
        return out

    def predictive_summary(self, X0, n_samples=500, seed=0, mask=None):
        """Per-location and aggregated summaries; see the SEP counterpart."""
        from .sep import PredictiveSummary

        if n_samples < 100:
            warnings.warn(
                f"samples_per_input = {n_samples} < 100: quantiles are unstable",
                RuntimeWarning,
            )
        mean = self.predict(X0)
        draws = self.sample(X0, n_samples, seed=seed)
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


def sweep_components(X, Y, X_test, Y_test, p_range, mcmc=None, seed=0,
                     jitter=DEFAULT_JITTER, prior_scale_factor=0.5,
                     n_threads=1, bounds=None):
    """RMSPE of the cokriging and single-level-kriging variants per basis size.

    Each weight chain is independent of the basis size under the matched
    predictor sets, so one fit at max(p_range) serves every p: point
    predictions for a given p use the first p components only. The kriging
    variant fits the highest-fidelity level alone.
    """
    p_range = sorted(int(p) for p in p_range)
    p_max = p_range[-1]
    rows = []
    co = NonsepEmulator(n_components=p_max, mcmc=mcmc, seed=seed, jitter=jitter,
                        prior_scale_factor=prior_scale_factor,
                        n_threads=n_threads).fit(X, Y, bounds=bounds)
    kr = NonsepEmulator(n_components=p_max, mcmc=mcmc, seed=seed, jitter=jitter,
                        prior_scale_factor=prior_scale_factor,
                        n_threads=n_threads).fit([X[-1]], [Y[-1]], bounds=bounds)
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    Y_test = np.atleast_2d(np.asarray(Y_test, dtype=float))

    def rmspe_at(emu, p):
        m = len(emu.X_)
        preds = np.empty_like(Y_test)
        for i, x0 in enumerate(X_test):
            w = emu._propagate_weight_means(x0)[m - 1][:p]
            basis = emu.bases_[m - 1]
            Yc = w @ basis.K[:, :p].T
            preds[i] = emu.stats_[m - 1].invert(Yc)
        per_loc = np.sqrt(np.mean((preds - Y_test) ** 2, axis=0))
        return float(per_loc.mean())

    for p in p_range:
        rows.append({
            "p": p,
            "rmspe_cokriging": rmspe_at(co, p),
            "rmspe_kriging": rmspe_at(kr, p),
        })
    return rows
