"""Random-walk Metropolis-Hastings over positive parameters, plus priors.

The sampler proposes Gaussian steps on log-parameters and includes the
change-of-variables correction in the acceptance ratio, so it targets the
supplied density over the positive orthant. Optional Robbins-Monro step
adaptation runs during burn-in only; the retained chain is a plain MH chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import InvalidParameterError

TARGET_ACCEPTANCE = 0.3


@dataclass(frozen=True)
class ChainSettings:
    iterations: int = 3000
    burn_in: int = 300
    thin: int = 1
    proposal_scale: float = 0.3  # log-scale step size, scalar or per-parameter
    seed: int = 0
    adapt: bool = True

    def __post_init__(self):
        if self.burn_in >= self.iterations:
            raise InvalidParameterError(
                f"burn_in {self.burn_in} must be < iterations {self.iterations}"
            )
        if self.thin < 1:
            raise InvalidParameterError(f"thin must be >= 1, got {self.thin}")
        if np.any(np.asarray(self.proposal_scale) < 0):
            raise InvalidParameterError("proposal scales must be nonnegative")

    def with_seed(self, seed) -> "ChainSettings":
        return replace(self, seed=seed)


@dataclass
class Chain:
    samples: np.ndarray  # (kept, n_params)
    log_densities: np.ndarray  # (kept,)
    acceptance_rate: float
    map_index: int
    proposal_scale: np.ndarray = field(default=None, repr=False)
    accepted: np.ndarray = field(default=None, repr=False)  # per retained sample

    @property
    def n_kept(self) -> int:
        return self.samples.shape[0]


def half_cauchy_logpdf(theta, scale):
    """log density of the half-Cauchy distribution; -inf for theta <= 0."""
    if scale <= 0:
        raise InvalidParameterError(f"scale must be positive, got {scale}")
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(
            theta > 0,
            np.log(2.0 / (np.pi * scale)) - np.log1p((theta / scale) ** 2),
            -np.inf,
        )
    return float(out) if out.ndim == 0 else out


def half_normal_logpdf(theta, scale):
    """log density of the half-normal distribution; -inf for theta <= 0."""
    if scale <= 0:
        raise InvalidParameterError(f"scale must be positive, got {scale}")
    theta = np.asarray(theta, dtype=float)
    out = np.where(
        theta > 0,
        0.5 * np.log(2.0 / np.pi) - np.log(scale) - 0.5 * (theta / scale) ** 2,
        -np.inf,
    )
    return float(out) if out.ndim == 0 else out


def random_walk_mh(log_target, init, settings: ChainSettings) -> Chain:
    """MH chain for a log density over strictly positive parameters.

    ``log_target`` receives the parameter vector on the original scale.
    Coordinates are updated one at a time in a fixed scan (each with its own
    Gaussian log-scale step), which keeps mixing healthy when the posterior
    is far tighter in some directions than others. The retained samples
    start after burn-in and keep every ``thin``-th state.
    """
    init = np.atleast_1d(np.asarray(init, dtype=float))
    if np.any(init <= 0):
        raise InvalidParameterError(f"init must be strictly positive, got {init}")
    lp0 = float(log_target(init))
    if not np.isfinite(lp0):
        raise InvalidParameterError(f"log target is not finite at init {init}")

    rng = np.random.default_rng(settings.seed)
    n_par = init.shape[0]
    scale = np.broadcast_to(
        np.asarray(settings.proposal_scale, dtype=float), (n_par,)
    ).astype(float).copy()

    phi = np.log(init)  # chain state on the log scale
    # target on the log scale includes the Jacobian sum(phi)
    lp_phi = lp0 + float(phi.sum())

    n_keep = (settings.iterations - settings.burn_in) // settings.thin
    samples = np.empty((n_keep, n_par))
    log_dens = np.empty(n_keep)
    acc_flags = np.zeros(n_keep, dtype=bool)
    kept = 0
    accepted_total = 0
    proposals_total = 0
    adapt_window = max(min(50, settings.burn_in // 10), 10)
    window_accepts = np.zeros(n_par)
    window_counts = np.zeros(n_par)

    for it in range(settings.iterations):
        moved = False
        for i in range(n_par):
            step = scale[i] * rng.standard_normal()
            prop = phi.copy()
            prop[i] += step
            lp_raw = float(log_target(np.exp(prop)))
            lp_prop = lp_raw + float(prop.sum()) if np.isfinite(lp_raw) else -np.inf
            proposals_total += 1
            window_counts[i] += 1
            if np.log(rng.uniform()) < lp_prop - lp_phi:
                phi = prop
                lp_phi = lp_prop
                accepted_total += 1
                window_accepts[i] += 1
                moved = True
        if settings.adapt and it < settings.burn_in and (it + 1) % adapt_window == 0:
            rates = window_accepts / np.maximum(window_counts, 1)
            bump = np.exp((rates - TARGET_ACCEPTANCE)
                          / np.sqrt(1.0 + it / adapt_window))
            scale = np.where(scale > 0, np.clip(scale * bump, 1e-6, 20.0), 0.0)
            window_accepts[:] = 0
            window_counts[:] = 0
        if it >= settings.burn_in and (it - settings.burn_in) % settings.thin == settings.thin - 1:
            samples[kept] = np.exp(phi)
            log_dens[kept] = lp_phi - float(phi.sum())  # density on the theta scale
            acc_flags[kept] = moved
            kept += 1

    samples = samples[:kept]
    log_dens = log_dens[:kept]
    if accepted_total == 0:
        import warnings

        warnings.warn("MH chain rejected every proposal", RuntimeWarning)
    return Chain(
        samples=samples,
        log_densities=log_dens,
        acceptance_rate=accepted_total / max(proposals_total, 1),
        map_index=int(np.argmax(log_dens)) if kept else -1,
        proposal_scale=scale,
        accepted=acc_flags[:kept],
    )


def map_estimate(chain: Chain):
    """Retained sample with the highest recorded log density."""
    if chain.n_kept == 0:
        raise InvalidParameterError("chain has no retained samples")
    return chain.samples[chain.map_index].copy()


def effective_sample_size(x):
    """Crude initial-positive-sequence ESS estimate for one parameter."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean()
    denom = xc.var()
    if n < 10 or not denom > 0:
        return float(n)
    acf = np.correlate(xc, xc, mode="full")[n - 1:] / (np.arange(n, 0, -1) * denom)
    tau = 1.0
    for k in range(1, min(n // 2, 1000)):
        if acf[k] <= 0:
            break
        tau += 2.0 * acf[k]
    return float(min(max(n / tau, 1.0), n))
