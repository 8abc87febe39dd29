"""Prediction metrics: RMSPE, interval coverage, and interval length.

Marginal metrics treat every (test input, location) pair; RMSPE is computed
per location over inputs, then averaged over locations. Aggregated metrics
score the spatial average of the highest-fidelity outputs, whose predictive
summaries must come from joint samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidParameterError


@dataclass
class MetricsReport:
    rmspe_marginal: float
    cvg95_marginal: float  # percent
    alci95_marginal: float
    rmspe_agg: float
    cvg95_agg: float  # percent
    alci95_agg: float
    per_location: np.ndarray  # (N, 3): rmspe, coverage %, mean length

    def as_dict(self):
        return {
            "marginal": {
                "rmspe": self.rmspe_marginal,
                "cvg95": self.cvg95_marginal,
                "alci95": self.alci95_marginal,
            },
            "aggregated": {
                "rmspe": self.rmspe_agg,
                "cvg95": self.cvg95_agg,
                "alci95": self.alci95_agg,
            },
        }


def compute_metrics(truth, mean, q025, q975, agg_truth=None, agg_mean=None,
                    agg_q025=None, agg_q975=None) -> MetricsReport:
    """Score per-location and aggregated predictive summaries against truth.

    When the aggregated pieces are omitted they are taken from the marginal
    arrays' spatial averages (valid for the truth and the mean, not for
    quantiles, which callers should supply from joint samples).
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    q025 = np.atleast_2d(np.asarray(q025, dtype=float))
    q975 = np.atleast_2d(np.asarray(q975, dtype=float))
    if not truth.shape == mean.shape == q025.shape == q975.shape:
        raise InvalidParameterError(
            f"shape mismatch: truth {truth.shape}, mean {mean.shape}, "
            f"q025 {q025.shape}, q975 {q975.shape}"
        )
    per_loc_rmspe = np.sqrt(np.mean((mean - truth) ** 2, axis=0))
    covered = (truth >= q025) & (truth <= q975)
    per_loc_cvg = 100.0 * covered.mean(axis=0)
    per_loc_len = (q975 - q025).mean(axis=0)

    if agg_truth is None:
        agg_truth = truth.mean(axis=1)
    if agg_mean is None:
        agg_mean = mean.mean(axis=1)
    agg_truth = np.asarray(agg_truth, dtype=float)
    agg_mean = np.asarray(agg_mean, dtype=float)
    if agg_q025 is None or agg_q975 is None:
        raise InvalidParameterError(
            "aggregated quantiles are required (compute them from joint samples)"
        )
    agg_q025 = np.asarray(agg_q025, dtype=float)
    agg_q975 = np.asarray(agg_q975, dtype=float)
    if not agg_truth.shape == agg_mean.shape == agg_q025.shape == agg_q975.shape:
        raise InvalidParameterError("aggregated arrays must share one shape")

    return MetricsReport(
        rmspe_marginal=float(per_loc_rmspe.mean()),
        cvg95_marginal=float(100.0 * covered.mean()),
        alci95_marginal=float((q975 - q025).mean()),
        rmspe_agg=float(np.sqrt(np.mean((agg_mean - agg_truth) ** 2))),
        cvg95_agg=float(
            100.0 * np.mean((agg_truth >= agg_q025) & (agg_truth <= agg_q975))
        ),
        alci95_agg=float(np.mean(agg_q975 - agg_q025)),
        per_location=np.column_stack([per_loc_rmspe, per_loc_cvg, per_loc_len]),
    )
