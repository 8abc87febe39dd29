"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .design import subset_row_indices
from .exceptions import InvalidParameterError


def check_multifidelity(X, Y):
    """Validate per-level designs and outputs; returns cleaned copies.

    Designs must be nested from the first level down, outputs must share a
    common location count, and each level's rows must align.
    """
    if not isinstance(X, (list, tuple)) or not isinstance(Y, (list, tuple)):
        raise InvalidParameterError(
            "X and Y must be lists of per-level arrays (lowest fidelity first)"
        )
    if len(X) == 0 or len(X) != len(Y):
        raise InvalidParameterError(
            f"X and Y must be nonempty and equal length, got {len(X)} and {len(Y)}"
        )
    Xc, Yc = [], []
    d = None
    N = None
    for t, (xt, yt) in enumerate(zip(X, Y)):
        xt = np.atleast_2d(np.asarray(xt, dtype=float))
        yt = np.atleast_2d(np.asarray(yt, dtype=float))
        if not np.all(np.isfinite(xt)) or not np.all(np.isfinite(yt)):
            raise InvalidParameterError(f"level {t + 1} contains non-finite values")
        if d is None:
            d = xt.shape[1]
        elif xt.shape[1] != d:
            raise InvalidParameterError(
                f"level {t + 1} design has {xt.shape[1]} columns, expected {d}"
            )
        if N is None:
            N = yt.shape[1]
        elif yt.shape[1] != N:
            raise InvalidParameterError(
                f"level {t + 1} outputs have {yt.shape[1]} locations, expected {N}"
            )
        if xt.shape[0] != yt.shape[0]:
            raise InvalidParameterError(
                f"level {t + 1}: design has {xt.shape[0]} rows but outputs "
                f"have {yt.shape[0]}"
            )
        Xc.append(xt)
        Yc.append(yt)
    for t in range(1, len(Xc)):
        try:
            subset_row_indices(Xc[t - 1], Xc[t], atol=1e-12)
        except InvalidParameterError as err:
            raise InvalidParameterError(f"level {t + 1} vs {t}: {err}") from err
    return Xc, Yc


def resolve_bounds(bounds, X1):
    """Explicit box bounds, or the data envelope of the first-level design."""
    if bounds is not None:
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        if bounds.shape != (X1.shape[1], 2):
            raise InvalidParameterError(
                f"bounds must be ({X1.shape[1]}, 2), got {bounds.shape}"
            )
        return bounds
    return np.column_stack([X1.min(axis=0), X1.max(axis=0)])


def as_per_level(value, m, name):
    """Broadcast a scalar hyperparameter to one entry per fidelity level."""
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(m, float(arr[0]))
    if arr.size != m:
        raise InvalidParameterError(
            f"{name} must be a scalar or have {m} entries, got {arr.size}"
        )
    return arr.astype(float)
