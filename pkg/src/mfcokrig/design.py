"""Experimental design and output-location preprocessing.

Latin hypercube sampling, greedy nested subsampling, maximin ordering of
output locations and nearest-preceding-neighbor sets. All functions are pure
and deterministic given their seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidParameterError


@dataclass(frozen=True)
class DesignSet:
    """A set of simulator inputs together with its box bounds."""

    points: np.ndarray  # (n, d)
    bounds: np.ndarray  # (d, 2) lower/upper
    level: int = 0

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "bounds", bounds)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SpatialOrdering:
    """Maximin permutation of output locations.

    ``permutation[k]`` is the original index of the location placed at
    ordered position ``k``; ``locations`` holds the (possibly rescaled)
    coordinates in the *ordered* arrangement.
    """

    permutation: np.ndarray  # (N,) original indices in visit order
    locations: np.ndarray  # (N, k) ordered coordinates

    @property
    def n(self) -> int:
        return self.permutation.shape[0]

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.n)
        return inv


@dataclass(frozen=True)
class NeighborSets:
    """Per ordered location j, the indices of its conditioning set C_j.

    Indices refer to positions in the ordering and satisfy max(C_j) < j;
    |C_j| = min(p, j). Positions are 0-based.
    """

    sets: tuple  # tuple of int arrays
    max_size: int

    @property
    def n(self) -> int:
        return len(self.sets)


def _check_bounds(bounds):
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.shape[1] != 2:
        raise InvalidParameterError("bounds must be (d, 2) pairs of (lower, upper)")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        bad = int(np.where(bounds[:, 0] >= bounds[:, 1])[0][0])
        raise InvalidParameterError(
            f"bounds[{bad}] has lower >= upper: {bounds[bad].tolist()}"
        )
    return bounds


def latin_hypercube(n, bounds, seed, level=0) -> DesignSet:
    """Latin hypercube sample: one point per stratum in every dimension."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    bounds = _check_bounds(bounds)
    d = bounds.shape[0]
    rng = np.random.default_rng(seed)
    u = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.uniform(size=(n, d))) / n
    points = bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])
    return DesignSet(points=points, bounds=bounds, level=level)


def _stratum_counts(points, bounds, n_bins):
    """Occupancy of n_bins equal-width strata per dimension."""
    lo, hi = bounds[:, 0], bounds[:, 1]
    u = (points - lo) / (hi - lo)
    idx = np.clip((u * n_bins).astype(int), 0, n_bins - 1)
    counts = np.zeros((points.shape[1], n_bins), dtype=int)
    for i in range(points.shape[1]):
        counts[i] = np.bincount(idx[:, i], minlength=n_bins)
    return counts, idx


def nested_subsample(parent: DesignSet, n_child, seed) -> DesignSet:
    """Subset of a parent design chosen to preserve stratification.

    Greedily removes the parent point whose removal least degrades the
    per-dimension occupancy of the n_child target strata; the worst
    per-dimension excess is minimized first, then the total excess. The seed
    only breaks ties (reproducible shuffle of the scan order).
    """
    if n_child > parent.n:
        raise InvalidParameterError(
            f"n_child {n_child} exceeds parent size {parent.n}"
        )
    if n_child == parent.n:
        return DesignSet(points=parent.points.copy(), bounds=parent.bounds,
                         level=parent.level + 1)
    rng = np.random.default_rng(seed)
    counts, idx = _stratum_counts(parent.points, parent.bounds, n_child)
    keep = list(range(parent.n))
    while len(keep) > n_child:
        scan = rng.permutation(len(keep))
        best = None
        for ki in scan:
            row = idx[keep[ki]]
            trial = counts.copy()
            trial[np.arange(parent.dim), row] -= 1
            excess = np.maximum(trial - 1, 0).sum(axis=1)
            score = (int(excess.max()), int(excess.sum()))
            if best is None or score < best[0]:
                best = (score, int(ki), trial)
        _, ki, counts = best
        keep.pop(ki)
    keep = sorted(keep)
    return DesignSet(points=parent.points[keep], bounds=parent.bounds,
                     level=parent.level + 1)


def subset_row_indices(parent_points, child_points, atol=0.0):
    """Index of each child row inside the parent design.

    Raises InvalidParameterError naming the first offending row when the
    child is not nested in the parent.
    """
    parent = np.atleast_2d(np.asarray(parent_points, dtype=float))
    child = np.atleast_2d(np.asarray(child_points, dtype=float))
    out = np.empty(child.shape[0], dtype=int)
    for i, row in enumerate(child):
        if atol > 0:
            hits = np.where(np.all(np.abs(parent - row) <= atol, axis=1))[0]
        else:
            hits = np.where(np.all(parent == row, axis=1))[0]
        if hits.size == 0:
            raise InvalidParameterError(
                f"design is not nested: child row {i} ({row.tolist()}) "
                "does not appear in the parent design"
            )
        out[i] = hits[0]
    return out


def rescale_unit(locations):
    """Rescale each coordinate axis to [0, 1] (degenerate axes untouched)."""
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    lo = locations.min(axis=0)
    span = locations.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return (locations - lo) / span


def maximin_order(locations) -> SpatialOrdering:
    """Maximum-minimum-distance ordering of output locations.

    Starts at the location nearest the centroid; each subsequent pick
    maximizes its minimum distance to the already-ordered set. Ties break
    toward the lowest original index.
    """
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    n = locations.shape[0]
    centroid = locations.mean(axis=0)
    d0 = np.linalg.norm(locations - centroid, axis=1)
    first = int(np.argmin(d0))
    perm = np.empty(n, dtype=int)
    perm[0] = first
    min_dist = np.linalg.norm(locations - locations[first], axis=1)
    min_dist[first] = -np.inf
    for k in range(1, n):
        nxt = int(np.argmax(min_dist))
        perm[k] = nxt
        d = np.linalg.norm(locations - locations[nxt], axis=1)
        np.minimum(min_dist, d, out=min_dist)
        min_dist[nxt] = -np.inf
    return SpatialOrdering(permutation=perm, locations=locations[perm])


def build_neighbor_sets(ordering: SpatialOrdering, p) -> NeighborSets:
    """Conditioning sets: the p nearest preceding locations in the ordering.

    p = 0 yields all-empty sets (the conditional-independence baseline).
    """
    if p < 0:
        raise InvalidParameterError(f"p must be >= 0, got {p}")
    locs = ordering.locations
    n = locs.shape[0]
    sets = []
    for j in range(n):
        k = min(p, j)
        if k == 0:
            sets.append(np.empty(0, dtype=int))
            continue
        d = np.linalg.norm(locs[:j] - locs[j], axis=1)
        nearest = np.argsort(d, kind="stable")[:k]
        sets.append(np.sort(nearest))
    return NeighborSets(sets=tuple(sets), max_size=int(p))
