"""Analytic contaminant-spill testbed with two fidelity levels.

A pollutant mass spills twice into a one-dimensional channel; the
concentration field over space and time has a closed form. The high-fidelity
simulator is the exact field (times a fixed normalization); the low-fidelity
one replaces each exponential by the one-term Taylor expansion of its
reciprocal, exp(-u) ~ 1/(1+u), which keeps the surface positive and decaying
(expanding exp itself produces unbounded negative values on this domain).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import DesignSet, latin_hypercube, nested_subsample
from .exceptions import InvalidParameterError

M_RANGE = (7.0, 13.0)
D_RANGE = (0.02, 0.12)
L_RANGE = (0.01, 3.0)
T_RANGE = (30.0, 30.295)
T_FIXED = 30.0
INPUT_BOUNDS = (M_RANGE, D_RANGE, L_RANGE)
INPUT_NAMES = ("M", "D", "L")

S1_COUNT, S1_RANGE = 20, (0.5, 5.0)
S2_COUNT, S2_RANGE = 50, (35.0, 60.0)

OUTPUT_SCALE = np.sqrt(4.0 * np.pi)


@dataclass(frozen=True)
class EnvInput:
    """One simulator input: spill mass, diffusion rate, second-spill place/time."""

    M: float
    D: float
    L: float
    T: float = T_FIXED

    def __post_init__(self):
        for name, value, (lo, hi) in (
            ("M", self.M, M_RANGE),
            ("D", self.D, D_RANGE),
            ("L", self.L, L_RANGE),
            ("T", self.T, T_RANGE),
        ):
            if not lo <= value <= hi:
                raise InvalidParameterError(
                    f"{name} = {value} outside [{lo}, {hi}]"
                )

    def as_array(self):
        return np.array([self.M, self.D, self.L])


@dataclass(frozen=True)
class SpaceTimeGrid:
    """The 20 x 50 evaluation grid, space-major lexicographic order."""

    s1: np.ndarray = field(default=None)
    s2: np.ndarray = field(default=None)
    locations: np.ndarray = field(default=None)

    def __post_init__(self):
        s1 = np.linspace(*S1_RANGE, S1_COUNT)
        s2 = np.linspace(*S2_RANGE, S2_COUNT)
        A, B = np.meshgrid(s1, s2, indexing="ij")
        object.__setattr__(self, "s1", s1)
        object.__setattr__(self, "s2", s2)
        object.__setattr__(self, "locations",
                           np.column_stack([A.ravel(), B.ravel()]))

    @property
    def n(self) -> int:
        return self.locations.shape[0]


def concentration(input_, s):
    """Pollutant concentration at space-time point(s) s = (s1, s2).

    The second spill contributes only strictly after its release time; at
    s2 = T exactly it contributes nothing.
    """
    x = _as_input(input_)
    s1, s2 = _split_coords(s)
    if np.any(s2 <= 0):
        raise InvalidParameterError("s2 (time) must be positive")
    M, D, L, T = x
    first = M / np.sqrt(4 * np.pi * D * s2) * np.exp(-(s1**2) / (4 * D * s2))
    dt = s2 - T
    with np.errstate(divide="ignore", invalid="ignore"):
        second = np.where(
            dt > 0,
            M / np.sqrt(4 * np.pi * D * np.where(dt > 0, dt, 1.0))
            * np.exp(-((s1 - L) ** 2) / (4 * D * np.where(dt > 0, dt, 1.0))),
            0.0,
        )
    return first + second


def hi_fidelity(input_, s):
    """High-fidelity output: the normalized concentration field."""
    return OUTPUT_SCALE * concentration(input_, s)


def lo_fidelity(input_, s):
    """Low-fidelity output: each exponential replaced by 1 / (1 + u).

    u is the (nonnegative) magnitude of the exponent, so this is the
    one-term Taylor expansion of exp(u) in the denominator of
    exp(-u) = 1 / exp(u). Indicator gating matches the exact field.
    """
    x = _as_input(input_)
    s1, s2 = _split_coords(s)
    if np.any(s2 <= 0):
        raise InvalidParameterError("s2 (time) must be positive")
    M, D, L, T = x
    u1 = s1**2 / (4 * D * s2)
    first = M / np.sqrt(4 * np.pi * D * s2) / (1.0 + u1)
    dt = s2 - T
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(dt > 0, dt, 1.0)
        u2 = (s1 - L) ** 2 / (4 * D * safe)
        second = np.where(
            dt > 0, M / np.sqrt(4 * np.pi * D * safe) / (1.0 + u2), 0.0
        )
    return OUTPUT_SCALE * (first + second)


def _as_input(input_):
    if isinstance(input_, EnvInput):
        return (input_.M, input_.D, input_.L, input_.T)
    arr = np.atleast_1d(np.asarray(input_, dtype=float))
    if arr.shape[0] == 3:
        return (arr[0], arr[1], arr[2], T_FIXED)
    if arr.shape[0] == 4:
        return (arr[0], arr[1], arr[2], arr[3])
    raise InvalidParameterError(
        f"input must be (M, D, L) or (M, D, L, T), got shape {arr.shape}"
    )


def _split_coords(s):
    s = np.asarray(s, dtype=float)
    if s.ndim == 1 and s.shape[0] == 2:
        return s[0], s[1]
    s = np.atleast_2d(s)
    return s[:, 0], s[:, 1]


def evaluate_grid(fn, inputs, grid: SpaceTimeGrid):
    """Stack of fn over the grid, one row per input: (n_inputs, N)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    return np.stack([fn(x, grid.locations) for x in inputs])


@dataclass
class TestbedExperiment:
    """Designs, outputs, grid and test set for one benchmark replicate."""

    designs: list  # [DesignSet level 1, DesignSet level 2]
    outputs: list  # [Y1 (n1 x N), Y2 (n2 x N)]
    grid: SpaceTimeGrid
    test_inputs: np.ndarray  # (n_test, 3)
    test_truth: np.ndarray  # (n_test, N) high-fidelity outputs
    seed: int

    @property
    def X(self):
        return [d.points for d in self.designs]

    @property
    def Y(self):
        return self.outputs


def generate_experiment(seed, n_lo=60, n_hi=30, n_test=30) -> TestbedExperiment:
    """Nested designs, output matrices and uniform test inputs for one seed."""
    grid = SpaceTimeGrid()
    lo_design = latin_hypercube(n_lo, INPUT_BOUNDS, seed=seed, level=1)
    hi_design = nested_subsample(lo_design, n_hi, seed=seed + 1)
    rng = np.random.default_rng([seed, 17])
    bounds = np.asarray(INPUT_BOUNDS)
    test_inputs = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n_test, 3))
    Y1 = evaluate_grid(lo_fidelity, lo_design.points, grid)
    Y2 = evaluate_grid(hi_fidelity, hi_design.points, grid)
    truth = evaluate_grid(hi_fidelity, test_inputs, grid)
    return TestbedExperiment(
        designs=[lo_design, hi_design],
        outputs=[Y1, Y2],
        grid=grid,
        test_inputs=test_inputs,
        test_truth=truth,
        seed=int(seed),
    )
