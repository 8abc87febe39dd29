"""CSV and JSON serialization for designs, outputs and run artifacts.

All numeric output uses 17-significant-digit formatting so reruns with the
same seed are byte-identical and values round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataValidationError

FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    return FLOAT_FMT % float(x)


def write_matrix_csv(path, M, header):
    """One matrix row per CSV row under the given column header."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != len(header):
        raise DataValidationError(
            f"{path}: header has {len(header)} names for {M.shape[1]} columns"
        )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in M:
            w.writerow([fmt(v) for v in row])


def read_matrix_csv(path, expect_columns=None):
    """Matrix plus header; malformed cells raise with file, row and column."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"{path}: file does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: file is empty") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as err:
                raise DataValidationError(f"{path}:{lineno}: {err}") from None
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    M = np.asarray(rows, dtype=float)
    if expect_columns is not None and M.shape[1] != expect_columns:
        raise DataValidationError(
            f"{path}: expected {expect_columns} columns, found {M.shape[1]}"
        )
    return M, header


def location_header(N):
    width = max(4, len(str(N)))
    return [f"loc_{j + 1:0{width}d}" for j in range(N)]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"{path}: file does not exist")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise DataValidationError(f"{path}: invalid JSON ({err})") from None


@dataclass
class MultifidelityDataset:
    """Per-level designs and outputs on a shared set of output locations."""

    X: list  # per level, (n_t, d)
    Y: list  # per level, (n_t, N)
    locations: np.ndarray | None
    input_names: list
    bounds: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.X)


def save_dataset(out_dir, dataset: MultifidelityDataset, extra_manifest=None):
    """Designs, outputs and locations as CSV plus a manifest document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"designs": [], "outputs": []}
    N = dataset.Y[0].shape[1]
    loc_hdr = location_header(N)
    for t, (X, Y) in enumerate(zip(dataset.X, dataset.Y), start=1):
        dpath = out / f"design_level{t}.csv"
        opath = out / f"outputs_level{t}.csv"
        write_matrix_csv(dpath, X, dataset.input_names)
        write_matrix_csv(opath, Y, loc_hdr)
        files["designs"].append(dpath.name)
        files["outputs"].append(opath.name)
    if dataset.locations is not None:
        k = dataset.locations.shape[1]
        names = ["s1", "s2"][:k] if k <= 2 else [f"c{i + 1}" for i in range(k)]
        write_matrix_csv(out / "locations.csv", dataset.locations, names)
        files["locations"] = "locations.csv"
    manifest = {
        "levels": dataset.m,
        "sizes": [int(x.shape[0]) for x in dataset.X],
        "locations": int(N),
        "input_names": list(dataset.input_names),
        "files": files,
    }
    if dataset.bounds is not None:
        manifest["bounds"] = [[fmt(lo), fmt(hi)] for lo, hi in dataset.bounds]
    if extra_manifest:
        manifest.update(extra_manifest)
    write_json(out / "manifest.json", manifest)
    return manifest


def load_dataset(design_paths, output_paths, locations_path=None,
                 bounds=None) -> MultifidelityDataset:
    """Read and validate a multifidelity dataset from explicit CSV paths.

    Validates level counts, shared location counts, row alignment and design
    nesting; non-nested designs are rejected naming the offending row.
    """
    if len(design_paths) != len(output_paths) or not design_paths:
        raise DataValidationError(
            f"need one output file per design file, got {len(design_paths)} "
            f"designs and {len(output_paths)} outputs"
        )
    X, Y = [], []
    input_names = None
    N = None
    for t, (dp, op) in enumerate(zip(design_paths, output_paths), start=1):
        Xt, names = read_matrix_csv(dp)
        if input_names is None:
            input_names = names
        elif names != input_names:
            raise DataValidationError(
                f"{dp}: input names {names} differ from level 1's {input_names}"
            )
        Yt, _ = read_matrix_csv(op)
        if N is None:
            N = Yt.shape[1]
        elif Yt.shape[1] != N:
            raise DataValidationError(
                f"{op}: {Yt.shape[1]} locations, expected {N}"
            )
        if Xt.shape[0] != Yt.shape[0]:
            raise DataValidationError(
                f"level {t}: {dp} has {Xt.shape[0]} rows but {op} has "
                f"{Yt.shape[0]}"
            )
        X.append(Xt)
        Y.append(Yt)
    from .design import subset_row_indices
    from .exceptions import InvalidParameterError

    for t in range(1, len(X)):
        try:
            subset_row_indices(X[t - 1], X[t], atol=0.0)
        except InvalidParameterError as err:
            raise DataValidationError(
                f"level {t + 1} design is not nested in level {t}: {err}"
            ) from None
    locations = None
    if locations_path is not None:
        locations, _ = read_matrix_csv(locations_path)
        if locations.shape[0] != N:
            raise DataValidationError(
                f"{locations_path}: {locations.shape[0]} rows for {N} output "
                "locations"
            )
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
    return MultifidelityDataset(X=X, Y=Y, locations=locations,
                                input_names=input_names, bounds=bounds)


def load_dataset_dir(path) -> MultifidelityDataset:
    """Load a dataset directory written by save_dataset via its manifest."""
    root = Path(path)
    manifest = read_json(root / "manifest.json")
    files = manifest["files"]
    bounds = None
    if "bounds" in manifest:
        bounds = [[float(lo), float(hi)] for lo, hi in manifest["bounds"]]
    return load_dataset(
        [root / f for f in files["designs"]],
        [root / f for f in files["outputs"]],
        root / files["locations"] if "locations" in files else None,
        bounds=bounds,
    )


def write_chain_csv(path, chain, n_params, param_names=None):
    """Retained chain states: iteration, parameters, log density, accepted."""
    names = param_names or [f"theta_{i + 1}" for i in range(n_params)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + names + ["log_density", "accepted"])
        for i in range(chain.n_kept):
            w.writerow(
                [i]
                + [fmt(v) for v in chain.samples[i]]
                + [fmt(chain.log_densities[i]), int(chain.accepted[i])]
            )


def write_predictions_csv(path, summary):
    """Per-location predictive summaries: one row per (input, location)."""
    n0, N = summary.mean.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["input_id", "location_id", "mean", "q025", "q975"])
        for i in range(n0):
            for j in range(N):
                w.writerow([i + 1, j + 1, fmt(summary.mean[i, j]),
                            fmt(summary.q025[i, j]), fmt(summary.q975[i, j])])


def write_aggregated_csv(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["input_id", "mean", "q025", "q975"])
        for i in range(summary.agg_mean.shape[0]):
            w.writerow([i + 1, fmt(summary.agg_mean[i]),
                        fmt(summary.agg_q025[i]), fmt(summary.agg_q975[i])])


def read_predictions_csv(path, n_inputs, n_locations):
    """Inverse of write_predictions_csv, back to (n0, N) arrays."""
    M, _ = read_matrix_csv(path, expect_columns=5)
    if M.shape[0] != n_inputs * n_locations:
        raise DataValidationError(
            f"{path}: {M.shape[0]} rows, expected {n_inputs * n_locations}"
        )
    mean = M[:, 2].reshape(n_inputs, n_locations)
    q025 = M[:, 3].reshape(n_inputs, n_locations)
    q975 = M[:, 4].reshape(n_inputs, n_locations)
    return mean, q025, q975
