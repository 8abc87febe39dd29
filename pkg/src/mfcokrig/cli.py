"""Command-line entry point: reproducible generate / fit / predict / evaluate.

Every command is deterministic given its configuration and seeds; numeric
output is written at full round-trip precision so reruns are byte-identical.
Exit codes: 0 success, 2 configuration or data-validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datasets as ds
from .exceptions import ConditioningError, ConfigError, DataValidationError, EmulatorError
from .mcmc import ChainSettings
from .metrics import compute_metrics
from .nonsep import NonsepEmulator, sweep_components
from .sep import SepEmulator
from .testbed import INPUT_BOUNDS, INPUT_NAMES, generate_experiment

DESK_MCMC = {"iterations": 3000, "burn_in": 600, "thin": 1}
PAPER_MCMC_SEP = {"iterations": 30000, "burn_in": 3000, "thin": 10}
PAPER_MCMC_NONSEP = {"iterations": 60000, "burn_in": 6000, "thin": 10}

MODELS = ("sep", "nonsep", "pp-baseline")


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def load_config(path):
    cfg = ds.read_json(path)
    _require(isinstance(cfg, dict), f"{path}: config must be a JSON object")
    _require("model" in cfg, f"{path}: missing required key 'model'")
    _require(cfg["model"] in MODELS,
             f"{path}: model must be one of {MODELS}, got {cfg['model']!r}")
    _require("dataset" in cfg, f"{path}: missing required key 'dataset'")
    dset = cfg["dataset"]
    _require(isinstance(dset, dict) and ("testbed" in dset) != ("files" in dset),
             f"{path}: dataset must contain exactly one of 'testbed' or 'files'")
    if "files" in dset:
        files = dset["files"]
        for key in ("designs", "outputs"):
            _require(key in files and isinstance(files[key], list) and files[key],
                     f"{path}: dataset.files.{key} must be a nonempty list")
        _require(len(files["designs"]) == len(files["outputs"]),
                 f"{path}: dataset.files needs one outputs file per designs file")
    return cfg


def chain_settings_from(cfg, model, preset=None, seed_override=None):
    mcmc = dict(cfg.get("mcmc", {}))
    if preset == "desk":
        mcmc.update(DESK_MCMC)
    elif preset == "paper":
        mcmc.update(PAPER_MCMC_SEP if model in ("sep", "pp-baseline")
                    else PAPER_MCMC_NONSEP)
    elif preset is not None:
        raise ConfigError(f"unknown preset {preset!r}; use 'desk' or 'paper'")
    defaults = dict(DESK_MCMC)
    defaults.update(mcmc)
    try:
        return ChainSettings(
            iterations=int(defaults.get("iterations")),
            burn_in=int(defaults.get("burn_in")),
            thin=int(defaults.get("thin", 1)),
            proposal_scale=defaults.get("proposal_scale", 0.3),
            seed=defaults.get("seed", 0) if seed_override is None else seed_override,
            adapt=bool(defaults.get("adapt", True)),
        )
    except (TypeError, ValueError, EmulatorError) as err:
        raise ConfigError(f"mcmc settings invalid: {err}") from None


def resolve_dataset(cfg, out_dir, preset=None):
    """Materialize the configured dataset; returns (dataset, testbed_extras)."""
    dset = cfg["dataset"]
    if "testbed" in dset:
        tb = dset["testbed"]
        _require(isinstance(tb, dict) and "seed" in tb,
                 "dataset.testbed must be an object with a 'seed'")
        n_lo, n_hi = (30, 15) if preset == "desk" else (60, 30)
        n_lo = int(tb.get("n_lo", n_lo))
        n_hi = int(tb.get("n_hi", n_hi))
        exp = generate_experiment(int(tb["seed"]), n_lo=n_lo, n_hi=n_hi,
                                  n_test=int(tb.get("n_test", 30)))
        data = ds.MultifidelityDataset(
            X=exp.X, Y=exp.Y, locations=exp.grid.locations,
            input_names=list(INPUT_NAMES), bounds=np.asarray(INPUT_BOUNDS),
        )
        dataset_dir = Path(out_dir) / "dataset"
        ds.save_dataset(dataset_dir, data, extra_manifest={
            "generator": "testbed", "seed": int(tb["seed"]),
            "test_inputs": "test_inputs.csv", "test_truth": "test_truth.csv",
        })
        ds.write_matrix_csv(dataset_dir / "test_inputs.csv", exp.test_inputs,
                            list(INPUT_NAMES))
        ds.write_matrix_csv(dataset_dir / "test_truth.csv", exp.test_truth,
                            ds.location_header(exp.test_truth.shape[1]))
        refs = {
            "designs": [str(dataset_dir / f"design_level{t}.csv") for t in (1, 2)],
            "outputs": [str(dataset_dir / f"outputs_level{t}.csv") for t in (1, 2)],
            "locations": str(dataset_dir / "locations.csv"),
        }
        return data, refs, exp
    files = dset["files"]
    data = ds.load_dataset(files["designs"], files["outputs"],
                           files.get("locations"), bounds=files.get("bounds"))
    refs = {
        "designs": [str(p) for p in files["designs"]],
        "outputs": [str(p) for p in files["outputs"]],
    }
    if files.get("locations"):
        refs["locations"] = str(files["locations"])
    return data, refs, None


def build_emulator(cfg, model, settings, seed, threads):
    if model in ("sep", "pp-baseline"):
        params = dict(cfg.get("sep", {}))
        if model == "pp-baseline":
            params["p"] = 0
        known = {"p", "tau2", "eta", "lam", "gamma", "basis",
                 "theta_prior_scales", "jitter", "smoothness",
                 "location_scaling"}
        bad = set(params) - known
        _require(not bad, f"sep config has unknown keys {sorted(bad)}")
        return SepEmulator(mcmc=settings, seed=seed, n_threads=threads, **params)
    params = dict(cfg.get("nonsep", {}))
    known = {"n_components", "predictor_mode", "predictor_threshold",
             "prior_scale_factor", "per_location_scale", "jitter",
             "smoothness"}
    bad = set(params) - known
    _require(not bad, f"nonsep config has unknown keys {sorted(bad)}")
    return NonsepEmulator(mcmc=settings, seed=seed, n_threads=threads, **params)


def _sep_factors_doc(emu):
    levels = []
    for cache in emu.caches_:
        f = cache.factors
        doc = {
            "d_hat": [ds.fmt(v) for v in f.d_hat],
            "dof": ds.fmt(f.dof),
            "a_hat": {},
            "V_hat": {},
        }
        for j, (a, V) in enumerate(zip(f.a_hat, f.V_hat)):
            if a.size:
                doc["a_hat"][str(j)] = [ds.fmt(v) for v in a]
                doc["V_hat"][str(j)] = [[ds.fmt(v) for v in row] for row in V]
        levels.append(doc)
    return levels


def cmd_gen_testbed(args):
    seed = args.seed if args.seed is not None else 0
    n_lo, n_hi = (30, 15) if args.preset == "desk" else (60, 30)
    exp = generate_experiment(seed, n_lo=n_lo, n_hi=n_hi)
    out = Path(args.out)
    data = ds.MultifidelityDataset(
        X=exp.X, Y=exp.Y, locations=exp.grid.locations,
        input_names=list(INPUT_NAMES), bounds=np.asarray(INPUT_BOUNDS),
    )
    ds.save_dataset(out, data, extra_manifest={
        "generator": "testbed",
        "seed": int(seed),
        "preset": args.preset or "paper",
        "test_inputs": "test_inputs.csv",
        "test_truth": "test_truth.csv",
    })
    ds.write_matrix_csv(out / "test_inputs.csv", exp.test_inputs, list(INPUT_NAMES))
    ds.write_matrix_csv(out / "test_truth.csv", exp.test_truth,
                        ds.location_header(exp.test_truth.shape[1]))
    print(f"wrote testbed dataset (seed {seed}, {n_lo}/{n_hi} train, "
          f"{exp.test_inputs.shape[0]} test) to {out}")
    return 0


def cmd_fit(args):
    cfg = load_config(args.config)
    model = cfg["model"]
    out = Path(args.out) if args.out else Path(cfg.get("out_dir", "run"))
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    settings = chain_settings_from(cfg, model, preset=args.preset)
    data, refs, _ = resolve_dataset(cfg, out, preset=args.preset)
    emu = build_emulator(cfg, model, settings, seed, args.threads)
    if model in ("sep", "pp-baseline"):
        emu.fit(data.X, data.Y, locations=data.locations, bounds=data.bounds)
        chain_files = []
        for t, chain in enumerate(emu.chains_, start=1):
            name = f"chain_level{t}.csv"
            ds.write_chain_csv(out / name, chain, data.X[0].shape[1],
                               [f"theta_{n}" for n in data.input_names])
            chain_files.append(name)
        factors = _sep_factors_doc(emu)
    else:
        emu.fit(data.X, data.Y, bounds=data.bounds)
        chain_files = []
        for spec, chain in zip(emu.specs_, emu.chains_):
            name = f"chain_level{spec.level + 1}_pc{spec.component + 1}.csv"
            ds.write_chain_csv(out / name, chain, data.X[0].shape[1],
                               [f"theta_{n}" for n in data.input_names])
            chain_files.append(name)
        factors = None
        for t, basis in enumerate(emu.bases_, start=1):
            ds.write_matrix_csv(
                out / f"basis_level{t}.csv", basis.K,
                [f"pc_{e + 1}" for e in range(basis.n_components)])
            ds.write_matrix_csv(
                out / f"weights_level{t}.csv", basis.W,
                [f"pc_{e + 1}" for e in range(basis.n_components)])

    effective = {
        "model": model,
        "seed": seed,
        "threads": args.threads,
        "preset": args.preset,
        "mcmc": {
            "iterations": settings.iterations,
            "burn_in": settings.burn_in,
            "thin": settings.thin,
            "proposal_scale": settings.proposal_scale,
            "adapt": settings.adapt,
        },
        "estimator": {
            k: (v if not isinstance(v, np.ndarray) else v.tolist())
            for k, v in emu.get_params().items()
            if k not in ("mcmc",)
        },
        "dataset": refs,
        "prediction": cfg.get("prediction", {}),
    }
    ds.write_json(out / "effective_config.json", effective)
    artifact = {
        "model": model,
        "config": effective,
        "theta_map": [t.tolist() for t in emu.theta_map_],
        "metadata": emu.metadata_,
        "chains": chain_files,
        "bounds": data.bounds.tolist() if data.bounds is not None else None,
    }
    if factors is not None:
        artifact["factors"] = factors
    if model == "nonsep":
        artifact["specs"] = [
            {"level": s.level, "component": s.component,
             "predictors": s.predictors.tolist(), "prior": s.prior}
            for s in emu.specs_
        ]
    ds.write_json(out / "fit.json", artifact)
    acc = emu.metadata_["acceptance_rates"]
    print(f"fit {model} on {data.m} levels; acceptance rates "
          f"{[round(a, 3) for a in acc]}; artifact at {out / 'fit.json'}")
    return 0


def _load_fitted(artifact_path):
    art = ds.read_json(artifact_path)
    for key in ("model", "config", "theta_map"):
        if key not in art:
            raise ConfigError(
                f"{artifact_path}: not a fit artifact (missing {key!r})"
            )
    model = art["model"]
    cfg = art["config"]
    refs = cfg["dataset"]
    data = ds.load_dataset(refs["designs"], refs["outputs"],
                           refs.get("locations"), bounds=art.get("bounds"))
    est = dict(cfg["estimator"])
    est.pop("seed", None)
    est.pop("n_threads", None)
    if model in ("sep", "pp-baseline"):
        emu = SepEmulator(seed=cfg["seed"], **est)
        emu.fit_fixed(data.X, data.Y, art["theta_map"],
                      locations=data.locations, bounds=data.bounds)
    elif model == "nonsep":
        emu = NonsepEmulator(seed=cfg["seed"], **est)
        emu.fit_fixed(data.X, data.Y, art["theta_map"], bounds=data.bounds)
        stored = art.get("specs")
        if stored is not None:
            got = [{"level": s.level, "component": s.component,
                    "predictors": s.predictors.tolist(), "prior": s.prior}
                   for s in emu.specs_]
            if got != stored:
                raise ConfigError(
                    f"{artifact_path}: stored weight specs do not match the "
                    "dataset (artifact/model mismatch)"
                )
    else:
        raise ConfigError(f"{artifact_path}: unknown model {model!r}")
    return emu, art, data


def cmd_predict(args):
    emu, art, data = _load_fitted(args.artifact)
    X0, _ = ds.read_matrix_csv(args.inputs,
                               expect_columns=data.X[0].shape[1])
    pred_cfg = art["config"].get("prediction", {})
    n_samples = args.samples if args.samples else int(
        pred_cfg.get("samples_per_input", 500))
    seed = args.seed if args.seed is not None else int(pred_cfg.get("seed", 0))
    out = Path(args.out) if args.out else Path(args.artifact).parent
    out.mkdir(parents=True, exist_ok=True)
    summ = emu.predictive_summary(X0, n_samples=n_samples, seed=seed)
    ds.write_predictions_csv(out / "predictions.csv", summ)
    ds.write_aggregated_csv(out / "aggregated.csv", summ)
    ds.write_json(out / "prediction_manifest.json", {
        "artifact": str(args.artifact),
        "inputs": str(args.inputs),
        "samples_per_input": n_samples,
        "seed": seed,
        "n_inputs": int(X0.shape[0]),
        "n_locations": int(summ.mean.shape[1]),
    })
    print(f"wrote predictions for {X0.shape[0]} inputs x "
          f"{summ.mean.shape[1]} locations to {out}")
    return 0


def cmd_evaluate(args):
    truth, _ = ds.read_matrix_csv(args.truth)
    pred_dir = Path(args.predictions)
    manifest = ds.read_json(pred_dir / "prediction_manifest.json")
    n0, N = manifest["n_inputs"], manifest["n_locations"]
    if truth.shape != (n0, N):
        raise DataValidationError(
            f"truth matrix is {truth.shape}, predictions cover ({n0}, {N})"
        )
    mean, q025, q975 = ds.read_predictions_csv(pred_dir / "predictions.csv", n0, N)
    agg, _ = ds.read_matrix_csv(pred_dir / "aggregated.csv", expect_columns=4)
    rep = compute_metrics(truth, mean, q025, q975,
                          agg_truth=truth.mean(axis=1), agg_mean=agg[:, 1],
                          agg_q025=agg[:, 2], agg_q975=agg[:, 3])
    out = Path(args.out) if args.out else pred_dir
    out.mkdir(parents=True, exist_ok=True)
    doc = {k: {kk: ds.fmt(vv) for kk, vv in v.items()}
           for k, v in rep.as_dict().items()}
    ds.write_json(out / "metrics.json", doc)
    with open(out / "per_location.csv", "w", newline="") as fh:
        import csv as _csv

        w = _csv.writer(fh)
        w.writerow(["location_id", "rmspe", "cvg95", "alci95"])
        for j, row in enumerate(rep.per_location, start=1):
            w.writerow([j] + [ds.fmt(v) for v in row])
    print(f"marginal: rmspe={rep.rmspe_marginal:.4f} cvg={rep.cvg95_marginal:.1f} "
          f"alci={rep.alci95_marginal:.4f}")
    print(f"aggregated: rmspe={rep.rmspe_agg:.4f} cvg={rep.cvg95_agg:.1f} "
          f"alci={rep.alci95_agg:.4f}")
    return 0


def cmd_sweep_pcs(args):
    cfg = load_config(args.config)
    _require(cfg["model"] == "nonsep",
             "sweep-pcs requires a config with model = 'nonsep'")
    out = Path(args.out) if args.out else Path(cfg.get("out_dir", "run"))
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    settings = chain_settings_from(cfg, "nonsep", preset=args.preset)
    data, refs, exp = resolve_dataset(cfg, out, preset=args.preset)
    if exp is not None:
        X_test, Y_test = exp.test_inputs, exp.test_truth
    else:
        pred_cfg = cfg.get("prediction", {})
        _require("test_inputs" in pred_cfg and "test_truth" in pred_cfg,
                 "file datasets need prediction.test_inputs and "
                 "prediction.test_truth for sweep-pcs")
        X_test, _ = ds.read_matrix_csv(pred_cfg["test_inputs"])
        Y_test, _ = ds.read_matrix_csv(pred_cfg["test_truth"])
    p_range = range(args.p_min, args.p_max + 1)
    rows = sweep_components(
        data.X, data.Y, X_test, Y_test, p_range, mcmc=settings, seed=seed,
        prior_scale_factor=cfg.get("nonsep", {}).get("prior_scale_factor", 0.5),
        n_threads=args.threads, bounds=data.bounds,
    )
    import csv as _csv

    with open(out / "sweep.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["p", "rmspe_cokriging", "rmspe_kriging"])
        for r in rows:
            w.writerow([r["p"], ds.fmt(r["rmspe_cokriging"]),
                        ds.fmt(r["rmspe_kriging"])])
    for r in rows:
        print(f"p={r['p']}: cokriging rmspe={r['rmspe_cokriging']:.4f}  "
              f"kriging rmspe={r['rmspe_kriging']:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mfcokrig",
        description="Multifidelity GP emulation: separable and basis-weight "
                    "autoregressive cokriging",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-testbed", help="write the contaminant testbed dataset")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--preset", choices=("desk", "paper"), default=None)
    g.set_defaults(func=cmd_gen_testbed)

    f = sub.add_parser("fit", help="fit a model from a config file")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--out", default=None)
    f.add_argument("--preset", choices=("desk", "paper"), default=None)
    f.add_argument("--threads", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at new inputs from a fit artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="score predictions against truth")
    e.add_argument("--predictions", required=True,
                   help="directory containing predictions.csv / aggregated.csv")
    e.add_argument("--truth", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep-pcs", help="RMSPE vs number of basis components")
    s.add_argument("--config", required=True)
    s.add_argument("--p-min", type=int, default=1)
    s.add_argument("--p-max", type=int, default=10)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.add_argument("--preset", choices=("desk", "paper"), default=None)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_sweep_pcs)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataValidationError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ConditioningError, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except EmulatorError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
