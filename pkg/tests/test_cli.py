import json
from pathlib import Path

import numpy as np
import pytest

from mfcokrig.cli import main
from mfcokrig.datasets import (
    MultifidelityDataset,
    read_json,
    read_matrix_csv,
    save_dataset,
    write_matrix_csv,
)
from mfcokrig.testbed import hi_fidelity, lo_fidelity

DESK_TB = {"testbed": {"seed": 3, "n_lo": 20, "n_hi": 10, "n_test": 6}}
FAST_MCMC = {"iterations": 200, "burn_in": 40, "proposal_scale": 0.3, "seed": 0}


def write_config(path, **overrides):
    cfg = {
        "model": "sep",
        "dataset": DESK_TB,
        "seed": 1,
        "mcmc": FAST_MCMC,
        "sep": {"p": 1, "tau2": 1.0, "eta": 4.0, "lam": 2.0,
                "location_scaling": "raw"},
        "prediction": {"samples_per_input": 150, "seed": 5},
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg, indent=1))
    return cfg


def read_bytes(path):
    return Path(path).read_bytes()


class TestGenTestbed:
    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-testbed", "--seed", "4", "--out", str(a)]) == 0
        assert main(["gen-testbed", "--seed", "4", "--out", str(b)]) == 0
        for name in ("design_level1.csv", "design_level2.csv",
                     "outputs_level1.csv", "outputs_level2.csv",
                     "locations.csv", "test_inputs.csv", "test_truth.csv",
                     "manifest.json"):
            assert read_bytes(a / name) == read_bytes(b / name), name

    def test_manifest_records_provenance(self, tmp_path):
        main(["gen-testbed", "--seed", "9", "--out", str(tmp_path / "d")])
        man = read_json(tmp_path / "d" / "manifest.json")
        assert man["seed"] == 9
        assert man["sizes"] == [60, 30]
        assert man["locations"] == 1000
        assert [float(lo) for lo, _ in man["bounds"]] == [7.0, 0.02, 0.01]

    def test_desk_preset_halves_designs(self, tmp_path):
        main(["gen-testbed", "--seed", "1", "--preset", "desk",
              "--out", str(tmp_path / "d")])
        man = read_json(tmp_path / "d" / "manifest.json")
        assert man["sizes"] == [30, 15]

    def test_outputs_match_formula(self, tmp_path):
        main(["gen-testbed", "--seed", "11", "--out", str(tmp_path / "d")])
        X2, _ = read_matrix_csv(tmp_path / "d" / "design_level2.csv")
        Y2, _ = read_matrix_csv(tmp_path / "d" / "outputs_level2.csv")
        locs, _ = read_matrix_csv(tmp_path / "d" / "locations.csv")
        rng = np.random.default_rng(0)
        for _ in range(5):
            i, j = rng.integers(0, 30), rng.integers(0, 1000)
            assert Y2[i, j] == pytest.approx(
                hi_fidelity(np.append(X2[i], 30.0), locs[j]), rel=1e-12)
        Y1, _ = read_matrix_csv(tmp_path / "d" / "outputs_level1.csv")
        X1, _ = read_matrix_csv(tmp_path / "d" / "design_level1.csv")
        i, j = rng.integers(0, 60), rng.integers(0, 1000)
        assert Y1[i, j] == pytest.approx(
            lo_fidelity(np.append(X1[i], 30.0), locs[j]), rel=1e-12)


@pytest.fixture(scope="module")
def fitted_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg_path = root / "config.json"
    write_config(cfg_path)
    out = root / "out"
    rc = main(["fit", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    return root, out


class TestFit:
    def test_artifact_contents(self, fitted_run):
        _, out = fitted_run
        art = read_json(out / "fit.json")
        assert art["model"] == "sep"
        assert len(art["theta_map"]) == 2
        assert all(0 <= a <= 1 for a in art["metadata"]["acceptance_rates"])
        assert (out / "chain_level1.csv").exists()
        assert (out / "effective_config.json").exists()

    def test_pp_baseline_artifact_has_no_regression_blocks(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        write_config(cfg_path, model="pp-baseline")
        out = tmp_path / "o"
        assert main(["fit", "--config", str(cfg_path), "--out", str(out)]) == 0
        art = read_json(out / "fit.json")
        assert art["metadata"]["neighbors_p"] == 0
        for level in art["factors"]:
            assert level["V_hat"] == {} and level["a_hat"] == {}

    def test_sep_artifact_records_regression_blocks(self, fitted_run):
        _, out = fitted_run
        art = read_json(out / "fit.json")
        assert all(len(level["V_hat"]) > 0 for level in art["factors"])

    def test_malformed_csv_exits_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("M,D,L\n1.0,2.0,oops\n")
        cfg_path = tmp_path / "c.json"
        write_config(cfg_path, dataset={"files": {
            "designs": [str(bad), str(bad)],
            "outputs": [str(bad), str(bad)],
        }})
        assert main(["fit", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2

    def test_unknown_model_exits_2(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({"model": "what", "dataset": DESK_TB}))
        assert main(["fit", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2

    def test_non_nested_files_exit_2_with_row(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        X1 = rng.uniform(size=(6, 2))
        X2 = rng.uniform(size=(3, 2))  # not a subset
        data = MultifidelityDataset(
            X=[X1, X2], Y=[rng.normal(size=(6, 4)), rng.normal(size=(3, 4))],
            locations=rng.uniform(size=(4, 2)), input_names=["u", "v"])
        save_dataset(tmp_path / "d", data)
        cfg_path = tmp_path / "c.json"
        write_config(cfg_path, dataset={"files": {
            "designs": [str(tmp_path / "d" / f"design_level{t}.csv") for t in (1, 2)],
            "outputs": [str(tmp_path / "d" / f"outputs_level{t}.csv") for t in (1, 2)],
            "locations": str(tmp_path / "d" / "locations.csv"),
        }})
        assert main(["fit", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2
        assert "row 0" in capsys.readouterr().err


class TestPredict:
    def test_training_inputs_interpolate(self, fitted_run, tmp_path):
        _, out = fitted_run
        art = read_json(out / "fit.json")
        X2, _ = read_matrix_csv(art["config"]["dataset"]["designs"][1])
        Y2, _ = read_matrix_csv(art["config"]["dataset"]["outputs"][1])
        inputs = tmp_path / "train_inputs.csv"
        write_matrix_csv(inputs, X2[:2], ["M", "D", "L"])
        pred_out = tmp_path / "pred"
        rc = main(["predict", "--artifact", str(out / "fit.json"),
                   "--inputs", str(inputs), "--samples", "120",
                   "--seed", "7", "--out", str(pred_out)])
        assert rc == 0
        mean, q025, q975 = _read_preds(pred_out, 2, Y2.shape[1])
        assert np.max(np.abs(mean - Y2[:2])) < 1e-4
        assert np.max(q975 - q025) < 0.05

    def test_row_count_and_aggregate_consistency(self, fitted_run, tmp_path):
        root, out = fitted_run
        inputs = out / "dataset" / "test_inputs.csv"
        pred_out = tmp_path / "pred"
        rc = main(["predict", "--artifact", str(out / "fit.json"),
                   "--inputs", str(inputs), "--samples", "150",
                   "--seed", "5", "--out", str(pred_out)])
        assert rc == 0
        man = read_json(pred_out / "prediction_manifest.json")
        rows, _ = read_matrix_csv(pred_out / "predictions.csv")
        assert rows.shape[0] == man["n_inputs"] * man["n_locations"]
        mean, _, _ = _read_preds(pred_out, man["n_inputs"], man["n_locations"])
        agg, _ = read_matrix_csv(pred_out / "aggregated.csv")
        assert np.allclose(agg[:, 1], mean.mean(axis=1), atol=1e-12)

    def test_deterministic_rerun_byte_identical(self, fitted_run, tmp_path):
        root, out = fitted_run
        inputs = out / "dataset" / "test_inputs.csv"
        outs = []
        for sub in ("p1", "p2"):
            pred_out = tmp_path / sub
            main(["predict", "--artifact", str(out / "fit.json"),
                  "--inputs", str(inputs), "--samples", "100",
                  "--seed", "3", "--out", str(pred_out)])
            outs.append(pred_out)
        assert read_bytes(outs[0] / "predictions.csv") == read_bytes(outs[1] / "predictions.csv")
        assert read_bytes(outs[0] / "aggregated.csv") == read_bytes(outs[1] / "aggregated.csv")

    def test_artifact_mismatch_exits_2(self, tmp_path):
        bogus = tmp_path / "fit.json"
        bogus.write_text(json.dumps({"model": "sep"}))
        assert main(["predict", "--artifact", str(bogus),
                     "--inputs", str(bogus), "--out", str(tmp_path)]) == 2


class TestEvaluate:
    def test_perfect_prediction_fixture(self, tmp_path):
        rng = np.random.default_rng(7)
        truth = rng.normal(size=(3, 4))
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        import csv

        with open(pred_dir / "predictions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["input_id", "location_id", "mean", "q025", "q975"])
            for i in range(3):
                for j in range(4):
                    v = repr(float(truth[i, j]))
                    w.writerow([i + 1, j + 1, v, v, v])
        with open(pred_dir / "aggregated.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["input_id", "mean", "q025", "q975"])
            for i in range(3):
                v = repr(float(truth[i].mean()))
                w.writerow([i + 1, v, v, v])
        (pred_dir / "prediction_manifest.json").write_text(
            json.dumps({"n_inputs": 3, "n_locations": 4}))
        truth_path = tmp_path / "truth.csv"
        write_matrix_csv(truth_path, truth, [f"loc_{j}" for j in range(4)])
        rc = main(["evaluate", "--predictions", str(pred_dir),
                   "--truth", str(truth_path), "--out", str(tmp_path / "m")])
        assert rc == 0
        doc = read_json(tmp_path / "m" / "metrics.json")
        assert float(doc["marginal"]["rmspe"]) == 0.0
        assert float(doc["marginal"]["cvg95"]) == 100.0
        assert float(doc["aggregated"]["alci95"]) == 0.0

    def test_report_byte_reproducible(self, fitted_run, tmp_path):
        root, out = fitted_run
        inputs = out / "dataset" / "test_inputs.csv"
        truth = out / "dataset" / "test_truth.csv"
        pred_out = tmp_path / "pred"
        main(["predict", "--artifact", str(out / "fit.json"),
              "--inputs", str(inputs), "--samples", "150", "--seed", "5",
              "--out", str(pred_out)])
        m1, m2 = tmp_path / "m1", tmp_path / "m2"
        for m in (m1, m2):
            rc = main(["evaluate", "--predictions", str(pred_out),
                       "--truth", str(truth), "--out", str(m)])
            assert rc == 0
        assert read_bytes(m1 / "metrics.json") == read_bytes(m2 / "metrics.json")
        assert read_bytes(m1 / "per_location.csv") == read_bytes(m2 / "per_location.csv")

    def test_shape_mismatch_exits_2(self, fitted_run, tmp_path):
        root, out = fitted_run
        inputs = out / "dataset" / "test_inputs.csv"
        pred_out = tmp_path / "pred"
        main(["predict", "--artifact", str(out / "fit.json"),
              "--inputs", str(inputs), "--samples", "120", "--seed", "5",
              "--out", str(pred_out)])
        bad_truth = tmp_path / "t.csv"
        write_matrix_csv(bad_truth, np.zeros((2, 3)), ["a", "b", "c"])
        assert main(["evaluate", "--predictions", str(pred_out),
                     "--truth", str(bad_truth)]) == 2


class TestSweepPcs:
    def test_table_and_kriging_isolation(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        write_config(cfg_path, model="nonsep",
                     nonsep={"n_components": 3})
        out = tmp_path / "o"
        rc = main(["sweep-pcs", "--config", str(cfg_path), "--p-min", "1",
                   "--p-max", "3", "--out", str(out)])
        assert rc == 0
        M, header = read_matrix_csv(out / "sweep.csv")
        assert header == ["p", "rmspe_cokriging", "rmspe_kriging"]
        assert M.shape == (3, 3)
        assert M[:, 0].tolist() == [1.0, 2.0, 3.0]


class TestRoundTrip:
    def test_end_to_end_single_config(self, tmp_path):
        # gen-testbed -> fit -> predict -> evaluate with no manual steps
        cfg_path = tmp_path / "c.json"
        write_config(cfg_path)
        out = tmp_path / "run"
        assert main(["fit", "--config", str(cfg_path), "--out", str(out)]) == 0
        inputs = out / "dataset" / "test_inputs.csv"
        truth = out / "dataset" / "test_truth.csv"
        pred = tmp_path / "pred"
        assert main(["predict", "--artifact", str(out / "fit.json"),
                     "--inputs", str(inputs), "--out", str(pred)]) == 0
        assert main(["evaluate", "--predictions", str(pred),
                     "--truth", str(truth)]) == 0
        assert (pred / "metrics.json").exists()

    def test_synthetic_csv_ingestion_200_locations(self, tmp_path):
        # the storm-surge-shaped path: user-supplied 2-level CSV dataset
        rng = np.random.default_rng(31)
        N = 200
        locs = rng.uniform(size=(N, 2))
        X1 = rng.uniform(size=(24, 2))
        X2 = X1[rng.permutation(24)[:12]]
        w = locs @ np.array([2.0, -1.0])

        def f_lo(X):
            return np.outer(np.sin(5 * X[:, 0]) + np.cos(3 * X[:, 1]), np.cos(2 * w))

        def f_hi(X):
            return f_lo(X) + 0.2 * np.outer(np.sin(6 * X[:, 0] * X[:, 1]), np.sin(w))

        data = MultifidelityDataset(X=[X1, X2], Y=[f_lo(X1), f_hi(X2)],
                                    locations=locs, input_names=["u", "v"],
                                    bounds=np.array([[0, 1], [0, 1.0]]))
        save_dataset(tmp_path / "d", data)
        cfg_path = tmp_path / "c.json"
        write_config(cfg_path, dataset={"files": {
            "designs": [str(tmp_path / "d" / f"design_level{t}.csv") for t in (1, 2)],
            "outputs": [str(tmp_path / "d" / f"outputs_level{t}.csv") for t in (1, 2)],
            "locations": str(tmp_path / "d" / "locations.csv"),
        }})
        out = tmp_path / "o"
        assert main(["fit", "--config", str(cfg_path), "--out", str(out)]) == 0
        inputs = tmp_path / "x0.csv"
        write_matrix_csv(inputs, rng.uniform(size=(3, 2)), ["u", "v"])
        pred = tmp_path / "pred"
        assert main(["predict", "--artifact", str(out / "fit.json"),
                     "--inputs", str(inputs), "--samples", "120",
                     "--out", str(pred)]) == 0
        man = read_json(pred / "prediction_manifest.json")
        assert man["n_locations"] == 200


def _read_preds(pred_dir, n0, N):
    from mfcokrig.datasets import read_predictions_csv

    return read_predictions_csv(Path(pred_dir) / "predictions.csv", n0, N)
