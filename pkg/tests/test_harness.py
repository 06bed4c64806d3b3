"""Configuration, curve tables, experiment runs and the command line."""

import csv
import io
import math

import numpy as np
import pytest

from nsid.groundtruth import Dataset, build_teacher_cnn, homogeneous_population, make_dataset, save_dataset
from nsid.harness import (
    CURVE_COLUMNS,
    AllCellsFailed,
    ConfigError,
    CurveTable,
    ExperimentSpec,
    ProtocolError,
    UnsupportedModelError,
    apply_overrides,
    cell_hash,
    default_spec,
    emit_report,
    fit_real,
    oracle_mask_fit,
    output_root,
    parse_value,
    read_config,
    real_grid_cells,
    run_experiment,
    spec_from_config,
    summarize,
)
from nsid.harness.cli import main
from nsid.training import TrainConfig


def row(**kw):
    base = {"experiment": "linear-homog", "model": "ridge", "n_neurons": 10, "n_types": 1, "n_samples": 64,
            "seed": 0, "fev_mean": 0.5, "corr_mean": 0.7, "wall_seconds": 1.25}
    base.update(kw)
    return base


def tiny_spec(tmp_path, **kw):
    params = dict(n_neurons=(10,), n_samples=(128,), roster=("ridge",), seeds=(0,), n_test=64,
                  output_dir=str(tmp_path))
    params.update(kw)
    return default_spec("linear-homog", **params)


def poisson_repeat_dataset(n_train=160, n_test=24, n_repeats=4, side=16, n_neurons=3, seed=0):
    """Poisson spike counts from rectified linear filters, with repeated test presentations."""
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    stim = rng.normal(size=(n, 1, side, side))
    filters = rng.normal(0, 0.15, size=(n_neurons, side * side))
    rates = np.log1p(np.exp(stim.reshape(n, -1) @ filters.T))
    test = np.arange(n_train, n)
    repeats = rng.poisson(rates[test][:, None, :], size=(n_test, n_repeats, n_neurons)).astype(float)
    return Dataset(stim, rng.poisson(rates).astype(float), splits={"train": np.arange(n_train), "test": test},
                   repeats=repeats)


class TestConfig:
    def test_parse_values(self):
        assert parse_value("3") == 3
        assert parse_value("0.5") == 0.5
        assert parse_value("yes") is True
        assert parse_value("1, 2.5, x") == (1, 2.5, "x")
        assert parse_value(" name ") == "name"

    def test_read_and_override(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[experiment]\nn_samples = 256, 1024\nseeds = 0\n\n[grid.factorized]\nmask = 0.1\n")
        cfg = read_config(path)
        assert cfg == {"experiment": {"n_samples": (256, 1024), "seeds": 0}, "grid.factorized": {"mask": 0.1}}
        out = apply_overrides(cfg, ["seeds=1,2", "train.lr0=0.01", "grid.factorized.mask=1.0"])
        assert out["experiment"]["seeds"] == (1, 2)
        assert out["train"] == {"lr0": 0.01}
        assert out["grid.factorized"]["mask"] == 1.0
        assert cfg["experiment"]["seeds"] == 0

    def test_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config(tmp_path / "absent.cfg")
        bad = tmp_path / "bad.cfg"
        bad.write_text("no section header\n")
        with pytest.raises(ConfigError):
            read_config(bad)
        with pytest.raises(ConfigError):
            apply_overrides({}, ["novalue"])

    def test_output_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv("NSID_OUTPUT_ROOT", str(tmp_path))
        assert output_root() == tmp_path
        assert str(output_root("elsewhere")) == "elsewhere"
        monkeypatch.delenv("NSID_OUTPUT_ROOT")
        assert str(output_root()) == "outputs"

    def test_spec_from_config(self, tmp_path):
        config = {"experiment": {"n_neurons": 100, "seeds": (4, 5)}, "grid.factorized": {"mask": 0.5},
                  "train": {"lr0": 0.01}}
        spec = spec_from_config("linear-homog", config, output_dir=str(tmp_path), n_workers=1)
        assert spec.n_neurons == (100,) and spec.seeds == (4, 5)
        assert spec.grid_for("factorized") == {"mask": (0.5,), "weights": (0.0,)}
        assert spec.train_config().lr0 == 0.01
        with pytest.raises(ValueError, match="unknown experiment settings"):
            spec_from_config("linear-homog", {"experiment": {"colour": 1}})
        with pytest.raises(ValueError, match="unknown training settings"):
            spec_from_config("linear-homog", {"train": {"momentum": 0.9}})


class TestCurveTable:
    def test_unique_key(self):
        table = CurveTable()
        table.add(row())
        table.add(row(seed=1))
        with pytest.raises(ValueError, match="duplicate"):
            table.add(row(fev_mean=0.9))
        with pytest.raises(ValueError, match="duplicate"):
            table.merge(CurveTable([row()]))

    def test_missing_column(self):
        r = row()
        del r["corr_mean"]
        with pytest.raises(ValueError, match="missing"):
            CurveTable().add(r)

    def test_empty_is_header_only(self):
        text = CurveTable().to_csv()
        assert text == ",".join(CURVE_COLUMNS) + "\n"

    def test_round_trip_through_csv_module(self):
        table = CurveTable()
        table.add(row(model='odd, "quoted" name', fev_mean=math.nan))
        table.add(row(n_types=None, seed=2, fev_mean=1 / 3))
        text = table.to_csv()
        parsed = list(csv.reader(io.StringIO(text)))
        assert tuple(parsed[0]) == CURVE_COLUMNS
        assert parsed[1][1] == 'odd, "quoted" name'
        back = CurveTable.from_csv(text)
        assert back.to_csv() == text
        assert back.rows[1]["fev_mean"] == 1 / 3 and back.rows[1]["n_types"] is None

    def test_column_order_fixed(self):
        assert CURVE_COLUMNS == ("experiment", "model", "n_neurons", "n_types", "n_samples", "seed",
                                 "fev_mean", "corr_mean", "wall_seconds")
        shuffled = {k: row()[k] for k in reversed(CURVE_COLUMNS)}
        table = CurveTable()
        table.add(shuffled)
        assert table.to_csv().splitlines()[0].split(",") == list(CURVE_COLUMNS)
        assert "wall_seconds" not in table.to_csv(include_wall=False)

    def test_rejects_foreign_columns(self):
        with pytest.raises(ValueError):
            CurveTable.from_csv("a,b\n1,2\n")

    def test_mean_fev(self):
        table = CurveTable([row(), row(seed=1, fev_mean=0.7), row(seed=2, fev_mean=math.nan)])
        assert table.mean_fev(model="ridge") == pytest.approx(0.6)
        assert math.isnan(table.mean_fev(model="lasso"))


class TestReport:
    def test_summary_and_files(self, tmp_path):
        table = CurveTable([
            row(model="ridge", n_samples=4096, fev_mean=0.6),
            row(model="factorized", n_samples=4096, fev_mean=0.8),
            row(experiment="two-types", model="factorized", n_neurons=1000, n_types=2, fev_mean=0.7),
        ])
        text = summarize(table)
        assert "linear-homog n_neurons=10 n_types=1 n_samples=4096: factorized (0.800)" in text
        assert "vs reference 0.65 (delta -0.050)" in text
        written = emit_report(table, tmp_path / "rep")
        assert sorted(p.name for p in written) == ["linear-homog.csv", "summary.txt", "two-types.csv"]
        assert len(CurveTable.from_csv((tmp_path / "rep" / "linear-homog.csv").read_text()).rows) == 2

    def test_empty_table(self, tmp_path):
        written = emit_report(CurveTable(), tmp_path)
        assert (tmp_path / "curves.csv").read_text() == ",".join(CURVE_COLUMNS) + "\n"
        assert len(written) == 2


class TestExperimentSpec:
    def test_validation(self):
        with pytest.raises(ValueError, match="unknown experiment"):
            ExperimentSpec(name="bogus", n_samples=(64,), roster=("ridge",))
        with pytest.raises(ValueError, match="non-empty"):
            ExperimentSpec(name="linear-homog", n_samples=(), roster=("ridge",))
        with pytest.raises(ValueError, match="non-empty"):
            ExperimentSpec(name="linear-homog", n_samples=(64,), roster=())
        with pytest.raises(ValueError, match="unknown roster"):
            ExperimentSpec(name="linear-homog", n_samples=(64,), roster=("svm",))

    def test_presets(self):
        lin = default_spec("linear-homog")
        assert lin.n_neurons == (1, 10, 100, 1000)
        assert lin.n_samples == tuple(2 ** k for k in range(6, 13))
        assert set(lin.roster) == {"ridge", "lasso", "ols", "factorized", "oracle_mask"}
        types = default_spec("nonlinear-types")
        assert types.n_types == (1, 2, 4, 8, 16) and types.units_per_type == 64
        assert types.n_samples == (4096,)
        assert len(types.cells()) == 15

    def test_large_cell_is_opt_in(self):
        assert all(c["n_types"] <= 16 for c in default_spec("nonlinear-types").cells())
        cells = default_spec("nonlinear-types", large=True).cells()
        assert cells[-1] == {"n_types": 128, "n_samples": 2 ** 16, "seed": 0}

    def test_cell_order(self):
        spec = default_spec("linear-homog", n_neurons=(1, 10), n_samples=(64, 128), seeds=(0, 1))
        assert spec.cells()[:3] == [{"n_neurons": 1, "n_samples": 64, "seed": 0},
                                    {"n_neurons": 1, "n_samples": 64, "seed": 1},
                                    {"n_neurons": 1, "n_samples": 128, "seed": 0}]

    def test_cell_hash_is_content_addressed(self):
        cell = {"n_neurons": 10, "n_samples": 64, "seed": 0}
        a = default_spec("linear-homog", output_dir="x")
        b = default_spec("linear-homog", output_dir="y", roster=("ridge",), n_workers=4)
        c = default_spec("linear-homog", grids={"factorized": {"mask": (1.0,)}})
        assert cell_hash(a, cell) == cell_hash(b, cell)
        assert cell_hash(a, cell) != cell_hash(c, cell)
        assert cell_hash(a, cell) != cell_hash(a, {**cell, "seed": 1})


class TestRunExperiment:
    def test_singleton(self, tmp_path):
        spec = tiny_spec(tmp_path)
        table = run_experiment(spec)
        assert len(table.rows) == 1
        r = table.rows[0]
        assert (r["model"], r["n_neurons"], r["n_samples"], r["seed"]) == ("ridge", 10, 128, 0)
        assert math.isfinite(r["fev_mean"]) and r["fev_mean"] <= 1
        cell_dir = tmp_path / "linear-homog" / cell_hash(spec, spec.cells()[0])
        for name in ("dataset.bin", "cell.json", "ridge/model.bin", "ridge/metrics.csv", "ridge/report.json"):
            assert (cell_dir / name).exists(), name
        assert (tmp_path / "linear-homog" / "curves.csv").read_text() == table.to_csv()

    def test_resume_is_idempotent(self, tmp_path):
        spec = tiny_spec(tmp_path, roster=("ridge", "ols"))
        first = run_experiment(spec).to_csv()
        model_file = next((tmp_path / "linear-homog").glob("*/ridge/model.bin"))
        stamp = model_file.stat().st_mtime_ns
        second = run_experiment(spec).to_csv()
        assert first == second
        assert model_file.stat().st_mtime_ns == stamp

    def test_rerun_from_scratch_is_deterministic(self, tmp_path):
        a = run_experiment(tiny_spec(tmp_path / "a", roster=("ridge", "lasso")))
        b = run_experiment(tiny_spec(tmp_path / "b", roster=("ridge", "lasso")))
        assert a.to_csv(include_wall=False) == b.to_csv(include_wall=False)
        for rel in ("ridge/metrics.csv", "lasso/metrics.csv"):
            fa = next((tmp_path / "a" / "linear-homog").glob(f"*/{rel}")).read_bytes()
            fb = next((tmp_path / "b" / "linear-homog").glob(f"*/{rel}")).read_bytes()
            assert fa == fb

    def test_failed_model_recorded(self, tmp_path):
        spec = default_spec("nonlinear-samples", n_types=(1,), units_per_type=4, n_samples=(64,), seeds=(0,),
                            n_test=16, roster=("ridge",), output_dir=str(tmp_path))
        with pytest.raises(AllCellsFailed) as info:
            run_experiment(spec)
        assert len(info.value.table.rows) == 1
        assert math.isnan(info.value.table.rows[0]["fev_mean"])
        report = next(tmp_path.glob("nonlinear-samples/*/ridge/report.json")).read_text()
        assert '"status": "failed"' in report

    def test_partial_failure_keeps_going(self, tmp_path):
        spec = tiny_spec(tmp_path, roster=("ridge", "ols"), n_samples=(128,), n_neurons=(1,))
        table = run_experiment(spec)
        assert {r["model"] for r in table.rows} == {"ridge", "ols"}


class TestOracleMask:
    def test_kernel_frozen(self):
        pop = homogeneous_population(5, seed=0, stimulus_size=24)
        ds, pop = make_dataset(pop, 256, 64, seed=0)
        result = oracle_mask_fit(ds, pop, TrainConfig(max_steps=200))
        model = result.model
        np.testing.assert_array_equal(model.params["conv0.kernel"].data[0, 0], pop.kernels[0])
        assert [k for k, _ in model.trainable()] == ["masks"]
        assert result.report.steps_run > 0

    def test_rejects_teacher(self):
        pop = build_teacher_cnn(1, 4, seed=0)
        ds, pop = make_dataset(pop, 32, 8, seed=0, stimulus="pink", n_calibration=1000)
        with pytest.raises(UnsupportedModelError):
            oracle_mask_fit(ds, pop)


class TestFitReal:
    def test_grid_cells(self):
        grid = {"layers": (1, 2), "feature_maps": (4,), "first_kernel": (5, 13), "later_kernel": (3, 5)}
        cells = real_grid_cells(grid, (16, 16))
        assert {"layers": 1, "feature_maps": 4, "first_kernel": 5, "later_kernel": 3} in cells
        assert not any(c["layers"] == 1 and c["later_kernel"] == 5 for c in cells)
        assert not any(c["layers"] == 2 and c["first_kernel"] == 13 and c["later_kernel"] == 5 for c in cells)
        assert len(cells) == 5

    def test_default_grid_contains_large_first_layer(self):
        from nsid.harness import DEFAULT_REAL_GRID
        assert 48 in DEFAULT_REAL_GRID["feature_maps"] and 13 in DEFAULT_REAL_GRID["first_kernel"]
        assert DEFAULT_REAL_GRID["layers"] == (1, 2, 3)

    def test_smoke(self):
        ds = poisson_repeat_dataset()
        grid = {"layers": (1, 2), "feature_maps": (3,), "first_kernel": (5,), "later_kernel": (3,),
                "laplace": (0.01,), "group": (0.001,), "mask": (0.01,), "weights": (0.01,)}
        report, metrics, search = fit_real(ds, "v1-poisson", grid, TrainConfig(loss="poisson", max_steps=60))
        assert report.recipe == "v1-poisson"
        assert -1 <= report.metrics["corr_mean"] <= 1
        assert len(search.rows) == 2 and metrics.corr.shape == (3,)

    def test_protocol_errors(self):
        ds = poisson_repeat_dataset()
        no_repeats = Dataset(ds.stimuli, ds.responses, splits=ds.splits)
        with pytest.raises(ProtocolError):
            fit_real(no_repeats)
        one_repeat = Dataset(ds.stimuli, ds.responses, splits=ds.splits, repeats=ds.repeats[:, :1])
        with pytest.raises(ProtocolError):
            fit_real(one_repeat)
        with pytest.raises(ValueError, match="recipe"):
            fit_real(ds, "v4-mse")
        with pytest.raises(ValueError, match="Poisson"):
            fit_real(ds, cfg=TrainConfig(loss="mse"))


class TestCommandLine:
    def test_simulate_fit_report(self, tmp_path, capsys):
        data = tmp_path / "d.bin"
        assert main(["simulate", "--population", "homogeneous", "--n-neurons", "4", "--n-samples", "128",
                     "--n-test", "32", "--out", str(data)]) == 0
        assert main(["fit", str(data), "--model", "ridge", "--out", str(tmp_path / "fit")]) == 0
        for name in ("model.bin", "metrics.csv", "report.json"):
            assert (tmp_path / "fit" / name).exists()
        assert "ridge:" in capsys.readouterr().out

    def test_experiment_and_report(self, tmp_path):
        args = ["experiment", "curve-shift", "--output-root", str(tmp_path), "--workers", "1",
                "--set", "n_neurons=1", "--set", "n_samples=64", "--set", "seeds=0", "--set", "n_test=32",
                "--set", "roster=ridge"]
        assert main(args) == 0
        curves = tmp_path / "curve-shift" / "curves.csv"
        assert curves.exists()
        assert (tmp_path / "curve-shift" / "report" / "summary.txt").exists()
        assert main(["report", str(curves), "--out", str(tmp_path / "merged")]) == 0
        assert (tmp_path / "merged" / "curve-shift.csv").read_text() == curves.read_text()

    def test_exit_codes(self, tmp_path):
        assert main(["fit", str(tmp_path / "missing.bin"), "--out", str(tmp_path / "o")]) == 4
        junk = tmp_path / "junk.bin"
        junk.write_bytes(b"not a dataset at all")
        assert main(["fit", str(junk), "--out", str(tmp_path / "o")]) == 4
        assert main(["experiment", "linear-homog", "--output-root", str(tmp_path), "--set", "colour=red"]) == 2
        assert main(["experiment", "linear-homog", "--config", str(tmp_path / "none.cfg")]) == 2
        args = ["experiment", "nonlinear-samples", "--output-root", str(tmp_path), "--workers", "1",
                "--set", "n_types=1", "--set", "units_per_type=4", "--set", "n_samples=64", "--set", "seeds=0",
                "--set", "n_test=16", "--set", "roster=ridge"]
        assert main(args) == 3

    def test_fit_real_needs_repeats(self, tmp_path):
        data = tmp_path / "d.bin"
        ds = poisson_repeat_dataset()
        save_dataset(Dataset(ds.stimuli, ds.responses, splits=ds.splits), data)
        assert main(["fit", str(data), "--recipe", "v1-poisson", "--out", str(tmp_path / "o")]) == 4

    def test_gradcheck_verb(self, capsys):
        assert main(["gradcheck", "--points", "2"]) == 0
        assert main(["gradcheck", "--points", "2", "--tolerance", "1e-30"]) == 1
        assert capsys.readouterr().out.count("PASS") == 4
