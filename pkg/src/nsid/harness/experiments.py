"""Named simulation studies: sweep definitions, model rosters and cell execution.

Every cell of a sweep (population axes + sample count + seed) gets its own
directory ``<root>/<experiment>/<cell-hash>/`` holding ``dataset.bin`` and,
per roster model, ``<model>/model.bin``, ``<model>/metrics.csv`` and
``<model>/report.json``. A model whose ``report.json`` exists is not
refit, so interrupted runs resume where they stopped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..groundtruth import (
    build_teacher_cnn,
    build_two_type_population,
    homogeneous_population,
    load_dataset,
    make_dataset,
    save_dataset,
    write_container,
)
from ..groundtruth.dataset import Dataset
from ..metrics import evaluate_predictions
from ..models import (
    Architecture,
    fit_glm,
    fit_linear_baseline,
    fit_pooled_linear,
    fix_masks_from_sta,
    fully_connected_model,
    init_factorized,
    model_to_sections,
    oracle_mask_model,
)
from ..training import AllCellsFailedError, TrainConfig, TrainingDivergedError, grid_search
from ..training.split import train_validation_split
from .report import CurveTable

log = logging.getLogger(__name__)

EXPERIMENTS = ("linear-homog", "two-types", "nonlinear-samples", "nonlinear-types", "curve-shift", "fit-real")
ROSTER = ("factorized", "fully_connected", "fixed_mask", "glm", "ols", "ridge", "lasso", "oracle_mask",
          "pooled_ridge")
LINEAR_EXPERIMENTS = ("linear-homog", "two-types", "curve-shift")
TEACHER_EXPERIMENTS = ("nonlinear-samples", "nonlinear-types")
FORMAT_VERSION = 1

DEFAULT_GRIDS = {
    "factorized": {"mask": (0.0, 1e-4, 1e-3, 1e-2, 1e-1), "weights": (0.0, 1e-4, 1e-3, 1e-2, 1e-1)},
    "oracle_mask": {"mask": (0.0, 1e-4, 1e-3, 1e-2, 1e-1)},
    "fixed_mask": {"weights": (0.0, 1e-4, 1e-3, 1e-2, 1e-1)},
    "fully_connected": {"weight_decay": (1e-4, 1e-3, 1e-2, 1e-1), "activity": (0.0, 1e-3, 1e-2)},
    "glm": {"ridge": (1e-3, 1e-2, 1e-1, 1.0)},
}


class UnsupportedModelError(ValueError):
    """The roster model cannot be fit to this kind of population."""


@dataclass
class ExperimentSpec:
    """A sweep over population sizes or type counts, sample counts and seeds."""

    name: str
    n_samples: tuple[int, ...]
    roster: tuple[str, ...]
    n_neurons: tuple[int, ...] = (1000,)
    n_types: tuple[int, ...] = (1,)
    units_per_type: int = 250
    seeds: tuple[int, ...] = (0, 1, 2)
    n_test: int = 1024
    output_dir: str = "outputs"
    grids: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    student_channels: tuple[int, ...] = (8, 8)
    student_kernel: int = 5
    smoothing_sigma: float = 5.0
    keep_datasets: bool = True
    n_workers: int = 1
    large: bool = False

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        self.n_samples = tuple(int(v) for v in _as_tuple(self.n_samples))
        self.n_neurons = tuple(int(v) for v in _as_tuple(self.n_neurons))
        self.n_types = tuple(int(v) for v in _as_tuple(self.n_types))
        self.seeds = tuple(int(v) for v in _as_tuple(self.seeds))
        self.roster = tuple(str(v) for v in _as_tuple(self.roster))
        self.student_channels = tuple(int(v) for v in _as_tuple(self.student_channels))
        if not self.n_samples or not self.roster or not self.seeds:
            raise ValueError("sweep axes, seeds and roster must be non-empty")
        unknown = [m for m in self.roster if m not in ROSTER]
        if unknown:
            raise ValueError(f"unknown roster models {unknown}")
        if self.name in TEACHER_EXPERIMENTS and not self.n_types:
            raise ValueError("teacher experiments need at least one type count")
        if self.name in LINEAR_EXPERIMENTS and not self.n_neurons:
            raise ValueError("linear experiments need at least one population size")

    def grid_for(self, model: str) -> dict:
        grid = dict(DEFAULT_GRIDS.get(model, {}))
        grid.update(self.grids.get(model, {}))
        return {k: tuple(_as_tuple(v)) for k, v in grid.items()}

    def train_config(self, **extra) -> TrainConfig:
        base = {"batch_size": 64} if self.name in TEACHER_EXPERIMENTS else {}
        base.update(self.train)
        base.update(extra)
        return TrainConfig(**base)

    def cells(self) -> list[dict]:
        """Sweep cells in a fixed order."""
        out = []
        if self.name in TEACHER_EXPERIMENTS:
            axis = [{"n_types": t} for t in self.n_types]
        else:
            axis = [{"n_neurons": n} for n in self.n_neurons]
        for a in axis:
            for s in self.n_samples:
                for seed in self.seeds:
                    out.append({**a, "n_samples": s, "seed": seed})
        if self.large and self.name == "nonlinear-types":
            out.append({"n_types": 128, "n_samples": 2 ** 16, "seed": self.seeds[0]})
        return out

    def fingerprint(self) -> dict:
        """Settings that change results (not output location, roster or parallelism)."""
        d = asdict(self)
        for k in ("output_dir", "roster", "n_workers", "keep_datasets", "large", "n_samples", "n_neurons",
                  "n_types", "seeds"):
            d.pop(k)
        d["grids"] = {m: self.grid_for(m) for m in ROSTER}
        d["format"] = FORMAT_VERSION
        return d


def _as_tuple(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return (v,)


def default_spec(name: str, **overrides) -> ExperimentSpec:
    """The full sweep for each named study."""
    samples = tuple(2 ** k for k in range(6, 13))
    presets = {
        "linear-homog": dict(n_neurons=(1, 10, 100, 1000), n_samples=samples,
                             roster=("ridge", "lasso", "ols", "factorized", "oracle_mask"),
                             grids={"factorized": {"weights": (0.0,)}}),
        "two-types": dict(n_neurons=(1000,), n_samples=(2 ** 14,), roster=("factorized",)),
        "nonlinear-samples": dict(n_types=(4,), units_per_type=250, n_samples=tuple(2 ** k for k in range(8, 13)),
                                  roster=("factorized", "fully_connected", "fixed_mask", "glm")),
        "nonlinear-types": dict(n_types=(1, 2, 4, 8, 16), units_per_type=64, n_samples=(2 ** 12,),
                                roster=("factorized", "fully_connected", "fixed_mask", "glm")),
        "curve-shift": dict(n_neurons=(1, 10), n_samples=samples, roster=("ridge", "pooled_ridge")),
        "fit-real": dict(n_samples=(0,), roster=("factorized",)),
    }
    if name not in presets:
        raise ValueError(f"unknown experiment {name!r}")
    params = presets[name]
    params.update(overrides)
    return ExperimentSpec(name=name, **params)


def cell_hash(spec: ExperimentSpec, cell: dict) -> str:
    payload = json.dumps({"experiment": spec.name, "cell": cell, "settings": spec.fingerprint()},
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# -- populations and datasets -----------------------------------------------
def build_population(spec: ExperimentSpec, cell: dict):
    seed = cell["seed"]
    if spec.name in ("linear-homog", "curve-shift"):
        return homogeneous_population(cell["n_neurons"], seed=seed)
    if spec.name == "two-types":
        return build_two_type_population(cell["n_neurons"] // 2, seed=seed)
    if spec.name in TEACHER_EXPERIMENTS:
        return build_teacher_cnn(cell["n_types"], spec.units_per_type, seed=seed)
    raise ValueError(f"experiment {spec.name!r} has no simulated population")


def cell_dataset(spec: ExperimentSpec, cell: dict, cell_dir: Path | None = None):
    """Simulate (or reload) the dataset of a cell; returns ``(dataset, population)``."""
    pop = build_population(spec, cell)
    path = cell_dir / "dataset.bin" if cell_dir is not None else None
    if path is not None and path.exists():
        ds = load_dataset(path)
        return ds, pop.with_scale(float(ds.meta["output_scale"]))
    stimulus = "pink" if spec.name in TEACHER_EXPERIMENTS else "white"
    ds, pop = make_dataset(pop, cell["n_samples"], spec.n_test, seed=cell["seed"], stimulus=stimulus)
    if path is not None and spec.keep_datasets:
        save_dataset(ds, path)
    return ds, pop


# -- roster fitting -------------------------------------------------------
@dataclass
class FitOutcome:
    prediction: np.ndarray
    sections: dict
    masks: np.ndarray | None = None
    feature_weights: np.ndarray | None = None
    summary: dict = field(default_factory=dict)
    grid_csv: str = ""


def _student_arch(spec: ExperimentSpec, pop) -> Architecture:
    if pop.kind == "linear":
        return Architecture(channels=[pop.n_types], kernel_sizes=[pop.footprint], activation="identity")
    k = spec.student_kernel
    channels = list(spec.student_channels) + [pop.n_types]
    return Architecture(channels=channels, kernel_sizes=[k] * len(channels), activation="relu")


def _check_grid(pop, arch: Architecture):
    if arch.grid(pop.stimulus_shape) != tuple(pop.grid):
        raise UnsupportedModelError(
            f"student footprint {arch.footprint} gives grid {arch.grid(pop.stimulus_shape)}, "
            f"population grid is {tuple(pop.grid)}")


def _network_outcome(result, ds: Dataset) -> FitOutcome:
    model = result.model
    test = ds.split("test")
    masks = model.params["masks"].data.copy() if "masks" in model.params else None
    fw = model.params["feature_weights"].data.copy() if "feature_weights" in model.params else None
    summary = result.report.summary()
    summary["selected"] = {k: v for k, v in result.selected.items()}
    return FitOutcome(model.predict(ds.stimuli[test]), model_to_sections(model), masks, fw, summary,
                      result.to_csv())


def _linear_outcome(fit, ds: Dataset) -> FitOutcome:
    test = ds.split("test")
    sections = {
        "architecture": json.dumps({"kind": fit.regularizer}),
        "param:kernels": fit.kernels, "param:biases": fit.biases, "param:lams": fit.lams,
        "param:locations": fit.locations.astype(np.int64),
    }
    summary = {"selected": {"lam_median": float(np.median(fit.lams))},
               "rank_deficient": int(fit.rank_deficient.sum())}
    return FitOutcome(fit.predict(ds.stimuli[test]), sections, summary=summary)


def fit_roster_model(name: str, spec: ExperimentSpec, ds: Dataset, pop, seed: int) -> FitOutcome:
    """Fit one roster model with its cross-validated grid."""
    grid = spec.grid_for(name)
    cfg = spec.train_config(seed=seed)
    if name in ("ols", "ridge", "lasso", "pooled_ridge"):
        if pop.kind != "linear":
            raise UnsupportedModelError(f"{name} needs a linear population with known crop locations")
        tr, va = train_validation_split(ds, cfg.val_fraction, seed)
        if name == "pooled_ridge":
            fit = fit_pooled_linear(ds, pop.locations, pop.footprint, train_idx=tr, val_idx=va)
        else:
            fit = fit_linear_baseline(ds, pop.locations, pop.footprint, name, train_idx=tr, val_idx=va)
        return _linear_outcome(fit, ds)
    if name == "glm":
        return _network_outcome(fit_glm(ds, cfg, "relu", grid.get("ridge", (1e-2,)), evaluate=False), ds)
    if name == "oracle_mask":
        def build(_, s):
            return oracle_mask_model(pop, ds, seed=s, smoothing_sigma=spec.smoothing_sigma)
        return _network_outcome(grid_search(build, ds, grid, cfg, evaluate=False), ds)

    arch = _student_arch(spec, pop)
    _check_grid(pop, arch)
    shape = pop.stimulus_shape
    if name == "factorized":
        def build(_, s):
            return init_factorized(arch, ds.n_neurons, shape, seed=s, mask_init="sta", dataset=ds,
                                   smoothing_sigma=spec.smoothing_sigma)
    elif name == "fixed_mask":
        def build(_, s):
            return fix_masks_from_sta(init_factorized(arch, ds.n_neurons, shape, seed=s), ds)
    elif name == "fully_connected":
        def build(_, s):
            return fully_connected_model(arch, ds.n_neurons, shape, seed=s)
    else:
        raise UnsupportedModelError(f"unknown roster model {name!r}")
    return _network_outcome(grid_search(build, ds, grid, cfg, evaluate=False), ds)


# -- cells ----------------------------------------------------------------
def _row(spec: ExperimentSpec, cell: dict, model: str, fev_mean, corr_mean, wall) -> dict:
    if spec.name in TEACHER_EXPERIMENTS:
        n_types = cell["n_types"]
        n_neurons = n_types * spec.units_per_type
    else:
        n_neurons = cell["n_neurons"]
        n_types = 2 if spec.name == "two-types" else 1
    return {
        "experiment": spec.name, "model": model, "n_neurons": n_neurons, "n_types": n_types,
        "n_samples": cell["n_samples"], "seed": cell["seed"],
        "fev_mean": fev_mean, "corr_mean": corr_mean, "wall_seconds": wall,
    }


def _finite_or_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def run_cell(spec: ExperimentSpec, cell: dict) -> list[dict]:
    """Fit every roster model on one cell; completed models are read back from disk."""
    root = Path(spec.output_dir) / spec.name / cell_hash(spec, cell)
    root.mkdir(parents=True, exist_ok=True)
    (root / "cell.json").write_text(json.dumps({"experiment": spec.name, **cell}, sort_keys=True, indent=2))
    rows = []
    ds = pop = None
    for name in spec.roster:
        mdir = root / name
        report_path = mdir / "report.json"
        if report_path.exists():
            rep = json.loads(report_path.read_text())
            rows.append(_row(spec, cell, name, _nan(rep.get("fev_mean")), _nan(rep.get("corr_mean")),
                             rep.get("wall_seconds", math.nan)))
            continue
        if ds is None:
            ds, pop = cell_dataset(spec, cell, root)
        mdir.mkdir(exist_ok=True)
        start = time.perf_counter()
        report = {"experiment": spec.name, "model": name, **cell}
        try:
            outcome = fit_roster_model(name, spec, ds, pop, cell["seed"])
        except (AllCellsFailedError, TrainingDivergedError, UnsupportedModelError, FloatingPointError) as exc:
            log.warning("%s %s %s failed: %s", spec.name, cell, name, exc)
            wall = time.perf_counter() - start
            report.update(status="failed", error=str(exc), fev_mean=None, corr_mean=None, wall_seconds=wall)
            report_path.write_text(json.dumps(report, sort_keys=True, indent=2))
            rows.append(_row(spec, cell, name, math.nan, math.nan, wall))
            continue
        wall = time.perf_counter() - start
        metrics = evaluate_predictions(outcome.prediction, ds, ds.split("test"), outcome.masks,
                                       outcome.feature_weights)
        agg = metrics.aggregates()
        write_container(mdir / "model.bin", outcome.sections)
        (mdir / "metrics.csv").write_text(metrics.to_csv())
        if outcome.grid_csv:
            (mdir / "grid.csv").write_text(outcome.grid_csv)
        extra = {}
        if metrics.location_error_px is not None:
            extra["location_within_1px"] = float(np.mean(metrics.location_error_px <= 1))
        if "type_accuracy" in metrics.flags:
            extra["type_accuracy"] = metrics.flags["type_accuracy"]
        report.update(status="ok", fev_mean=_finite_or_none(agg.get("fev_mean")),
                      corr_mean=_finite_or_none(agg.get("corr_mean")), wall_seconds=wall,
                      fit=outcome.summary, **extra)
        report_path.write_text(json.dumps(report, sort_keys=True, indent=2, default=_json_default))
        rows.append(_row(spec, cell, name, agg.get("fev_mean", math.nan), agg.get("corr_mean", math.nan), wall))
    return rows


def _nan(v):
    return math.nan if v is None else float(v)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return None if math.isnan(o) else float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _run_cell_star(args):
    return run_cell(*args)


def run_experiment(spec: ExperimentSpec) -> CurveTable:
    """Run (or resume) every cell of ``spec`` and return the merged curve table.

    The table is also written to ``<output_dir>/<experiment>/curves.csv``.
    Raises :class:`AllCellsFailed` when no fit in the sweep succeeded.
    """
    if spec.name == "fit-real":
        raise ValueError("fit-real runs on a user dataset; use fit_real()")
    cells = spec.cells()
    jobs = [(spec, c) for c in cells]
    workers = min(spec.n_workers, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_star, jobs))
    else:
        results = [run_cell(*j) for j in jobs]
    table = CurveTable()
    for rows in results:
        for r in rows:
            table.add(r)
    table = table.sorted()
    out = Path(spec.output_dir) / spec.name
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves.csv").write_text(table.to_csv())
    if all(math.isnan(r["fev_mean"]) and math.isnan(r["corr_mean"]) for r in table.rows):
        raise AllCellsFailed(table)
    return table


class AllCellsFailed(RuntimeError):
    """No model in the sweep produced a result."""

    def __init__(self, table: CurveTable):
        self.table = table
        super().__init__(f"all {len(table.rows)} experiment cells failed")


def oracle_mask_fit(dataset: Dataset, spec, cfg: TrainConfig | None = None, mask_grid=(0.1,), seed: int = 0):
    """Fit only the location masks on top of the frozen ground-truth kernel.

    Returns the :class:`~nsid.training.GridSearchResult`; its ``report`` is
    the FitReport of the selected cell.
    """
    if spec.kind != "linear":
        raise UnsupportedModelError("oracle mask fitting needs a linear population with a known kernel")
    cfg = TrainConfig(seed=seed) if cfg is None else cfg

    def build(_, s):
        return oracle_mask_model(spec, dataset, seed=s)

    return grid_search(build, dataset, {"mask": tuple(mask_grid)}, cfg, evaluate=False)


def spec_from_config(name: str, config: dict[str, dict], output_dir: str | None = None,
                     n_workers: int | None = None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from parsed config sections.

    ``[experiment]`` holds top-level fields, ``[train]`` TrainConfig
    fields and ``[grid.<model>]`` per-model hyperparameter grids.
    """
    top = dict(config.get("experiment", {}))
    top.pop("name", None)
    grids = {s.split(".", 1)[1]: dict(v) for s, v in config.items() if s.startswith("grid.")}
    train = dict(config.get("train", {}))
    unknown = set(top) - {f for f in ExperimentSpec.__dataclass_fields__}
    if unknown:
        raise ValueError(f"unknown experiment settings {sorted(unknown)}")
    bad_train = set(train) - set(TrainConfig.__dataclass_fields__)
    if bad_train:
        raise ValueError(f"unknown training settings {sorted(bad_train)}")
    if output_dir is not None:
        top["output_dir"] = output_dir
    top["n_workers"] = n_workers if n_workers is not None else top.get("n_workers", os.cpu_count() or 1)
    spec = default_spec(name, **top)
    if grids:
        merged = {m: dict(g) for m, g in spec.grids.items()}
        for m, g in grids.items():
            merged.setdefault(m, {}).update(g)
        spec = replace(spec, grids=merged)
    if train:
        spec = replace(spec, train={**spec.train, **train})
    return spec


__all__ = ["AllCellsFailed", "DEFAULT_GRIDS", "EXPERIMENTS", "ExperimentSpec", "FitOutcome", "ROSTER",
           "UnsupportedModelError", "build_population", "cell_dataset", "cell_hash", "default_spec",
           "fit_roster_model", "oracle_mask_fit", "run_cell", "run_experiment", "spec_from_config"]
