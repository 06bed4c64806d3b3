"""Cross-validated grid search over penalties and architecture choices."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from ..groundtruth.dataset import Dataset
from ..metrics import evaluate_predictions
from .losses import NumericalGuardError
from .loop import FitReport, TrainConfig, TrainingDivergedError, train
from .split import train_validation_split

log = logging.getLogger(__name__)

PENALTY_KEYS = ("mask", "weights", "laplace", "group", "weight_decay", "activity", "ridge")
DEFAULT_GRIDS = {
    "mask": (0.0, 1e-4, 1e-3, 1e-2, 1e-1),
    "weights": (0.0, 1e-4, 1e-3, 1e-2, 1e-1),
    "laplace": (0.0, 1e-3, 1e-2, 1e-1),
    "group": (0.0, 1e-3, 1e-2, 1e-1),
}


class AllCellsFailedError(RuntimeError):
    """Every cell of a grid search diverged or failed."""

    def __init__(self, rows: list[dict]):
        self.rows = rows
        super().__init__(f"all {len(rows)} grid cells failed")


@dataclass
class GridRow:
    hyperparams: dict
    val_loss: float
    test_fev_mean: float
    test_corr_mean: float
    steps_run: int
    status: str

    def as_dict(self) -> dict:
        return {**self.hyperparams, "val_loss": self.val_loss, "test_fev_mean": self.test_fev_mean,
                "test_corr_mean": self.test_corr_mean, "steps_run": self.steps_run, "status": self.status}


@dataclass
class GridSearchResult:
    model: object
    report: FitReport
    rows: list[GridRow] = field(default_factory=list)
    best_index: int = 0

    @property
    def selected(self) -> dict:
        return self.rows[self.best_index].hyperparams

    def to_csv(self) -> str:
        keys = list(self.rows[0].hyperparams) if self.rows else []
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(keys + ["val_loss", "test_fev_mean", "test_corr_mean", "steps_run", "status"])
        for row in self.rows:
            writer.writerow([_fmt(row.hyperparams[k]) for k in keys]
                            + [_fmt(row.val_loss), _fmt(row.test_fev_mean), _fmt(row.test_corr_mean),
                               row.steps_run, row.status])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (list, tuple)):
        return "x".join(str(x) for x in v)
    return str(v)


def expand_grid(grid) -> list[dict]:
    """Cartesian product of ``{name: values}`` in key order.

    A list of dicts is taken as an explicit list of cells.
    """
    if not grid:
        raise ValueError("grid must not be empty")
    if isinstance(grid, (list, tuple)):
        cells = [dict(c) for c in grid]
        if any(set(c) != set(cells[0]) for c in cells):
            raise ValueError("explicit grid cells must share the same keys")
        return cells
    keys = list(grid)
    for k in keys:
        if len(grid[k]) == 0:
            raise ValueError(f"grid axis {k!r} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cell_config(cfg: TrainConfig, hyperparams: dict, index: int) -> TrainConfig:
    """Training config of one grid cell: penalties overridden, seed offset by ``index``."""
    pen = replace(cfg.penalties, **{k: float(v) for k, v in hyperparams.items() if k in PENALTY_KEYS})
    return replace(cfg, penalties=pen, seed=cfg.seed + index)


def _test_means(model, ds: Dataset) -> tuple[float, float]:
    test = ds.split("test")
    if len(test) < 3:
        return math.nan, math.nan
    rep = evaluate_predictions(model.predict(ds.stimuli[test]), ds, test)
    agg = rep.aggregates()
    return agg.get("fev_mean", math.nan), agg.get("corr_mean", math.nan)


def _run_cell(build_model, ds, hyperparams, cfg, index, train_idx, val_idx, evaluate):
    ccfg = cell_config(cfg, hyperparams, index)
    arch_params = {k: v for k, v in hyperparams.items() if k not in PENALTY_KEYS}
    try:
        model = build_model(arch_params, ccfg.seed)
        model, report = train(model, ds, ccfg, train_idx, val_idx)
    except (TrainingDivergedError, NumericalGuardError, FloatingPointError) as exc:
        log.warning("grid cell %d %s failed: %s", index, hyperparams, exc)
        return None, None, GridRow(hyperparams, math.nan, math.nan, math.nan, getattr(exc, "step", 0), "failed")
    fev_mean, corr_mean = _test_means(model, ds) if evaluate else (math.nan, math.nan)
    row = GridRow(hyperparams, report.best_val_loss, fev_mean, corr_mean, report.steps_run, report.status)
    return model, report, row


def grid_search(build_model, ds: Dataset, grid, cfg: TrainConfig, evaluate: bool = True,
                n_workers: int = 1) -> GridSearchResult:
    """Train one model per grid cell and keep the one with the lowest validation loss.

    ``build_model(arch_params, seed)`` returns a fresh model; ``arch_params``
    holds the grid entries that are not penalty strengths. Every cell shares
    the same train/validation split, derived from ``cfg.seed``, so their
    validation losses are comparable; cell ``i`` trains with seed
    ``cfg.seed + i``. Cells that diverge are recorded as failed.
    """
    cells = expand_grid(grid)
    train_idx, val_idx = train_validation_split(ds, cfg.val_fraction, cfg.seed)
    args = [(build_model, ds, hp, cfg, i, train_idx, val_idx, evaluate) for i, hp in enumerate(cells)]
    if n_workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_cell_star, args))
    else:
        results = [_run_cell(*a) for a in args]

    rows = [r for _, _, r in results]
    ok = [i for i, r in enumerate(rows) if r.status == "ok"]
    if not ok:
        raise AllCellsFailedError([r.as_dict() for r in rows])
    best = min(ok, key=lambda i: (rows[i].val_loss, i))
    model, report, _ = results[best]
    report.selected = dict(cells[best])
    return GridSearchResult(model, report, rows, best)


def _run_cell_star(args):
    return _run_cell(*args)


def default_grid(keys=("mask", "weights")) -> dict:
    return {k: DEFAULT_GRIDS[k] for k in keys}


__all__ = ["AllCellsFailedError", "DEFAULT_GRIDS", "GridRow", "GridSearchResult", "PENALTY_KEYS",
           "cell_config", "default_grid", "expand_grid", "grid_search"]
