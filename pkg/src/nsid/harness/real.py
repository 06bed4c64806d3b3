"""Fitting recipe for recorded datasets with repeated test presentations."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from ..groundtruth import load_dataset
from ..groundtruth.dataset import Dataset
from ..metrics import evaluate_predictions
from ..models import Architecture, ConfigurationError, init_factorized
from ..training import TrainConfig, grid_search

RECIPES = ("v1-poisson",)

DEFAULT_REAL_GRID = {
    "layers": (1, 2, 3),
    "feature_maps": (16, 32, 48),
    "first_kernel": (9, 13),
    "later_kernel": (3, 8),
    "laplace": (1e-2, 1e-1),
    "group": (1e-3, 1e-2),
    "mask": (1e-3, 1e-2),
    "weights": (1e-3, 1e-2),
}
ARCH_KEYS = ("layers", "feature_maps", "first_kernel", "later_kernel")


class ProtocolError(ValueError):
    """The dataset cannot be evaluated with the requested protocol."""


def real_architecture(layers: int, feature_maps: int, first_kernel: int, later_kernel: int) -> Architecture:
    """Softplus CNN with a softplus output and per-neuron bias."""
    kernels = [int(first_kernel)] + [int(later_kernel)] * (int(layers) - 1)
    return Architecture(channels=[int(feature_maps)] * int(layers), kernel_sizes=kernels,
                        activation="softplus", output="softplus", bias=True)


def real_grid_cells(grid: dict, stimulus_shape) -> list[dict]:
    """Cartesian product of ``grid`` minus architectures that do not fit the stimulus.

    Single-layer networks ignore ``later_kernel``, so only one such variant is kept.
    """
    keys = list(grid)
    cells, seen = [], set()
    for combo in itertools.product(*(tuple(grid[k]) for k in keys)):
        cell = dict(zip(keys, combo))
        if cell.get("layers", 1) == 1 and "later_kernel" in cell:
            cell["later_kernel"] = grid["later_kernel"][0]
        key = tuple(sorted(cell.items()))
        if key in seen:
            continue
        seen.add(key)
        arch = real_architecture(*(cell.get(k, DEFAULT_REAL_GRID[k][0]) for k in ARCH_KEYS))
        try:
            arch.grid(stimulus_shape)
        except ConfigurationError:
            continue
        cells.append(cell)
    return cells


def fit_real(dataset: str | Path | Dataset, recipe: str = "v1-poisson", grid: dict | None = None,
             cfg: TrainConfig | None = None):
    """Grid-search the Poisson/softplus factorized CNN on a dataset with test repeats.

    Returns ``(report, metrics, search)``: the selected model's FitReport
    (with ``recipe`` set and the mean test correlation in ``metrics``), its
    :class:`~nsid.metrics.MetricReport`, and the full grid-search result.
    """
    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe {recipe!r}; choose from {', '.join(RECIPES)}")
    ds = load_dataset(dataset) if not isinstance(dataset, Dataset) else dataset
    if ds.repeats is None or ds.repeats.ndim != 3 or ds.repeats.shape[1] < 2:
        raise ProtocolError("test correlation needs at least two repeats per test stimulus")
    test = ds.split("test")
    if len(test) != ds.repeats.shape[0]:
        raise ProtocolError("repeats must cover exactly the test split")
    grid = DEFAULT_REAL_GRID if grid is None else grid
    shape = tuple(ds.stimuli.shape[-2:])
    cells = real_grid_cells(grid, shape)
    if not cells:
        raise ConfigurationError(f"no architecture in the grid fits {shape} stimuli")
    cfg = TrainConfig(loss="poisson") if cfg is None else cfg
    if cfg.loss != "poisson":
        raise ValueError("the v1-poisson recipe trains with the Poisson loss")

    def build(arch_params, seed):
        arch = real_architecture(*(arch_params.get(k, DEFAULT_REAL_GRID[k][0]) for k in ARCH_KEYS))
        return init_factorized(arch, ds.n_neurons, shape, seed=seed, mask_init="sta", dataset=ds)

    search = grid_search(build, ds, cells, cfg)
    model = search.model
    metrics = evaluate_predictions(model.predict(ds.stimuli[test]), ds, test,
                                   masks=model.params["masks"].data, feature_weights=None)
    report = search.report
    report.recipe = recipe
    report.metrics = {"corr_mean": float(np.mean(metrics.corr)), **metrics.aggregates()}
    return report, metrics, search
