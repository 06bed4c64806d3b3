"""Fitting helpers for the GLM baseline."""

from __future__ import annotations

import numpy as np

from ..groundtruth.dataset import Dataset
from .networks import GLMModel

GLM_RIDGE_GRID = (1e-3, 1e-2, 1e-1, 1.0)


def glm_start(ds: Dataset, nonlinearity: str = "relu", seed: int = 0, weight_std: float = 1e-3) -> GLMModel:
    """GLM with small random filters and a bias that keeps every unit active.

    A rectified unit with zero input has zero gradient, so the bias starts
    at the mean training response plus a small margin.
    """
    stim_shape = ds.stimuli.shape[-2:]
    model = GLMModel(ds.n_neurons, stim_shape, nonlinearity, seed=seed, weight_std=weight_std)
    mean = ds.responses[ds.split("train")].mean(axis=0)
    if nonlinearity == "relu":
        model.params["bias"].data[...] = np.maximum(mean, 0.0) + 0.1
        model.params["offset"].data[...] = -0.1
    elif nonlinearity == "identity":
        model.params["bias"].data[...] = mean
    else:
        # inverse softplus of the mean rate
        rate = np.maximum(mean, 1e-3)
        model.params["bias"].data[...] = np.log(np.expm1(rate))
    return model


def fit_glm(ds: Dataset, cfg=None, nonlinearity: str = "relu", ridge_grid=GLM_RIDGE_GRID, evaluate: bool = True):
    """Ridge-regularized GLM fit by Adam with early stopping, ridge strength cross-validated.

    ``cfg`` is a :class:`~nsid.training.TrainConfig`; its loss picks MSE or
    Poisson. Returns a :class:`~nsid.training.GridSearchResult`.
    """
    from ..training import TrainConfig, grid_search

    cfg = TrainConfig() if cfg is None else cfg

    def build(_, seed):
        return glm_start(ds, nonlinearity, seed)

    return grid_search(build, ds, {"ridge": tuple(ridge_grid)}, cfg, evaluate=evaluate)
