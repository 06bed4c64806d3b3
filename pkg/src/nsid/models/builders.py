"""Constructors for the factorized model and its readout variants."""

from __future__ import annotations

import numpy as np

from ..groundtruth.dataset import Dataset
from ..groundtruth.populations import PopulationSpec
from .networks import Architecture, ConfigurationError, FactorizedModel, FullyConnectedModel, GLMModel
from .sta import init_masks_from_sta, one_hot_masks, spike_triggered_average, sta_peak_locations


def init_factorized(arch: Architecture, n_neurons: int, stimulus_shape, seed: int = 0,
                    mask_init="random", dataset: Dataset | None = None,
                    smoothing_sigma: float = 5.0, kernel_std: float = 0.01) -> FactorizedModel:
    """Factorized model with kernels ~ N(0, kernel_std) and weights ~ N(1/K, 0.01).

    ``mask_init`` is ``"random"`` (N(0, 0.001) everywhere), ``"sta"``
    (peak at the smoothed STA maximum; needs ``dataset``) or an explicit
    ``[N, gh, gw]`` array.
    """
    grid = arch.grid(tuple(stimulus_shape))
    if isinstance(mask_init, str):
        if mask_init == "random":
            masks = None
        elif mask_init == "sta":
            if dataset is None:
                raise ConfigurationError("STA mask initialization needs a dataset")
            masks, _ = init_masks_from_sta(dataset, grid, arch.footprint, smoothing_sigma, seed=seed + 1)
        else:
            raise ConfigurationError(f"unknown mask_init {mask_init!r}")
    else:
        masks = np.asarray(mask_init)
    return FactorizedModel(arch, n_neurons, stimulus_shape, seed=seed, kernel_std=kernel_std, masks=masks)


def fix_masks_from_sta(model: FactorizedModel, dataset: Dataset, smoothing_sigma: float = 0.0) -> FactorizedModel:
    """Replace the masks by frozen one-hot masks at each neuron's strongest STA pixel."""
    sta = spike_triggered_average(dataset)
    locs = sta_peak_locations(sta, model.grid, model.arch.footprint, smoothing_sigma)
    model.params["masks"].data[...] = one_hot_masks(locs, model.grid)
    model.freeze("masks")
    return model


def oracle_mask_model(spec: PopulationSpec, dataset: Dataset, seed: int = 0,
                      smoothing_sigma: float = 5.0) -> FactorizedModel:
    """Single-kernel factorized model whose conv kernel is the true kernel, frozen.

    Only the location masks remain trainable.
    """
    if spec.kind != "linear":
        raise ValueError("oracle mask fitting is only supported for linear populations")
    first = spec.kernels[0]
    if not np.all(spec.kernels == first[None]):
        raise ValueError("oracle mask fitting needs a homogeneous population (one shared kernel)")
    arch = Architecture(channels=[1], kernel_sizes=[first.shape[0]], activation="identity")
    model = init_factorized(arch, spec.n_neurons, spec.stimulus_shape, seed=seed, mask_init="sta",
                            dataset=dataset, smoothing_sigma=smoothing_sigma)
    model.params["conv0.kernel"].data[...] = first[None, None]
    model.params["feature_weights"].data[...] = 1.0
    model.freeze("conv0.kernel", "conv0.gamma", "conv0.beta", "feature_weights")
    return model


def fully_connected_model(arch: Architecture, n_neurons: int, stimulus_shape, seed: int = 0) -> FullyConnectedModel:
    return FullyConnectedModel(arch, n_neurons, stimulus_shape, seed=seed)


def glm_model(n_neurons: int, stimulus_shape, nonlinearity: str = "relu", seed: int = 0) -> GLMModel:
    return GLMModel(n_neurons, stimulus_shape, nonlinearity, seed=seed)
