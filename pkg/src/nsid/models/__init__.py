"""Factorized-readout CNN, readout baselines, GLM and linear regression baselines."""

from .builders import fix_masks_from_sta, fully_connected_model, glm_model, init_factorized, oracle_mask_model
from .fitting import GLM_RIDGE_GRID, fit_glm, glm_start
from .linear import (
    LinearBaseline,
    LinearBaselines,
    crop_patches,
    fit_linear_baseline,
    fit_pooled_linear,
    lasso_objective,
    lasso_prox_grad,
    soft_threshold,
)
from .networks import (
    FC_CAPACITY_LIMIT,
    Architecture,
    CapacityError,
    ConfigurationError,
    FactorizedModel,
    FullyConnectedModel,
    GLMModel,
    Model,
    model_from_sections,
    model_to_sections,
)
from .sta import init_masks_from_sta, one_hot_masks, spike_triggered_average, sta_peak_locations
