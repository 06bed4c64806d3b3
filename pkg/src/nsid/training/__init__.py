"""Losses, penalties, early-stopping training and grid search."""

from .losses import (
    LAPLACIAN,
    NumericalGuardError,
    Penalties,
    data_loss,
    group_sparsity,
    laplace_penalty,
    loss_mse_penalized,
    loss_poisson,
    mse_data,
    poisson_data,
    total_penalty,
)
from .loop import FitReport, TrainConfig, TrainingDivergedError, evaluate_loss, train
from .split import train_validation_split
from .search import (
    DEFAULT_GRIDS,
    PENALTY_KEYS,
    AllCellsFailedError,
    GridRow,
    GridSearchResult,
    cell_config,
    default_grid,
    expand_grid,
    grid_search,
)
