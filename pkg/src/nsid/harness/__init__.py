"""Experiment registry, reports, gradient audit and command-line front end."""

from .audit import FAMILIES, audit_family, gradient_audit
from .config import ConfigError, apply_overrides, output_root, parse_value, read_config
from .experiments import (
    DEFAULT_GRIDS,
    EXPERIMENTS,
    ROSTER,
    AllCellsFailed,
    ExperimentSpec,
    FitOutcome,
    UnsupportedModelError,
    build_population,
    cell_dataset,
    cell_hash,
    default_spec,
    fit_roster_model,
    oracle_mask_fit,
    run_cell,
    run_experiment,
    spec_from_config,
)
from .real import DEFAULT_REAL_GRID, RECIPES, ProtocolError, fit_real, real_architecture, real_grid_cells
from .report import CURVE_COLUMNS, KEY_COLUMNS, REFERENCE_FEV, CurveTable, emit_report, summarize
