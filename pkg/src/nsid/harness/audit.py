"""Finite-difference audit of every model family's loss gradient."""

from __future__ import annotations

import numpy as np

from ..models import Architecture, FactorizedModel, FullyConnectedModel, GLMModel
from ..numerics import grad_check, nudge_from_kinks
from ..training import Penalties, data_loss, total_penalty

FAMILIES = ("factorized_mse_l1", "factorized_poisson", "fully_connected", "glm")


def _family_case(family: str, seed: int):
    """A small random model, data and penalty setting for one audit point."""
    rng = np.random.default_rng(seed)
    B, N, side = 6, 4, 10
    x = rng.normal(size=(B, 1, side, side))
    if family == "factorized_mse_l1":
        arch = Architecture(channels=[3, 2], kernel_sizes=[3, 3], activation="relu")
        model = FactorizedModel(arch, N, (side, side), seed=seed, kernel_std=0.5, weight_std=0.3)
        y = rng.normal(size=(B, N))
        return model, x, y, "mse", Penalties(mask=0.05, weights=0.02)
    if family == "factorized_poisson":
        arch = Architecture(channels=[3, 2], kernel_sizes=[3, 3], activation="softplus", output="softplus",
                            bias=True)
        model = FactorizedModel(arch, N, (side, side), seed=seed, kernel_std=0.5, weight_std=0.3)
        y = rng.poisson(1.0, size=(B, N)).astype(float)
        return model, x, y, "poisson", Penalties(mask=0.05, weights=0.02, laplace=0.01, group=0.03)
    if family == "fully_connected":
        arch = Architecture(channels=[2], kernel_sizes=[3], activation="relu")
        model = FullyConnectedModel(arch, N, (side, side), seed=seed, kernel_std=0.5, readout_std=0.1)
        y = rng.normal(size=(B, N))
        return model, x, y, "mse", Penalties(weight_decay=0.01, activity=0.02)
    if family == "glm":
        model = GLMModel(N, (side, side), "relu", seed=seed, weight_std=0.1)
        model.params["bias"].data[...] = rng.normal(0.5, 0.1, size=N)
        y = rng.normal(size=(B, N))
        return model, x, y, "mse", Penalties(ridge=0.01)
    raise ValueError(f"unknown family {family!r}")


def audit_family(family: str, n_points: int = 10, seed: int = 0, max_entries: int = 32) -> float:
    """Largest relative gradient error over ``n_points`` random parameter draws."""
    worst = 0.0
    for point in range(n_points):
        model, x, y, loss_kind, pen = _family_case(family, seed * 1000 + point)
        params = [t for _, t in model.trainable()]
        for t in params:
            # keep L1 and absolute-value terms away from their kinks
            t.data[...] = nudge_from_kinks(t.data)

        def loss():
            pred = model.forward(x, "train")
            value = data_loss(loss_kind, pred, y)
            penalty = total_penalty(model, pen, pred)
            return value + penalty if not isinstance(penalty, float) else value

        worst = max(worst, grad_check(loss, params, max_entries=max_entries, seed=point))
    return worst


def gradient_audit(n_points: int = 10, seed: int = 0) -> dict[str, float]:
    """``{family: max relative error}`` for every model family."""
    return {f: audit_family(f, n_points, seed) for f in FAMILIES}
