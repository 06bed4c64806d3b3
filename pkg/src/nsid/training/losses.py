"""Data terms and parameter penalties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Tensor, as_tensor, conv2d, maximum, pad2d, reshape, tabs, tlog, tsqrt, tsum

LAPLACIAN = np.array([[0.5, 1.0, 0.5], [1.0, -6.0, 1.0], [0.5, 1.0, 0.5]])
RATE_FLOOR = 1e-8


class NumericalGuardError(FloatingPointError):
    pass


@dataclass
class Penalties:
    """Regularization strengths; each model uses the subset that applies to it."""

    mask: float = 0.0
    weights: float = 0.0
    laplace: float = 0.0
    group: float = 0.0
    weight_decay: float = 0.0
    activity: float = 0.0
    ridge: float = 0.0
    group_axes: str = "spatial"

    def __post_init__(self):
        for name in ("mask", "weights", "laplace", "group", "weight_decay", "activity", "ridge"):
            if getattr(self, name) < 0:
                raise ValueError(f"penalty {name} must be >= 0")
        if self.group_axes not in ("spatial", "channel"):
            raise ValueError("group_axes must be 'spatial' or 'channel'")


def mse_data(pred: Tensor, target) -> Tensor:
    """Squared error summed over neurons and averaged over the batch only."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return tsum(diff * diff) * (1.0 / pred.shape[0])


def poisson_data(pred_rate: Tensor, target) -> Tensor:
    """``(1/B) * sum(rate - y * log(rate))`` with the rate floored at 1e-8."""
    target = as_tensor(target)
    if pred_rate.shape != target.shape:
        raise ValueError(f"prediction {pred_rate.shape} and target {target.shape} differ")
    if not np.all(np.isfinite(pred_rate.data)):
        raise NumericalGuardError("non-finite predicted rate")
    rate = maximum(pred_rate, RATE_FLOOR)
    return (tsum(rate) - tsum(target * tlog(rate))) * (1.0 / pred_rate.shape[0])


def l1(t: Tensor) -> Tensor:
    return tsum(tabs(t))


def l2(t: Tensor) -> Tensor:
    return tsum(t * t)


def laplace_penalty(kernels: Tensor, lam: float) -> Tensor:
    """``lam * sum((W * L)^2)`` with zero-padded same-size convolution per channel pair."""
    O, C, kh, kw = kernels.shape
    if kh < 3 or kw < 3:
        raise ValueError("laplace penalty needs kernels of at least 3x3")
    flat = reshape(kernels, (O * C, 1, kh, kw))
    smooth = conv2d(pad2d(flat, 1), Tensor(LAPLACIAN[None, None]), method="direct")
    return tsum(smooth * smooth) * lam


def group_sparsity(kernels: Tensor, lam: float, axes: str = "spatial") -> Tensor:
    """Sum of L2 norms of kernel groups.

    ``spatial``: one group per spatial position, norm over all channel pairs.
    ``channel``: one group per (output, input) channel pair, norm over space.
    """
    sq = kernels * kernels
    if axes == "spatial":
        norms = tsqrt(tsum(sq, axis=(0, 1)))
    elif axes == "channel":
        norms = tsqrt(tsum(sq, axis=(2, 3)))
    else:
        raise ValueError(f"unknown group axes {axes!r}")
    return tsum(norms) * lam


def loss_mse_penalized(pred: Tensor, target, model=None, lam_m: float = 0.0, lam_w: float = 0.0) -> Tensor:
    loss = mse_data(pred, target)
    if model is not None:
        loss = loss + total_penalty(model, Penalties(mask=lam_m, weights=lam_w), pred)
    return loss


def loss_poisson(pred_rate: Tensor, target, model=None, penalties: Penalties | None = None) -> Tensor:
    loss = poisson_data(pred_rate, target)
    if model is not None and penalties is not None:
        loss = loss + total_penalty(model, penalties, pred_rate)
    return loss


def total_penalty(model, p: Penalties, pred: Tensor | None = None) -> Tensor | float:
    """Sum of every penalty that applies to ``model``'s parameter groups."""
    groups = {k: [t for t in v if t.requires_grad] for k, v in model.penalty_groups().items()}
    terms = []
    if p.mask and "mask" in groups:
        terms += [l1(t) * p.mask for t in groups["mask"]]
    if p.weights and "feature_weights" in groups:
        terms += [l1(t) * p.weights for t in groups["feature_weights"]]
    kernels = groups.get("conv_kernels", [])
    if p.laplace:
        terms += [laplace_penalty(k, p.laplace) for k in kernels if min(k.shape[-2:]) >= 3]
    if p.group:
        terms += [group_sparsity(k, p.group, p.group_axes) for k in kernels]
    if p.weight_decay and "readout" in groups:
        terms += [l2(t) * p.weight_decay for t in groups["readout"]]
    if p.activity and "activity" in groups and pred is not None:
        terms.append(l1(pred) * (p.activity / pred.shape[0]))
    if p.ridge and "ridge" in groups:
        terms += [l2(t) * p.ridge for t in groups["ridge"]]
    if not terms:
        return 0.0
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def data_loss(kind: str, pred: Tensor, target) -> Tensor:
    if kind == "mse":
        return mse_data(pred, target)
    if kind == "poisson":
        return poisson_data(pred, target)
    raise ValueError(f"unknown loss {kind!r}")
