"""Central finite-difference audit of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def nudge_from_kinks(values: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Push entries with ``|x| < margin`` out to ``±margin`` (sign kept, 0 -> +)."""
    out = np.array(values, dtype=np.float64, copy=True)
    small = np.abs(out) < margin
    out[small] = np.where(out[small] < 0, -margin, margin)
    return out


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = 64,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and numeric gradients.

    ``fn`` takes no arguments and rebuilds the scalar loss from the current
    values of ``inputs``. For each input tensor the error is
    ``max|a - n| / max(max|a|, max|n|, 1e-8)`` over the probed entries;
    the largest of these is returned. Tensors with more than ``max_entries``
    elements are probed at a seeded random subset.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            idx = np.arange(flat.size)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            num[j] = (fp - fm) / (2.0 * h)
        ana = a.reshape(-1)[idx]
        scale = max(np.max(np.abs(ana)), np.max(np.abs(num)), 1e-8)
        worst = max(worst, float(np.max(np.abs(ana - num)) / scale))
    for t in inputs:
        t.grad = None
    return worst
