"""Center-surround receptive-field kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DoGParams:
    center_sigma: float = 2.0
    surround_sigma: float = 4.0
    surround_gain: float = 1.0
    kernel_size: int = 17

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if not (self.surround_sigma > self.center_sigma > 0):
            raise ValueError("need surround_sigma > center_sigma > 0")


def _gaussian(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def make_dog_kernel(p: DoGParams) -> np.ndarray:
    """Unit-L2-norm difference of two unit-sum Gaussians."""
    k = _gaussian(p.kernel_size, p.center_sigma) - p.surround_gain * _gaussian(p.kernel_size, p.surround_sigma)
    return k / np.linalg.norm(k)
