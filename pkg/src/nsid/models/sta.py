"""Spike-triggered averages and location-mask initialization."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from ..groundtruth.dataset import Dataset


def spike_triggered_average(ds: Dataset, indices: np.ndarray | None = None) -> np.ndarray:
    """Response-weighted mean stimulus per neuron, ``[N, H, W]``.

    Normalized by the summed absolute response; silent neurons give zeros.
    """
    idx = ds.split("train") if indices is None else np.asarray(indices)
    if len(idx) < 2:
        raise ValueError("STA needs at least two samples")
    stim = ds.stimuli[idx].sum(axis=1)  # collapse channels
    y = ds.responses[idx]
    S, H, W = stim.shape
    sta = (y.T @ stim.reshape(S, H * W)).reshape(-1, H, W)
    norm = np.abs(y).sum(axis=0)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm[:, None, None] > 0, sta / safe[:, None, None], 0.0)


def sta_peak_locations(sta: np.ndarray, grid: tuple[int, int], footprint: int,
                       smoothing_sigma: float = 5.0) -> np.ndarray:
    """Grid location of each neuron's strongest (smoothed) STA pixel.

    The magnitude ``|STA|`` is smoothed with a Gaussian so that
    center-surround filters with near-zero spatial mean are not cancelled
    out; the maximum pixel is then mapped from stimulus to feature-grid coordinates by
    subtracting half the receptive footprint.
    """
    locs = np.empty((len(sta), 2), dtype=np.int64)
    half = footprint // 2
    for n, s in enumerate(sta):
        mag = np.abs(s)
        sm = gaussian_filter(mag, smoothing_sigma) if smoothing_sigma > 0 else mag
        r, c = np.unravel_index(np.argmax(sm), sm.shape)
        locs[n] = (min(max(r - half, 0), grid[0] - 1), min(max(c - half, 0), grid[1] - 1))
    return locs


def init_masks_from_sta(ds: Dataset, grid: tuple[int, int], footprint: int, smoothing_sigma: float = 5.0,
                        seed: int = 0, noise_std: float = 0.001, indices=None) -> tuple[np.ndarray, np.ndarray]:
    """Masks with one peak pixel at the STA location and small noise elsewhere.

    The peak is set to the standard deviation of the neuron's training
    responses, matching the unit variance of batch-normalized features.
    """
    idx = ds.split("train") if indices is None else np.asarray(indices)
    sta = spike_triggered_average(ds, idx)
    locs = sta_peak_locations(sta, grid, footprint, smoothing_sigma)
    rng = np.random.default_rng(seed)
    masks = rng.normal(0.0, noise_std, size=(len(sta), grid[0], grid[1]))
    sd = ds.responses[idx].std(axis=0)
    n = np.arange(len(sta))
    masks[n, locs[:, 0], locs[:, 1]] = sd
    return masks, locs


def one_hot_masks(locations: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    masks = np.zeros((len(locations), grid[0], grid[1]))
    masks[np.arange(len(locations)), locations[:, 0], locations[:, 1]] = 1.0
    return masks
