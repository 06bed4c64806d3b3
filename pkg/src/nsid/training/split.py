"""Train/validation splitting."""

from __future__ import annotations

import numpy as np

from ..groundtruth.dataset import Dataset


def train_validation_split(ds: Dataset, val_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Training and validation indices.

    An explicit ``validation`` split in the dataset is used as is.
    Otherwise the training indices are shuffled with ``seed`` and the last
    ``val_fraction`` of them are held out.
    """
    train = ds.split("train")
    if len(ds.split("validation")):
        return train, ds.split("validation")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(train)
    n_val = max(1, int(round(val_fraction * len(train))))
    return np.sort(perm[:-n_val]), np.sort(perm[-n_val:])
