"""End-to-end synthetic dataset generation."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .populations import PopulationSpec, add_poisson_like_noise, calibrate_scale, simulate
from .stimuli import gaussian_white_stimuli, natural_like_stimuli


def draw_stimuli(kind: str, count: int, shape: tuple[int, int], seed: int, image_dir=None) -> np.ndarray:
    if kind == "white":
        return gaussian_white_stimuli(count, shape[0], shape[1], seed)
    if kind == "pink":
        return natural_like_stimuli(count, shape[0], shape[1], seed, "pink_noise")
    if kind == "images":
        return natural_like_stimuli(count, shape[0], shape[1], seed, "image_dir", image_dir)
    raise ValueError(f"unknown stimulus kind {kind!r}")


def make_dataset(
    spec: PopulationSpec,
    n_train: int,
    n_test: int,
    seed: int,
    stimulus: str = "white",
    target_mean_abs: float = 0.1,
    n_calibration: int = 2048,
    n_repeats: int = 0,
    image_dir=None,
) -> tuple[Dataset, PopulationSpec]:
    """Simulate a calibrated, noisy dataset from ``spec``.

    The output scale is fitted on a separate calibration draw, then applied
    to ``n_train + n_test`` fresh stimuli. Returns the dataset and the
    calibrated population.
    """
    s_stim, s_cal, s_noise, s_rep = np.random.SeedSequence(seed).generate_state(4)
    cal = draw_stimuli(stimulus, n_calibration, spec.stimulus_shape, int(s_cal), image_dir)
    spec = spec.with_scale(calibrate_scale(spec, cal, target_mean_abs))
    stimuli = draw_stimuli(stimulus, n_train + n_test, spec.stimulus_shape, int(s_stim), image_dir)
    rates = simulate(spec, stimuli)
    responses = add_poisson_like_noise(rates, int(s_noise))
    test = np.arange(n_train, n_train + n_test)
    repeats = None
    if n_repeats:
        repeats = np.stack(
            [add_poisson_like_noise(rates[test], int(s_rep) + r) for r in range(n_repeats)], axis=1
        )
    meta = {
        "kind": spec.kind, "n_types": spec.n_types, "grid": list(spec.grid),
        "footprint": spec.footprint, "stimulus": stimulus, "seed": int(seed),
        "population_seed": int(spec.seed), "output_scale": spec.output_scale,
    }
    ds = Dataset(
        stimuli=stimuli, responses=responses, rates=rates,
        splits={"train": np.arange(n_train), "test": test}, repeats=repeats,
        locations=spec.locations.copy(), type_ids=spec.type_ids.copy(), meta=meta,
    )
    return ds, spec
