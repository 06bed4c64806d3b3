"""Simulated neuron populations with known receptive fields.

Two kinds are supported. ``linear`` neurons take the dot product of a
per-neuron kernel with the stimulus patch at the neuron's location.
``teacher_cnn`` neurons read out a fixed random two-layer ReLU network at
one channel (the cell type) and one position.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..numerics import Tensor, conv2d
from .kernels import DoGParams, make_dog_kernel


class DegeneratePopulationError(ValueError):
    """Raised when a population produces identically zero rates."""


class StimulusTooSmallError(ValueError):
    pass


@dataclass
class PopulationSpec:
    kind: str
    n_types: int
    locations: np.ndarray  # [N, 2] (row, col) on the output grid
    type_ids: np.ndarray  # [N]
    grid: tuple[int, int]
    stimulus_shape: tuple[int, int]
    kernels: np.ndarray | None = None  # linear: [N, kh, kw]
    teacher_weights: list[np.ndarray] = field(default_factory=list)
    teacher_channels: np.ndarray | None = None  # channel per type
    output_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.int64).reshape(-1, 2)
        self.type_ids = np.asarray(self.type_ids, dtype=np.int64)
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")
        if len(self.type_ids) and (self.type_ids.min() < 0 or self.type_ids.max() >= self.n_types):
            raise ValueError("type_ids must lie in [0, n_types)")
        gh, gw = self.grid
        loc = self.locations
        if len(loc) and (loc.min() < 0 or loc[:, 0].max() >= gh or loc[:, 1].max() >= gw):
            raise ValueError(f"locations must lie inside the {gh}x{gw} output grid")

    @property
    def n_neurons(self) -> int:
        return len(self.type_ids)

    @property
    def footprint(self) -> int:
        """Receptive-field side length in stimulus pixels."""
        return self.stimulus_shape[0] - self.grid[0] + 1

    def with_scale(self, scale: float) -> "PopulationSpec":
        return replace(self, output_scale=float(scale))


def _uniform_locations(rng: np.random.Generator, n: int, grid: tuple[int, int]) -> np.ndarray:
    return np.stack([rng.integers(grid[0], size=n), rng.integers(grid[1], size=n)], axis=1)


def homogeneous_population(n_neurons: int, seed: int, stimulus_size: int = 48,
                           dog: DoGParams = DoGParams()) -> PopulationSpec:
    """Identical center-surround neurons at random locations."""
    kernel = make_dog_kernel(dog)
    grid = (stimulus_size - dog.kernel_size + 1,) * 2
    rng = np.random.default_rng(seed)
    return PopulationSpec(
        kind="linear", n_types=1,
        locations=_uniform_locations(rng, n_neurons, grid),
        type_ids=np.zeros(n_neurons, dtype=np.int64),
        grid=grid, stimulus_shape=(stimulus_size, stimulus_size),
        kernels=np.repeat(kernel[None], n_neurons, axis=0), seed=seed,
    )


def build_two_type_population(n_per_type: int, seed: int, stimulus_size: int = 48, kernel_size: int = 17,
                              sigma_means=(1.5, 3.0), sigma_sds=(0.15, 0.3)) -> PopulationSpec:
    """Two center-surround types differing in mean size, heterogeneous within type."""
    if n_per_type < 1:
        raise ValueError("n_per_type must be >= 1")
    rng = np.random.default_rng(seed)
    grid = (stimulus_size - kernel_size + 1,) * 2
    kernels, types = [], []
    for t, (mu, sd) in enumerate(zip(sigma_means, sigma_sds)):
        sigmas = np.maximum(rng.normal(mu, sd, size=n_per_type), 0.1)
        for s in sigmas:
            kernels.append(make_dog_kernel(DoGParams(s, 2.0 * s, 1.0, kernel_size)))
            types.append(t)
    n = len(types)
    return PopulationSpec(
        kind="linear", n_types=len(sigma_means),
        locations=_uniform_locations(rng, n, grid), type_ids=np.array(types),
        grid=grid, stimulus_shape=(stimulus_size, stimulus_size),
        kernels=np.stack(kernels), seed=seed,
    )


TEACHER_KERNELS = (5, 9)


def build_teacher_cnn(n_types: int, units_per_type: int, seed: int, stimulus_size: int = 44) -> PopulationSpec:
    """Fixed random two-layer ReLU network; selected channels act as cell types."""
    if n_types < 1:
        raise ValueError("n_types must be >= 1")
    k1, k2 = TEACHER_KERNELS
    side = stimulus_size - k1 - k2 + 2
    if side < 8:
        raise StimulusTooSmallError(f"teacher output grid {side}x{side} is smaller than 8x8")
    rng = np.random.default_rng(seed)
    c1, c2 = 16, max(n_types, 16)
    w1 = rng.normal(0.0, np.sqrt(2.0 / (1 * k1 * k1)), size=(c1, 1, k1, k1))
    w2 = rng.normal(0.0, np.sqrt(2.0 / (c1 * k2 * k2)), size=(c2, c1, k2, k2))
    channels = np.sort(rng.choice(c2, size=n_types, replace=False))
    grid = (side, side)
    locations, types = [], []
    for t in range(n_types):
        flat = rng.choice(side * side, size=min(units_per_type, side * side), replace=units_per_type > side * side)
        locations.append(np.stack([flat // side, flat % side], axis=1))
        types.append(np.full(len(flat), t))
    return PopulationSpec(
        kind="teacher_cnn", n_types=n_types,
        locations=np.concatenate(locations), type_ids=np.concatenate(types),
        grid=grid, stimulus_shape=(stimulus_size, stimulus_size),
        teacher_weights=[w1, w2], teacher_channels=channels, seed=seed,
    )


def _check_stimuli(spec: PopulationSpec, stimuli: np.ndarray) -> None:
    if stimuli.ndim != 4 or tuple(stimuli.shape[-2:]) != tuple(spec.stimulus_shape):
        raise ValueError(f"stimuli must be [S,1,{spec.stimulus_shape[0]},{spec.stimulus_shape[1]}], got {stimuli.shape}")


def simulate_linear(spec: PopulationSpec, stimuli: np.ndarray) -> np.ndarray:
    """Noiseless rates ``scale * <kernel_n, patch at location_n>``."""
    if spec.kind != "linear":
        raise ValueError("simulate_linear needs a linear population")
    _check_stimuli(spec, stimuli)
    kh, kw = spec.kernels.shape[-2:]
    H, W = spec.stimulus_shape
    if (H - kh + 1, W - kw + 1) != tuple(spec.grid):
        raise ValueError("kernel footprint inconsistent with the output grid")
    img = stimuli[:, 0]
    rates = np.empty((len(stimuli), spec.n_neurons))
    # group neurons sharing a kernel so each distinct kernel is convolved once
    kflat = spec.kernels.reshape(spec.n_neurons, -1)
    _, first, inverse = np.unique(kflat, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(first) <= 8:
        for g, idx in enumerate(first):
            resp = conv2d(Tensor(img[:, None]), Tensor(spec.kernels[idx][None, None])).data[:, 0]
            members = np.flatnonzero(inverse == g)
            loc = spec.locations[members]
            rates[:, members] = resp[:, loc[:, 0], loc[:, 1]]
    else:
        for n in range(spec.n_neurons):
            r, c = spec.locations[n]
            rates[:, n] = np.tensordot(img[:, r:r + kh, c:c + kw], spec.kernels[n], axes=([1, 2], [0, 1]))
    return spec.output_scale * rates


def teacher_activations(spec: PopulationSpec, stimuli: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Unscaled teacher responses of the selected channels, ``[S, n_types, gh, gw]``."""
    if spec.kind != "teacher_cnn":
        raise ValueError("teacher_activations needs a teacher_cnn population")
    _check_stimuli(spec, stimuli)
    w1, w2 = spec.teacher_weights
    w2_sel = w2[spec.teacher_channels]
    out = []
    for start in range(0, len(stimuli), chunk):
        x = Tensor(stimuli[start:start + chunk])
        h = conv2d(x, Tensor(w1)).data
        h = np.maximum(h, 0.0)
        a = conv2d(Tensor(h), Tensor(w2_sel)).data
        out.append(np.maximum(a, 0.0))
    return np.concatenate(out)


def simulate_teacher(spec: PopulationSpec, stimuli: np.ndarray) -> np.ndarray:
    act = teacher_activations(spec, stimuli)
    loc = spec.locations
    return spec.output_scale * act[:, spec.type_ids, loc[:, 0], loc[:, 1]]


def simulate(spec: PopulationSpec, stimuli: np.ndarray) -> np.ndarray:
    if spec.kind == "linear":
        return simulate_linear(spec, stimuli)
    if spec.kind == "teacher_cnn":
        return simulate_teacher(spec, stimuli)
    raise ValueError(f"unknown population kind {spec.kind!r}")


def calibrate_scale(spec: PopulationSpec, stimuli: np.ndarray, target_mean_abs: float = 0.1) -> float:
    """Output scale that brings the mean absolute rate to ``target_mean_abs``."""
    if len(stimuli) < 1000:
        raise ValueError("calibration needs at least 1000 stimuli")
    unit = simulate(spec.with_scale(1.0), stimuli)
    level = np.mean(np.abs(unit))
    if level == 0:
        raise DegeneratePopulationError("population rates are identically zero")
    return float(target_mean_abs / level)


def add_poisson_like_noise(rates: np.ndarray, seed: int) -> np.ndarray:
    """``y = r + sqrt(|r|) * eps`` so that Var(y) = |r|."""
    rng = np.random.default_rng(seed)
    return rates + np.sqrt(np.abs(rates)) * rng.standard_normal(rates.shape)
