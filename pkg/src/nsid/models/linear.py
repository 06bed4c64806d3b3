"""Per-neuron regularized linear regression on oracle-cropped stimulus patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..groundtruth.dataset import Dataset

RIDGE_GRID = tuple(np.logspace(-1, 5, 13))
LASSO_GRID_FRACTIONS = tuple(np.logspace(0, -3, 10))


@dataclass
class LinearBaseline:
    kernel: np.ndarray
    bias: float
    regularizer: str
    lam: float
    crop_location: tuple[int, int]


@dataclass
class LinearBaselines:
    """Fitted baselines for a whole population, stored as stacked arrays."""

    kernels: np.ndarray  # [N, kh, kw]
    biases: np.ndarray
    lams: np.ndarray
    locations: np.ndarray
    regularizer: str
    rank_deficient: np.ndarray  # OLS fits that fell back to the minimum-norm solution

    def __len__(self) -> int:
        return len(self.biases)

    def __getitem__(self, n: int) -> LinearBaseline:
        return LinearBaseline(self.kernels[n], float(self.biases[n]), self.regularizer, float(self.lams[n]),
                              tuple(int(v) for v in self.locations[n]))

    def predict(self, stimuli: np.ndarray) -> np.ndarray:
        kh, kw = self.kernels.shape[-2:]
        img = stimuli.sum(axis=1)
        out = np.empty((len(stimuli), len(self)))
        for n, (r, c) in enumerate(self.locations):
            out[:, n] = np.tensordot(img[:, r:r + kh, c:c + kw], self.kernels[n], axes=([1, 2], [0, 1]))
        return out + self.biases


def crop_patches(stimuli: np.ndarray, location, footprint: int) -> np.ndarray:
    r, c = location
    img = stimuli.sum(axis=1)
    return img[:, r:r + footprint, c:c + footprint].reshape(len(stimuli), -1)


def soft_threshold(x: np.ndarray, t) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    r = y - X @ beta
    return float(r @ r / (2.0 * len(y)) + lam * np.abs(beta).sum())


def lasso_prox_grad(X: np.ndarray, y: np.ndarray, lam: float, beta0: np.ndarray | None = None,
                    max_iter: int = 10_000, rtol: float = 1e-8, accelerated: bool = True,
                    gram: np.ndarray | None = None, xty: np.ndarray | None = None,
                    lipschitz: float | None = None) -> np.ndarray:
    """Minimize ``||y - X b||^2 / (2n) + lam * ||b||_1`` by proximal gradient.

    Step sizes backtrack from ``1 / L``; with ``accelerated`` the FISTA
    momentum sequence is used and restarted whenever the objective rises.
    Stops when the relative objective change drops below ``rtol``.
    """
    n = len(y)
    G = X.T @ X / n if gram is None else gram
    c = X.T @ y / n if xty is None else xty
    yy = float(y @ y) / (2.0 * n)

    def smooth(b):
        return 0.5 * b @ G @ b - c @ b + yy

    def objective(b):
        return smooth(b) + lam * np.abs(b).sum()

    L = lipschitz if lipschitz is not None else max(np.linalg.eigvalsh(G)[-1], 1e-12)
    beta = np.zeros(G.shape[0]) if beta0 is None else beta0.copy()
    z, t = beta.copy(), 1.0
    f_old = objective(beta)
    step = 1.0 / L
    for _ in range(max_iter):
        grad = G @ z - c
        fz = smooth(z)
        while True:
            cand = soft_threshold(z - step * grad, step * lam)
            d = cand - z
            if smooth(cand) <= fz + grad @ d + (d @ d) / (2.0 * step) + 1e-15 * abs(fz):
                break
            step *= 0.5
        f_new = objective(cand)
        if accelerated:
            if f_new > f_old:
                z, t = beta.copy(), 1.0
                continue
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = cand + ((t - 1.0) / t_next) * (cand - beta)
            t = t_next
        else:
            z = cand
        beta = cand
        if abs(f_old - f_new) <= rtol * max(abs(f_old), 1e-300):
            break
        f_old = f_new
    return beta


def _fit_one(X, y, Xv, yv, regularizer, lam_grid):
    mu_x, mu_y = X.mean(axis=0), y.mean()
    Xc, yc = X - mu_x, y - mu_y
    p = X.shape[1]
    deficient = False
    if regularizer == "ols":
        beta, _, rank, _ = np.linalg.lstsq(Xc, yc, rcond=None)
        deficient = rank < p
        return beta, mu_y - mu_x @ beta, 0.0, deficient

    G = Xc.T @ Xc
    xty = Xc.T @ yc
    candidates = []
    if regularizer == "ridge":
        evals, evecs = np.linalg.eigh(G)
        proj = evecs.T @ xty
        for lam in lam_grid:
            candidates.append((lam, evecs @ (proj / (evals + lam))))
    elif regularizer == "lasso":
        n = len(y)
        Gn, cn = G / n, xty / n
        L = max(np.linalg.eigvalsh(Gn)[-1], 1e-12)
        lam_max = np.abs(cn).max()
        beta = np.zeros(p)
        for frac in lam_grid:
            lam = frac * lam_max
            beta = lasso_prox_grad(Xc, yc, lam, beta0=beta, gram=Gn, xty=cn, lipschitz=L)
            candidates.append((lam, beta.copy()))
    else:
        raise ValueError(f"unknown regularizer {regularizer!r}")

    best = None
    for lam, beta in candidates:
        b0 = mu_y - mu_x @ beta
        err = np.mean((yv - Xv @ beta - b0) ** 2) if len(yv) else 0.0
        if best is None or err < best[0]:
            best = (err, lam, beta, b0)
    _, lam, beta, b0 = best
    return beta, b0, lam, deficient


def fit_linear_baseline(ds: Dataset, locations: np.ndarray, footprint: int, regularizer: str = "ridge",
                        lam_grid=None, train_idx=None, val_idx=None) -> LinearBaselines:
    """Fit OLS, ridge or lasso per neuron on the patch at its known location.

    The regularization strength is picked per neuron from ``lam_grid`` by
    validation MSE. Lasso strengths are fractions of the per-neuron
    ``lam_max``.
    """
    if train_idx is None or val_idx is None:
        from ..training.split import train_validation_split

        train_idx, val_idx = train_validation_split(ds, seed=0)
    if lam_grid is None:
        lam_grid = RIDGE_GRID if regularizer == "ridge" else LASSO_GRID_FRACTIONS
    locations = np.asarray(locations, dtype=np.int64)
    N = ds.n_neurons
    kernels = np.empty((N, footprint, footprint))
    biases, lams = np.empty(N), np.empty(N)
    deficient = np.zeros(N, dtype=bool)
    stim_t, stim_v = ds.stimuli[train_idx], ds.stimuli[val_idx]
    for n in range(N):
        X = crop_patches(stim_t, locations[n], footprint)
        Xv = crop_patches(stim_v, locations[n], footprint)
        beta, b0, lam, bad = _fit_one(X, ds.responses[train_idx, n], Xv, ds.responses[val_idx, n],
                                      regularizer, lam_grid)
        kernels[n] = beta.reshape(footprint, footprint)
        biases[n], lams[n], deficient[n] = b0, lam, bad
    return LinearBaselines(kernels, biases, lams, locations, regularizer, deficient)


def fit_pooled_linear(ds: Dataset, locations: np.ndarray, footprint: int, lam_grid=None,
                      train_idx=None, val_idx=None) -> LinearBaselines:
    """One ridge kernel shared by all neurons, fit on patches cropped at known locations.

    Every neuron contributes its own cropped samples to a single regression,
    so N neurons with identical filters act like N times as much data.
    Each neuron keeps its own bias.
    """
    if train_idx is None or val_idx is None:
        from ..training.split import train_validation_split

        train_idx, val_idx = train_validation_split(ds, seed=0)
    lam_grid = RIDGE_GRID if lam_grid is None else lam_grid
    locations = np.asarray(locations, dtype=np.int64)
    N = ds.n_neurons
    p = footprint * footprint
    G, xty = np.zeros((p, p)), np.zeros(p)
    means_x, means_y = np.empty((N, p)), np.empty(N)
    stim_t = ds.stimuli[train_idx]
    for n in range(N):
        X = crop_patches(stim_t, locations[n], footprint)
        y = ds.responses[train_idx, n]
        means_x[n], means_y[n] = X.mean(axis=0), y.mean()
        Xc = X - means_x[n]
        G += Xc.T @ Xc
        xty += Xc.T @ (y - means_y[n])
    evals, evecs = np.linalg.eigh(G)
    proj = evecs.T @ xty
    stim_v = ds.stimuli[val_idx]
    val_patches = [crop_patches(stim_v, locations[n], footprint) for n in range(N)]
    best = None
    for lam in lam_grid:
        beta = evecs @ (proj / (evals + lam))
        err = 0.0
        for n in range(N):
            resid = ds.responses[val_idx, n] - (val_patches[n] - means_x[n]) @ beta - means_y[n]
            err += float(resid @ resid)
        if best is None or err < best[0]:
            best = (err, lam, beta)
    _, lam, beta = best
    biases = means_y - means_x @ beta
    kernels = np.broadcast_to(beta.reshape(footprint, footprint), (N, footprint, footprint)).copy()
    return LinearBaselines(kernels, biases, np.full(N, lam), locations, "pooled_ridge", np.zeros(N, dtype=bool))
