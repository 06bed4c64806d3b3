"""Prediction quality, location recovery and cell-type classification."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


def fev(pred: np.ndarray, rates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of explainable variance explained per neuron.

    ``1 - mean((pred - rates)^2) / var(rates)`` against noiseless rates.
    Returns ``(values, valid)``; neurons whose rates have zero variance get
    NaN and ``valid == False``.
    """
    pred, rates = np.asarray(pred, dtype=np.float64), np.asarray(rates, dtype=np.float64)
    if pred.shape != rates.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {rates.shape}")
    var = rates.var(axis=0)
    mse = np.mean((pred - rates) ** 2, axis=0)
    valid = var > 0
    out = np.full(var.shape, np.nan)
    out[valid] = 1.0 - mse[valid] / var[valid]
    return out, valid


def pearson(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise Pearson correlation; degenerate columns give 0 and a flag."""
    p = pred - pred.mean(axis=0)
    t = target - target.mean(axis=0)
    denom = np.sqrt((p * p).sum(axis=0) * (t * t).sum(axis=0))
    degenerate = denom == 0
    corr = np.where(degenerate, 0.0, (p * t).sum(axis=0) / np.where(degenerate, 1.0, denom))
    return np.clip(corr, -1.0, 1.0), degenerate


def test_correlation(pred: np.ndarray, repeats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correlation between predictions and the repeat-averaged response."""
    if repeats.ndim != 3 or repeats.shape[1] < 2:
        raise ValueError("repeats must be [S_test, R >= 2, N]")
    if repeats.shape[0] < 3:
        raise ValueError("need at least 3 test stimuli")
    return pearson(pred, repeats.mean(axis=1))


test_correlation.__test__ = False  # not a pytest test despite the name


def mask_peaks(masks: np.ndarray) -> np.ndarray:
    m = np.abs(masks.reshape(len(masks), -1))
    flat = np.argmax(m, axis=1)
    return np.stack(np.unravel_index(flat, masks.shape[1:]), axis=1)


def location_recovery(masks: np.ndarray, true_locations: np.ndarray) -> np.ndarray:
    """Chebyshev distance between each mask's peak and the true grid location."""
    return np.abs(mask_peaks(masks) - np.asarray(true_locations)).max(axis=1).astype(np.float64)


def classify_types(feature_weights: np.ndarray, true_types: np.ndarray):
    """Assign each neuron to the channel of its largest |weight|.

    Channels are matched to true types by an optimal one-to-one assignment
    over the confusion matrix. Returns ``(accuracy, confusion, predicted)``
    where ``predicted`` is in true-type labels (-1 for unassigned channels).
    """
    w = np.abs(np.asarray(feature_weights))
    true_types = np.asarray(true_types)
    n_types = int(true_types.max()) + 1
    K = w.shape[1]
    if K < n_types:
        raise ValueError("need at least as many feature channels as types")
    channel = np.argmax(w, axis=1)
    confusion = np.zeros((n_types, K), dtype=np.int64)
    np.add.at(confusion, (true_types, channel), 1)
    rows, cols = linear_sum_assignment(-confusion)
    label = np.full(K, -1)
    label[cols] = rows
    predicted = label[channel]
    return float(np.mean(predicted == true_types)), confusion, predicted


@dataclass
class MetricReport:
    fev: np.ndarray | None = None
    corr: np.ndarray | None = None
    location_error_px: np.ndarray | None = None
    predicted_type: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    @property
    def n_neurons(self) -> int:
        for v in (self.corr, self.fev, self.location_error_px, self.predicted_type):
            if v is not None:
                return len(v)
        return 0

    def aggregates(self) -> dict[str, float]:
        out = {}
        for name in ("fev", "corr", "location_error_px"):
            v = getattr(self, name)
            if v is not None and np.any(np.isfinite(v)):
                out[f"{name}_mean"] = float(np.nanmean(v))
                out[f"{name}_median"] = float(np.nanmedian(v))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["neuron", "fev", "corr", "location_error_px", "predicted_type"])
        for n in range(self.n_neurons):
            row = [n]
            for v in (self.fev, self.corr, self.location_error_px, self.predicted_type):
                row.append("" if v is None or (isinstance(v[n], float) and np.isnan(v[n])) else repr(v[n].item()))
            writer.writerow(row)
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps({"n_neurons": self.n_neurons, **self.aggregates(),
                           **{k: v for k, v in self.flags.items() if np.isscalar(v)}}, sort_keys=True, indent=2)


def evaluate_predictions(pred: np.ndarray, ds, idx: np.ndarray | None = None, masks=None,
                         feature_weights=None) -> MetricReport:
    """Metrics for predictions on the test split of ``ds``."""
    idx = ds.split("test") if idx is None else idx
    rep = MetricReport()
    if ds.rates is not None:
        rep.fev, valid = fev(pred, ds.rates[idx])
        rep.flags["n_zero_variance"] = int((~valid).sum())
    if ds.repeats is not None and ds.repeats.shape[1] >= 2:
        rep.corr, degenerate = test_correlation(pred, ds.repeats)
    else:
        target = ds.rates[idx] if ds.rates is not None else ds.responses[idx]
        rep.corr, degenerate = pearson(pred, target)
    rep.flags["n_degenerate_corr"] = int(degenerate.sum())
    if masks is not None and ds.locations is not None:
        rep.location_error_px = location_recovery(masks, ds.locations)
    if feature_weights is not None and ds.type_ids is not None and feature_weights.shape[1] >= ds.type_ids.max() + 1:
        acc, _, rep.predicted_type = classify_types(feature_weights, ds.type_ids)
        rep.flags["type_accuracy"] = acc
    return rep
