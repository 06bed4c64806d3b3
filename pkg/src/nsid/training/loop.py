"""Adam training with validation-based early stopping and learning-rate decay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..groundtruth.dataset import Dataset
from ..numerics import AdamState, Graph, Tensor, adam_step, backward, no_grad
from .losses import Penalties, data_loss, total_penalty
from .split import train_validation_split

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    """The training loss became NaN or infinite."""

    def __init__(self, step: int, trace: list):
        self.step = step
        self.trace = trace
        tail = ", ".join(f"step {s}: train {t:.4g}" for s, t, _ in trace[-5:])
        super().__init__(f"non-finite loss at step {step} (recent: {tail or 'none'})")


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr0: float = 1e-3
    patience_steps: int = 300
    lr_decay: float = 0.1
    n_decays: int = 1
    val_fraction: float = 0.2
    eval_every: int = 10
    max_steps: int = 50_000
    loss: str = "mse"
    penalties: Penalties = field(default_factory=Penalties)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.eval_every < 1 or self.patience_steps <= 0 or self.patience_steps % self.eval_every:
            raise ValueError("patience_steps must be a positive multiple of eval_every")
        if self.loss not in ("mse", "poisson"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class FitReport:
    best_val_loss: float
    initial_val_loss: float
    best_step: int
    steps_run: int
    lr_schedule_events: list[dict] = field(default_factory=list)
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    selected: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    recipe: str | None = None
    status: str = "ok"

    def summary(self) -> dict:
        return {
            "best_val_loss": self.best_val_loss, "initial_val_loss": self.initial_val_loss,
            "best_step": self.best_step, "steps_run": self.steps_run,
            "lr_schedule_events": self.lr_schedule_events, "selected": self.selected,
            "recipe": self.recipe, "status": self.status,
            "metrics": {k: v for k, v in self.metrics.items() if np.isscalar(v)},
        }


def evaluate_loss(model, stimuli: np.ndarray, targets: np.ndarray, loss: str, batch_size: int = 512) -> float:
    """Per-sample data term (no penalties) over a whole split, in eval mode."""
    total = 0.0
    with no_grad():
        for i in range(0, len(stimuli), batch_size):
            pred = model.forward(stimuli[i:i + batch_size], "eval")
            total += data_loss(loss, pred, targets[i:i + batch_size]).item() * len(pred.data)
    return total / len(stimuli)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    if n < 2 * batch_size:
        while True:
            yield np.arange(n)
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield perm[i:i + batch_size]


def train(model, ds: Dataset, cfg: TrainConfig, train_idx=None, val_idx=None):
    """Fit ``model`` in place and return ``(model, FitReport)``.

    Validation loss is checked every ``eval_every`` steps. When it has not
    improved for ``patience_steps`` steps the best parameters are restored
    and the learning rate is multiplied by ``lr_decay``; the exhaustion
    after ``n_decays`` decays ends training. The returned model holds the
    parameters with the lowest validation loss seen.
    """
    if train_idx is None or val_idx is None:
        train_idx, val_idx = train_validation_split(ds, cfg.val_fraction, cfg.seed)
    xs, ys = ds.stimuli[train_idx], ds.responses[train_idx]
    xv, yv = ds.stimuli[val_idx], ds.responses[val_idx]
    rng = np.random.default_rng(cfg.seed)
    batches = _batches(len(xs), cfg.batch_size, rng)
    params = [t for _, t in model.trainable()]
    if not params:
        raise ValueError("model has no trainable parameters")
    state = AdamState(learning_rate=cfg.lr0)

    if model.bn_stats:
        # eval-mode batch norm needs running statistics before the first check
        first = next(_batches(len(xs), cfg.batch_size, np.random.default_rng(cfg.seed)))
        with no_grad():
            model.forward(xs[first], "train")

    initial = evaluate_loss(model, xv, yv, cfg.loss)
    best_val, best_step, best_snap = initial, 0, model.snapshot()
    last_reset = 0
    exhaustions = 0
    events: list[dict] = []
    trace: list[tuple[int, float, float]] = [(0, math.nan, initial)]
    running, n_running = 0.0, 0
    step = 0
    while step < cfg.max_steps:
        step += 1
        idx = next(batches)
        pred = model.forward(xs[idx], "train")
        loss = data_loss(cfg.loss, pred, ys[idx])
        pen = total_penalty(model, cfg.penalties, pred)
        if isinstance(pen, Tensor):
            loss = loss + pen
        value = loss.item()
        if not math.isfinite(value):
            trace.append((step, value, math.nan))
            raise TrainingDivergedError(step, trace)
        running += value
        n_running += 1
        for p in params:
            p.grad = None
        backward(loss, Graph.build(loss))
        adam_step(params, state)

        if step % cfg.eval_every:
            continue
        val = evaluate_loss(model, xv, yv, cfg.loss)
        trace.append((step, running / n_running, val))
        running, n_running = 0.0, 0
        if not math.isfinite(val):
            raise TrainingDivergedError(step, trace)
        if val < best_val:
            best_val, best_step, best_snap = val, step, model.snapshot()
        elif step - max(best_step, last_reset) >= cfg.patience_steps:
            exhaustions += 1
            model.restore(best_snap)
            terminal = exhaustions > cfg.n_decays
            events.append({"step": step, "restored_step": best_step, "best_val_loss": best_val,
                           "lr_before": state.learning_rate, "terminal": terminal})
            if terminal:
                break
            state.learning_rate *= cfg.lr_decay
            last_reset = step
    model.restore(best_snap)
    report = FitReport(best_val_loss=best_val, initial_val_loss=initial, best_step=best_step,
                       steps_run=step, lr_schedule_events=events, trace=trace)
    log.debug("trained %s: %d steps, best val %.5g at %d", type(model).__name__, step, best_val, best_step)
    return model, report
