"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> "AdamState":
        return AdamState(
            self.learning_rate, self.beta1, self.beta2, self.epsilon, self.step_count,
            [m.copy() for m in self.first_moment], [v.copy() for v in self.second_moment],
        )


def adam_step(params: list[Tensor], state: AdamState, grads: list[np.ndarray] | None = None) -> AdamState:
    """Apply one in-place Adam update to ``params``.

    ``grads`` defaults to each parameter's ``.grad``; a parameter without a
    gradient is an error.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if any(g is None for g in grads):
        missing = [i for i, g in enumerate(grads) if g is None]
        raise ValueError(f"no gradient for parameters at positions {missing}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    elif len(state.first_moment) != len(params):
        raise ValueError("optimizer state does not match the parameter list")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = state.learning_rate / (1.0 - b1 ** t)
    root_correction = np.sqrt(1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        sq = np.square(g)
        sq *= 1.0 - b2
        v += sq
        # epsilon is added to the bias-corrected second-moment root
        denom = np.sqrt(v, out=sq)
        denom /= root_correction
        denom += state.epsilon
        np.divide(m, denom, out=denom)
        denom *= step
        p.data -= denom
    return state


class Adam:
    """Thin stateful wrapper around :func:`adam_step`."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)
