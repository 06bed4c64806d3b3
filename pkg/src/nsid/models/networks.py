"""Convolutional feature spaces with factorized or fully-connected readouts, and the GLM.

All models share a small interface used by the training loop:
``params`` (ordered name -> Tensor), ``frozen`` names, ``forward(x, mode)``,
``penalty_groups()``, and ``snapshot()`` / ``restore()`` for early stopping.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..numerics import (
    BatchNormStats,
    Tensor,
    batchnorm,
    conv2d,
    einsum,
    pointwise,
    relu,
    reshape,
    softplus,
)


class ConfigurationError(ValueError):
    """Model parts disagree about shapes."""


class CapacityError(ValueError):
    """A readout would exceed the configured parameter budget."""


FC_CAPACITY_LIMIT = 10 ** 8


@dataclass
class Architecture:
    channels: list[int] = field(default_factory=lambda: [1])
    kernel_sizes: list[int] = field(default_factory=lambda: [17])
    activation: str = "identity"
    in_channels: int = 1
    batchnorm: bool = True
    output: str = "identity"  # identity | softplus
    bias: bool = False

    def __post_init__(self):
        if len(self.channels) != len(self.kernel_sizes) or not self.channels:
            raise ConfigurationError("channels and kernel_sizes must be non-empty and of equal length")

    @property
    def n_features(self) -> int:
        return self.channels[-1]

    @property
    def footprint(self) -> int:
        return sum(k - 1 for k in self.kernel_sizes) + 1

    def grid(self, stimulus_shape: tuple[int, int]) -> tuple[int, int]:
        shrink = self.footprint - 1
        gh, gw = stimulus_shape[0] - shrink, stimulus_shape[1] - shrink
        if gh < 1 or gw < 1:
            raise ConfigurationError(f"stimulus {stimulus_shape} too small for footprint {self.footprint}")
        return gh, gw


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Model:
    """Parameter bookkeeping shared by every trainable model."""

    kind = "model"

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()
        self.bn_stats: list[BatchNormStats] = []

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        return t

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(k, v) for k, v in self.params.items() if k not in self.frozen]

    def freeze(self, *names: str) -> None:
        for n in names:
            if n not in self.params:
                raise KeyError(n)
            self.frozen.add(n)
            self.params[n].requires_grad = False

    def snapshot(self) -> dict:
        return {
            "params": {k: v.data.copy() for k, v in self.params.items()},
            "bn": [s.copy() for s in self.bn_stats],
        }

    def restore(self, snap: dict) -> None:
        for k, v in snap["params"].items():
            self.params[k].data[...] = v
        for s, saved in zip(self.bn_stats, snap["bn"]):
            s.mean, s.var, s.initialized = saved.mean.copy(), saved.var.copy(), saved.initialized

    def forward(self, x, mode: str = "eval") -> Tensor:
        raise NotImplementedError

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        return np.concatenate(
            [self.forward(x[i:i + batch_size], "eval").data for i in range(0, len(x), batch_size)]
        )

    def penalty_groups(self) -> dict[str, list[Tensor]]:
        return {}

    def describe(self) -> dict:
        return {"kind": self.kind, "frozen": sorted(self.frozen)}

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


class ConvModel(Model):
    """A stack of conv -> batchnorm -> activation layers."""

    def __init__(self, arch: Architecture, stimulus_shape: tuple[int, int], rng: np.random.Generator,
                 kernel_std: float = 0.01):
        super().__init__()
        self.arch = arch
        self.stimulus_shape = tuple(stimulus_shape)
        self.grid = arch.grid(self.stimulus_shape)
        c_in = arch.in_channels
        for i, (c, k) in enumerate(zip(arch.channels, arch.kernel_sizes)):
            self._add(f"conv{i}.kernel", rng.normal(0.0, kernel_std, size=(c, c_in, k, k)))
            if arch.batchnorm:
                self._add(f"conv{i}.gamma", np.ones(c))
                self._add(f"conv{i}.beta", np.zeros(c))
                self.bn_stats.append(BatchNormStats(c))
            c_in = c

    @property
    def n_layers(self) -> int:
        return len(self.arch.channels)

    def kernels(self) -> list[Tensor]:
        return [self.params[f"conv{i}.kernel"] for i in range(self.n_layers)]

    def features(self, x, mode: str) -> Tensor:
        h = _as_input(x)
        if h.ndim != 4 or tuple(h.shape[-2:]) != self.stimulus_shape:
            raise ConfigurationError(f"expected stimuli [B,C,{self.stimulus_shape[0]},{self.stimulus_shape[1]}], got {h.shape}")
        for i in range(self.n_layers):
            h = conv2d(h, self.params[f"conv{i}.kernel"])
            if self.arch.batchnorm:
                h = batchnorm(h, self.params[f"conv{i}.gamma"], self.params[f"conv{i}.beta"], mode, self.bn_stats[i])
            h = pointwise(h, self.arch.activation)
        return h

    def _output(self, pred: Tensor) -> Tensor:
        if self.arch.bias:
            pred = pred + self.params["bias"]
        if self.arch.output == "softplus":
            pred = softplus(pred)
        elif self.arch.output != "identity":
            raise ConfigurationError(f"unknown output nonlinearity {self.arch.output!r}")
        return pred

    def describe(self) -> dict:
        d = super().describe()
        d.update(arch=asdict(self.arch), stimulus_shape=list(self.stimulus_shape))
        return d


class FactorizedModel(ConvModel):
    """Shared conv features read out by a spatial mask times feature weights.

    ``pred[b, n] = sum_{i,j,k} c[b, k, i, j] * mask[n, i, j] * weights[n, k]``
    """

    kind = "factorized"

    def __init__(self, arch: Architecture, n_neurons: int, stimulus_shape, seed: int = 0,
                 kernel_std: float = 0.01, weight_std: float = 0.01, masks: np.ndarray | None = None):
        rng = np.random.default_rng(seed)
        super().__init__(arch, stimulus_shape, rng, kernel_std)
        K = arch.n_features
        gh, gw = self.grid
        if masks is None:
            masks = rng.normal(0.0, 0.001, size=(n_neurons, gh, gw))
        masks = np.asarray(masks, dtype=np.float64)
        if masks.shape != (n_neurons, gh, gw):
            raise ConfigurationError(f"mask grid {masks.shape[1:]} does not match feature grid {(gh, gw)}")
        self._add("masks", masks)
        self._add("feature_weights", rng.normal(1.0 / K, weight_std, size=(n_neurons, K)))
        if arch.bias:
            self._add("bias", np.zeros(n_neurons))

    @property
    def n_neurons(self) -> int:
        return self.params["masks"].shape[0]

    @property
    def masks(self) -> Tensor:
        return self.params["masks"]

    @property
    def feature_weights(self) -> Tensor:
        return self.params["feature_weights"]

    def readout(self, c: Tensor) -> Tensor:
        B, K, gh, gw = c.shape
        m = self.params["masks"]
        if (gh, gw) != tuple(m.shape[1:]):
            raise ConfigurationError(f"feature grid {(gh, gw)} does not match mask grid {tuple(m.shape[1:])}")
        if K != self.params["feature_weights"].shape[1]:
            raise ConfigurationError("feature weight count differs from the number of feature maps")
        pooled = einsum("bkp,np->bnk", reshape(c, (B, K, gh * gw)), reshape(m, (m.shape[0], gh * gw)))
        return einsum("bnk,nk->bn", pooled, self.params["feature_weights"])

    def forward(self, x, mode: str = "eval") -> Tensor:
        return self._output(self.readout(self.features(x, mode)))

    def penalty_groups(self) -> dict[str, list[Tensor]]:
        return {
            "mask": [self.params["masks"]],
            "feature_weights": [self.params["feature_weights"]],
            "conv_kernels": self.kernels(),
        }


class FullyConnectedModel(ConvModel):
    """Shared conv features read out by a dense per-neuron weight tensor."""

    kind = "fully_connected"

    def __init__(self, arch: Architecture, n_neurons: int, stimulus_shape, seed: int = 0,
                 kernel_std: float = 0.01, readout_std: float | None = None):
        rng = np.random.default_rng(seed)
        super().__init__(arch, stimulus_shape, rng, kernel_std)
        gh, gw = self.grid
        n_feat = gh * gw * arch.n_features
        if n_feat * n_neurons > FC_CAPACITY_LIMIT:
            raise CapacityError(
                f"fully-connected readout needs {n_feat * n_neurons:,} weights (> {FC_CAPACITY_LIMIT:,})"
            )
        std = readout_std if readout_std is not None else 1.0 / n_feat
        self._add("readout", rng.normal(0.0, std, size=(n_neurons, n_feat)))
        if arch.bias:
            self._add("bias", np.zeros(n_neurons))

    @property
    def n_neurons(self) -> int:
        return self.params["readout"].shape[0]

    def forward(self, x, mode: str = "eval") -> Tensor:
        c = self.features(x, mode)
        B = c.shape[0]
        flat = reshape(c, (B, int(np.prod(c.shape[1:]))))
        return self._output(einsum("bf,nf->bn", flat, self.params["readout"]))

    def penalty_groups(self) -> dict[str, list[Tensor]]:
        return {"readout": [self.params["readout"]], "conv_kernels": self.kernels(), "activity": []}


class GLMModel(Model):
    """Per-neuron full-field linear filter, output nonlinearity and offsets.

    ``relu`` recipe: ``relu(<w, s> + b) + offset``; ``softplus`` recipe:
    ``softplus(<w, s> + b)``. ``identity`` drops the nonlinearity, which
    makes the model a full-field ridge regression.
    """

    kind = "glm"

    def __init__(self, n_neurons: int, stimulus_shape, nonlinearity: str = "relu", seed: int = 0,
                 weight_std: float = 0.0):
        super().__init__()
        rng = np.random.default_rng(seed)
        if nonlinearity not in ("relu", "softplus", "identity"):
            raise ConfigurationError(f"unknown GLM nonlinearity {nonlinearity!r}")
        self.stimulus_shape = tuple(stimulus_shape)
        self.nonlinearity = nonlinearity
        n_pix = int(np.prod(self.stimulus_shape))
        self._add("weights", rng.normal(0.0, weight_std, size=(n_neurons, n_pix)) if weight_std else np.zeros((n_neurons, n_pix)))
        self._add("bias", np.zeros(n_neurons))
        if nonlinearity == "relu":
            self._add("offset", np.zeros(n_neurons))

    @property
    def n_neurons(self) -> int:
        return self.params["weights"].shape[0]

    def forward(self, x, mode: str = "eval") -> Tensor:
        x = _as_input(x)
        B = x.shape[0]
        z = einsum("bf,nf->bn", reshape(x, (B, int(np.prod(x.shape[1:])))), self.params["weights"]) + self.params["bias"]
        if self.nonlinearity == "relu":
            return relu(z) + self.params["offset"]
        if self.nonlinearity == "identity":
            return z
        return softplus(z)

    def penalty_groups(self) -> dict[str, list[Tensor]]:
        return {"ridge": [self.params["weights"]]}

    def describe(self) -> dict:
        d = super().describe()
        d.update(nonlinearity=self.nonlinearity, stimulus_shape=list(self.stimulus_shape))
        return d


def model_to_sections(model: Model) -> dict[str, object]:
    sections: dict[str, object] = {"architecture": json.dumps(model.describe(), sort_keys=True)}
    for k, v in model.params.items():
        sections[f"param:{k}"] = v.data
    for i, s in enumerate(model.bn_stats):
        sections[f"bn:{i}:mean"] = s.mean
        sections[f"bn:{i}:var"] = s.var
        sections[f"bn:{i}:init"] = np.array([int(s.initialized)])
    return sections


def model_from_sections(sections: dict[str, object]) -> Model:
    desc = json.loads(sections["architecture"])
    params = {k.split(":", 1)[1]: v for k, v in sections.items() if k.startswith("param:")}
    kind = desc["kind"]
    if kind == "glm":
        n = params["weights"].shape[0]
        model: Model = GLMModel(n, tuple(desc["stimulus_shape"]), desc["nonlinearity"])
    else:
        arch = Architecture(**desc["arch"])
        shape = tuple(desc["stimulus_shape"])
        if kind == "factorized":
            model = FactorizedModel(arch, params["masks"].shape[0], shape, masks=params["masks"])
        elif kind == "fully_connected":
            model = FullyConnectedModel(arch, params["readout"].shape[0], shape)
        else:
            raise ConfigurationError(f"unknown model kind {kind!r}")
    for k, v in params.items():
        if model.params[k].shape != v.shape:
            raise ConfigurationError(f"checkpoint parameter {k} has shape {v.shape}, expected {model.params[k].shape}")
        model.params[k].data[...] = v
    for i, s in enumerate(model.bn_stats):
        s.mean = np.array(sections[f"bn:{i}:mean"], dtype=np.float64)
        s.var = np.array(sections[f"bn:{i}:var"], dtype=np.float64)
        s.initialized = bool(sections[f"bn:{i}:init"][0])
    for name in desc.get("frozen", []):
        model.freeze(name)
    return model
