"""Linear layers and an Adam optimizer with decoupled weight decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, add_bias, matmul, relu

ACTIVATIONS = ("relu", "none")


class LinearLayer:
    def __init__(self, weight: Tensor, bias: Tensor, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if weight.data.ndim != 2 or bias.shape != (weight.shape[1],):
            raise DimensionError(f"weight {weight.shape} and bias {bias.shape} are inconsistent")
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"layer expects width {self.in_features}, got input of shape {x.shape}")
        out = add_bias(matmul(x, self.weight), self.bias)
        return relu(out) if self.activation == "relu" else out

    def __repr__(self):
        return f"LinearLayer({self.in_features}->{self.out_features}, {self.activation})"


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_layer(fan_in: int, fan_out: int, seed, activation: str = "relu") -> LinearLayer:
    """Xavier-uniform weights and zero bias, fully determined by ``seed``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"layer widths must be >= 1, got {fan_in}x{fan_out}")
    rng = np.random.default_rng(seed)
    bound = xavier_bound(fan_in, fan_out)
    weight = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    bias = Tensor(np.zeros(fan_out), requires_grad=True)
    return LinearLayer(weight, bias, activation)


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_bias: bool = False
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a named parameter set.

    Weight decay is decoupled: ``p <- p - lr * wd * p`` is applied before the
    bias-corrected Adam delta. Parameters whose name ends in ``bias`` are not
    decayed unless ``decay_bias`` is set.
    """

    def __init__(self, params: dict[str, Tensor] | Iterable[tuple[str, Tensor]], state: AdamState | None = None, **hyper):
        self.params = dict(params)
        if state is not None and hyper:
            raise TypeError("pass either a state or hyperparameters, not both")
        self.state = state if state is not None else AdamState(**hyper)
        for name, p in self.params.items():
            self.state.m.setdefault(name, np.zeros_like(p.data))
            self.state.v.setdefault(name, np.zeros_like(p.data))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter '{name}' has no gradient; run backward() first")
        s = self.state
        s.t += 1
        bc1 = 1.0 - s.beta1**s.t
        bc2 = 1.0 - s.beta2**s.t
        for name, p in self.params.items():
            g = p.grad
            if s.weight_decay and (s.decay_bias or not name.endswith("bias")):
                p.data -= s.learning_rate * s.weight_decay * p.data
            m = s.m[name]
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data -= s.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + s.eps)
            p.grad = None


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    Adam(params, state).step()
