"""Named-parameter registry with seeded initialization.

Weights use fan-in-scaled uniform init, biases and positional embeddings
start at zero, norm gains at one. Creation order is fixed by the model
builders, so a given seed always yields the same parameters.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor


class ParamStore:
    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Parameter] = {}

    def _register(self, name: str, data: np.ndarray, frozen: bool) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(data.astype(self.dtype), name=name, frozen=frozen)
        self.params[name] = p
        return p.tensor

    def uniform(self, name: str, shape, fan_in: int, frozen: bool = False) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self._register(name, self.rng.uniform(-bound, bound, size=shape), frozen)

    def zeros(self, name: str, shape, frozen: bool = False) -> Tensor:
        return self._register(name, np.zeros(shape), frozen)

    def ones(self, name: str, shape, frozen: bool = False) -> Tensor:
        return self._register(name, np.ones(shape), frozen)

    def linear(self, name: str, fan_in: int, fan_out: int, frozen: bool = False):
        w = self.uniform(f"{name}.weight", (fan_in, fan_out), fan_in, frozen)
        b = self.zeros(f"{name}.bias", (fan_out,), frozen)
        return w, b

    def conv(self, name: str, c_out: int, c_in: int, k: int, frozen: bool = False):
        w = self.uniform(f"{name}.weight", (c_out, c_in, k, k, k), c_in * k**3, frozen)
        b = self.zeros(f"{name}.bias", (c_out, 1, 1, 1), frozen)
        return w, b

    def layernorm(self, name: str, dim: int, frozen: bool = False):
        gamma = self.ones(f"{name}.gamma", (dim,), frozen)
        beta = self.zeros(f"{name}.beta", (dim,), frozen)
        return gamma, beta

    def named(self) -> dict[str, Parameter]:
        return dict(self.params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self.params.values() if not p.frozen]

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()
