"""Named trainable tensors and seeded initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, leaky_relu
from .synth import SplitMix64


@dataclass
class Linear:
    W: Tensor
    b: Tensor | None = None

    def __call__(self, x):
        y = x @ self.W
        return y if self.b is None else y + self.b


@dataclass
class Projection(Linear):
    """Linear layer followed by leaky ReLU."""

    def __call__(self, x):
        return leaky_relu(Linear.__call__(self, x))


class ParamStore(dict):
    """``name -> Tensor`` with deterministic initialization.

    Draw order follows creation order, so two stores built by the same code
    from the same seed hold bit-identical values.
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        self.rng = SplitMix64(seed)

    def _uniform(self, shape, bound: float) -> np.ndarray:
        n = int(np.prod(shape))
        u = np.array([self.rng.uniform() for _ in range(n)])
        return ((2.0 * u - 1.0) * bound).reshape(shape)

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(value, dtype=np.float64), requires_grad=True, name=name)
        self[name] = t
        return t

    def linear(self, name: str, fan_in: int, fan_out: int, bias: bool = True,
               cls=Linear) -> Linear:
        bound = 1.0 / math.sqrt(fan_in)
        W = self.add(f"{name}.W", self._uniform((fan_in, fan_out), bound))
        b = self.add(f"{name}.b", self._uniform((fan_out,), bound)) if bias else None
        return cls(W, b)

    def projection(self, name: str, fan_in: int, fan_out: int) -> Projection:
        return self.linear(name, fan_in, fan_out, cls=Projection)

    def table(self, name: str, rows: int, cols: int) -> Tensor:
        # rows are free vectors: unit scale, i.e. fan-in 1
        return self.add(name, self._uniform((rows, cols), 1.0))

    def constant(self, name: str, value: float, shape) -> Tensor:
        return self.add(name, np.full(shape, value))

    def names(self) -> list[str]:
        return sorted(self)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: self[k].data.copy() for k in self.names()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self) ^ set(values)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, v in values.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self[k].shape}")
            self[k].data[...] = v
