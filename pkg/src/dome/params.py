"""Named parameter storage and the Adam optimizer."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .errors import ConfigError, StateError
from .tensor import Tensor, xavier_uniform


class ParameterStore:
    """Ordered mapping from dotted parameter path to a trainable leaf tensor."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    # initialisers -----------------------------------------------------------
    def linear(self, name, rng, fan_in, fan_out, bias=True, zero=False):
        w = np.zeros((fan_in, fan_out)) if zero else xavier_uniform(rng, fan_in, fan_out)
        self.add(f"{name}.w", w)
        if bias:
            self.add(f"{name}.b", np.zeros(fan_out))

    def embedding(self, name, rng, rows, dim, std=0.02):
        self.add(name, rng.normal(0.0, std, size=(rows, dim)))

    def norm(self, name, dim):
        self.add(f"{name}.g", np.ones(dim))
        self.add(f"{name}.b", np.zeros(dim))

    # persistence helpers ----------------------------------------------------
    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True):
        missing = [n for n in self._params if n not in arrays]
        if strict and missing:
            raise StateError(f"missing parameters: {missing[:5]}")
        for n, t in self._params.items():
            if n in arrays:
                a = np.asarray(arrays[n], dtype=np.float64)
                if a.shape != t.data.shape:
                    raise StateError(f"shape mismatch for {n}: {a.shape} vs {t.data.shape}")
                t.data = a.copy()

    def snap_float32(self):
        """Round every value to the nearest float32 so a float32 checkpoint is lossless."""
        for t in self._params.values():
            t.data = t.data.astype(np.float32).astype(np.float64)


def clip_grad_norm(params: ParameterStore, max_norm: float) -> float:
    total = math.sqrt(sum(float((t.grad ** 2).sum()) for _, t in params.items() if t.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, t in params.items():
            if t.grad is not None:
                t.grad *= scale
    return total


class Adam:
    """Adam with bias correction; moments are kept per parameter name."""

    def __init__(self, params: ParameterStore, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self):
        for n, p in self.params.items():
            if p.grad is None:
                raise StateError(f"parameter {n!r} has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n, p in self.params.items():
            g = p.grad
            m = self.m[n]
            v = self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def snap_float32(self):
        for d in (self.m, self.v):
            for n in d:
                d[n] = d[n].astype(np.float32).astype(np.float64)


def adam_step(params: ParameterStore, state: Adam | None = None, lr=1e-4,
              beta1=0.9, beta2=0.999, eps=1e-8) -> Adam:
    """Functional form: apply one Adam update, creating the state on first use."""
    if state is None:
        state = Adam(params, lr, beta1, beta2, eps)
    state.step()
    return state
