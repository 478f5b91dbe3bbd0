"""Module/parameter plumbing shared by the denoiser and the encoders."""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor, parameter
from .errors import ConfigError


class Module:
    """Tracks parameters and sub-modules through attribute assignment."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "/"))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def glorot(rng, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, dtype=np.float32):
        super().__init__()
        self.weight = parameter(glorot(rng, d_in, d_out, dtype))
        self.has_bias = bias
        if bias:
            self.bias = parameter(np.zeros(d_out, dtype=dtype))

    def __call__(self, x):
        y = x @ self.weight
        if self.has_bias:
            y = y + self.bias
        return y


def param_checksum(params: dict[str, Tensor]) -> str:
    """64-bit hex digest over parameter bytes, order fixed by name."""
    h = hashlib.blake2b(digest_size=8)
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].data.tobytes())
    return h.hexdigest()


class Adam:
    """Adam over a named parameter subset; untouched parameters stay bit-identical."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.items = sorted(params.items())
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.items}
        self.v = {name: np.zeros_like(p.data) for name, p in self.items}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.items:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)
