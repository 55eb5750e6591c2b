"""Minimal module container with a named parameter registry."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Parameter, default_dtype


class Module:
    """Base class for blocks; attributes holding Parameters or Modules are registered
    in assignment order, which fixes parameter naming and initialization order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
            self._modules.pop(name, None)
        elif isinstance(value, Module):
            self._modules[name] = value
            self._params.pop(name, None)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, m in self._modules.items():
            yield from m.named_modules(prefix + name + ".")

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place; returns self."""
        for p in self.parameters():
            p.data = np.ascontiguousarray(p.data.astype(dtype))
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def param(*shape: int, init: str = "weight") -> Parameter:
    """Allocate an uninitialized-but-zeroed parameter; init_params fills it later."""
    if init == "one":
        data = np.ones(shape, dtype=default_dtype())
    else:
        data = np.zeros(shape, dtype=default_dtype())
    return Parameter(data, init=init)


def fan_in(p: Parameter) -> int:
    """Fan-in of a weight: conv ``[O, C, kh, kw]`` -> C*kh*kw, linear ``[in, out]`` -> in."""
    if p.ndim == 4:
        return int(np.prod(p.shape[1:]))
    if p.ndim == 2:
        return p.shape[0]
    return max(p.size, 1)


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Normal samples with every value outside +-bound*std redrawn."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_params(module: Module, seed: int) -> None:
    """Deterministically (re)initialize every parameter of ``module``.

    Weights: truncated normal, std sqrt(1/fan_in). Biases and attention bias
    tables: zero. Norm gains: one.
    """
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        if p.init == "weight":
            std = float(np.sqrt(1.0 / fan_in(p)))
            p.data[...] = truncated_normal(rng, p.shape, std).astype(p.dtype)
        elif p.init == "one":
            p.data[...] = 1
        else:
            p.data[...] = 0
        p.grad = None
