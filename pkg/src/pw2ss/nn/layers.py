"""Parameter containers and the small set of layers the models need."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from ..errors import MissingParameter, ShapeMismatch
from . import autograd as ag
from .autograd import Parameter


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Module:
    """Walks attributes in definition order to name parameters hierarchically."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{path}.{i}"
                        yield item.name, item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state, strict=True):
        """Copy arrays from ``state`` into the parameters, by name.

        Raises MissingParameter naming the first parameter absent from
        ``state``; with ``strict`` unknown names in ``state`` are rejected too.
        """
        own = OrderedDict(self.named_parameters())
        for name, p in own.items():
            if name not in state:
                raise MissingParameter(f"checkpoint has no parameter {name!r}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ShapeMismatch(f"parameter {name!r}: checkpoint shape {value.shape} "
                                    f"vs model shape {p.data.shape}")
        if strict:
            extra = sorted(set(state) - set(own))
            if extra:
                raise MissingParameter(f"model has no parameter {extra[0]!r}")
        for name, p in own.items():
            p.data[...] = state[name]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = Parameter(xavier_uniform(rng, n_in, n_out))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        return ag.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self._eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.weight, self.bias, self._eps)


class MLP(Module):
    """Three linear layers with GELU between them."""

    def __init__(self, dims, rng):
        if len(dims) != 4:
            raise ValueError("MLP expects four widths: in, hidden1, hidden2, out")
        self.fc1 = Linear(dims[0], dims[1], rng)
        self.fc2 = Linear(dims[1], dims[2], rng)
        self.fc3 = Linear(dims[2], dims[3], rng)

    def __call__(self, x):
        return self.fc3(ag.gelu(self.fc2(ag.gelu(self.fc1(x)))))
