"""Small module system on top of the tensor tape."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .rng import Rng, xavier_uniform
from .tensor import Parameter, ShapeError, Tensor


class Module:
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        """Non-trainable state (batchnorm running statistics)."""
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, F.BatchNormState):
                yield path + ".running_mean", val.running_mean
                yield path + ".running_var", val.running_var
            elif isinstance(val, Module):
                yield from val.named_buffers(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{i}.")

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        *path, stat = name.split(".")
        obj = self
        for part in path:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        setattr(obj, stat, np.array(value, dtype=np.float64))

    def name_parameters(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_dropout_rng(self, gen: np.random.Generator) -> None:
        for m in self.modules():
            if isinstance(m, Dropout):
                m.gen = gen

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True):
        self.weight = Parameter(xavier_uniform(rng, (d_in, d_out), d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"linear: input {x.shape} vs weight {self.weight.shape}")
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.gain, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1):
        self.gain = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.state = F.BatchNormState(channels, momentum)

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return F.batchnorm(x, self.gain, self.bias, self.state, self.training, mask=mask)


class Dropout(Module):
    def __init__(self, rate: float = 0.1):
        self.rate = rate
        self.gen: np.random.Generator | None = None

    def forward(self, x: Tensor) -> Tensor:
        if self.training and self.rate > 0 and self.gen is None:
            raise RuntimeError("dropout active but no random stream attached")
        return F.dropout(x, self.rate, self.gen, self.training)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: Rng):
        self.weight = Parameter(xavier_uniform(rng, (num, dim), num, dim))

    def forward(self, ids) -> Tensor:
        return F.embedding(self.weight, ids)


class DepthwiseConv1d(Module):
    def __init__(self, channels: int, kernel: int, rng: Rng, causal: bool = False):
        if kernel % 2 == 0:
            raise ShapeError(f"depthwise kernel width must be odd, got {kernel}")
        self.weight = Parameter(xavier_uniform(rng, (kernel, channels), kernel, kernel))
        self.bias = Parameter(np.zeros(channels))
        self.causal = causal

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d_depthwise(x, self.weight, self.bias, "causal" if self.causal else "same")


class LSTMCell(Module):
    def __init__(self, d_in: int, hidden: int, rng: Rng):
        self.w_x = Parameter(xavier_uniform(rng, (d_in, 4 * hidden), d_in, 4 * hidden))
        self.w_h = Parameter(xavier_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
        self.b = Parameter(np.zeros(4 * hidden))
        self.hidden = hidden

    def forward(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        return F.lstm_cell(x, state, self.w_x, self.w_h, self.b)
