"""Parameters, a small module system and the layers the classifier is built from."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .core import Tensor, default_dtype

INIT_SPECS = ("UniformFanIn", "Zeros", "Ones")


class Parameter(Tensor):
    """Trainable leaf tensor; ``name`` is filled in when the owning model is walked."""

    __slots__ = ("name", "init_spec")

    def __init__(self, data, init_spec: str = "UniformFanIn", name: str = ""):
        super().__init__(data, requires_grad=True)
        if init_spec not in INIT_SPECS:
            raise ValueError(f"unknown init spec {init_spec!r}")
        self.init_spec = init_spec
        self.name = name

    @classmethod
    def uniform_fan_in(cls, shape, fan_in: int, rng: np.random.Generator) -> "Parameter":
        bound = 1.0 / np.sqrt(fan_in)
        return cls(rng.uniform(-bound, bound, size=shape), "UniformFanIn")

    @classmethod
    def zeros(cls, shape) -> "Parameter":
        return cls(np.zeros(shape), "Zeros")

    @classmethod
    def ones(cls, shape) -> "Parameter":
        return cls(np.ones(shape), "Ones")


class Module:
    """Container that discovers parameters and buffers from its attributes."""

    training = True

    def _children(self) -> Iterator[tuple]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")
        for key in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{key}", getattr(self, key)

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: buf.copy() for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        unexpected = set(state) - set(params) - set(buffers)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = state[name].astype(p.dtype, copy=True)
        for name, buf in buffers.items():
            buf[...] = state[name]

    def to_dtype(self, dtype) -> "Module":
        """Cast parameters and buffers in place (used to switch to 64-bit for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for key in getattr(m, "_buffer_names", ()):
                setattr(m, key, getattr(m, key).astype(dtype))
        return self


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = Parameter.uniform_fan_in((n_out, n_in), n_in, rng)
        self.bias = Parameter.zeros((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, pad: int = 0,
                 pad_mode: str = "zeros"):
        self.weight = Parameter.uniform_fan_in((c_out, c_in, k), c_in * k, rng)
        self.bias = Parameter.zeros((c_out,))
        self.stride, self.pad, self.pad_mode = stride, pad, pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, stride=self.stride, pad=self.pad, pad_mode=self.pad_mode)


class ConvTranspose1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 output_padding: int = 0):
        self.weight = Parameter.uniform_fan_in((c_in, c_out, k), c_in * k, rng)
        self.bias = Parameter.zeros((c_out,))
        self.stride, self.output_padding = stride, output_padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose1d(x, self.weight, self.bias, stride=self.stride,
                                    output_padding=self.output_padding)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, pad: int = 0):
        self.weight = Parameter.uniform_fan_in((c_out, c_in, k, k), c_in * k * k, rng)
        self.bias = Parameter.zeros((c_out,))
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm1d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, n_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter.ones((n_features,))
        self.beta = Parameter.zeros((n_features,))
        self.running_mean = np.zeros(n_features, dtype=default_dtype())
        self.running_var = np.ones(n_features, dtype=default_dtype())
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum, eps=self.eps)


class Dropout(Module):
    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.training, self.rng)


class LSTM(Module):
    """Single-direction LSTM; ``forget_bias`` is added to the forget-gate slice of the bias."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, forget_bias: float = 1.0):
        self.hidden = hidden
        self.w_ih = Parameter.uniform_fan_in((4 * hidden, n_in), n_in, rng)
        self.w_hh = Parameter.uniform_fan_in((4 * hidden, hidden), hidden, rng)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = forget_bias
        self.bias = Parameter(bias, "Zeros")

    def __call__(self, steps: list, reverse: bool = False) -> list:
        """Run over a list of [N, in] tensors; returns hidden states aligned with the input order."""
        n = steps[0].shape[0]
        h = Tensor(np.zeros((n, self.hidden)))
        c = Tensor(np.zeros((n, self.hidden)))
        order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
        out = [None] * len(steps)
        for t in order:
            hc = ops.lstm_cell(steps[t], h, c, self.w_ih, self.w_hh, self.bias)
            h = ops.take(hc, 0, self.hidden, axis=1)
            c = ops.take(hc, self.hidden, 2 * self.hidden, axis=1)
            out[t] = h
        return out
