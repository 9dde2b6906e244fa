"""Parameter containers and the handful of layers the networks are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, default_dtype, parameter
from .errors import FormatError


class Module:
    """Base class: parameters are discovered from attributes in definition order.

    Attributes that are trainable tensors, sub-modules, or lists of sub-modules
    contribute dotted names such as ``blocks.0.conv.w``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def n_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise FormatError(f"checkpoint lacks parameters: {', '.join(missing[:5])}")
        for name, p in params.items():
            a = arrays[name]
            if a.shape != p.dims:
                raise FormatError(f"parameter {name} has dims {a.shape}, model expects {p.dims}")
            p.data = np.array(a, dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


def _uniform(rng: np.random.Generator, dims, bound: float) -> Tensor:
    return parameter(rng.uniform(-bound, bound, size=dims).astype(default_dtype()))


def _zeros(n: int) -> Tensor:
    return parameter(np.zeros(n, dtype=default_dtype()))


class Conv1d(Module):
    """He-uniform initialised 1-D convolution over ``(…, T, C)``."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 padding: str = "same", bias: bool = True, pad_mode: str = "edge"):
        self.w = _uniform(rng, (kernel, c_in, c_out), np.sqrt(6.0 / (kernel * c_in)))
        if bias:
            self.b = _zeros(c_out)
        self.stride = stride
        self.padding = padding
        self.pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.w, getattr(self, "b", None), self.stride, self.padding, self.pad_mode)


class ConvTranspose1d(Module):
    """Upsampling by ``kernel``: each input step emits ``kernel`` output steps."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: int):
        self.w = _uniform(rng, (kernel, c_in, c_out), np.sqrt(6.0 / c_in))
        self.b = _zeros(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose1d(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: tuple[int, int] = (3, 3)):
        kf, kt = kernel
        self.w = _uniform(rng, (kf, kt, c_in, c_out), np.sqrt(6.0 / (kf * kt * c_in)))
        self.b = _zeros(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b)


class Projection(Module):
    """Bias-free linear map on the channel axis, Glorot-uniform initialised."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.w = _uniform(rng, (c_in, c_out), np.sqrt(6.0 / (c_in + c_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matmul(x, self.w)
