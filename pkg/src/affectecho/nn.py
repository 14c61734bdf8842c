"""Layers shared by the classifier and the generator."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Module:
    """Collects ``Parameter`` attributes and sub-modules, torch style.

    Names are dotted attribute paths in definition order; lists of modules
    get integer path components.
    """

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Parameter):
                out.append((full, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(full + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def param(data: np.ndarray) -> Parameter:
    return Parameter(data, requires_grad=True, op="param")


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.weight = param(uniform_fan_in(rng, (n_in, n_out), n_in, dtype))
        self.bias = param(uniform_fan_in(rng, (n_out,), n_in, dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, n_in: int, n_out: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, dtype=np.float32):
        fan_in = n_in * kernel_size
        self.weight = param(uniform_fan_in(rng, (kernel_size, n_in, n_out), fan_in, dtype))
        self.bias = param(uniform_fan_in(rng, (n_out,), fan_in, dtype))
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.gamma = param(np.ones(dim, dtype=dtype))
        self.beta = param(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class TransformerBlock(Module):
    """Pre-norm block: single-head self-attention then a GELU feed-forward."""

    def __init__(self, dim: int, ff_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype)
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.o = Linear(dim, dim, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.ff1 = Linear(dim, ff_dim, rng, dtype)
        self.ff2 = Linear(ff_dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.o(ad.attention(self.q(h), self.k(h), self.v(h)))
        h = self.ln2(x)
        return x + self.ff2(ad.gelu(self.ff1(h)))


class SpectralConv1d(Module):
    """Per-channel Fourier multiplier on the lowest ``modes`` frequencies."""

    def __init__(self, channels: int, modes: int, rng: np.random.Generator, dtype=np.float32):
        scale = 1.0 / channels
        self.modes = modes
        self.w_re = param((scale * rng.uniform(0, 1, size=(modes, channels)) + 1.0 - scale / 2).astype(dtype))
        self.w_im = param((scale * rng.uniform(-0.5, 0.5, size=(modes, channels))).astype(dtype))

    def __call__(self, x: Tensor) -> Tensor:
        modes = min(self.modes, x.shape[-2] // 2 + 1)
        w_re, w_im = self.w_re, self.w_im
        if modes < self.modes:
            w_re, w_im = w_re[:modes], w_im[:modes]
        return ad.spectral_conv(x, w_re, w_im, modes)


def sinusoidal_positions(T: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / (10000 ** (2 * i / dim))
    out = np.zeros((T, dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)[:, : (dim - dim // 2)]
    return out.astype(dtype)
