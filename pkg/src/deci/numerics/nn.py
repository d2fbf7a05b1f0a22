"""Small neural-network building blocks on top of the autodiff tape."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Parameter container. Tensors with ``requires_grad`` and nested modules
    found in ``__dict__`` (in insertion order) are the parameters."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix + name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, zero: bool = False):
        bound = 1.0 / np.sqrt(in_dim)
        if zero:
            w = np.zeros((in_dim, out_dim))
            b = np.zeros(out_dim)
        else:
            w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
            b = rng.uniform(-bound, bound, size=out_dim)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.normalize_last(x, self.eps) * self.gain + self.shift


class MlpBlock(Module):
    """Two hidden layers with layer-norm at each, a residual connection
    between the hidden layers and a linear read-out.

    ``zero_last`` zero-initialises the read-out so the block starts as the
    constant zero function.
    """

    def __init__(
        self,
        input_dim: int,
        output_dim: int,
        rng: np.random.Generator,
        hidden_dim: int = 128,
        zero_last: bool = False,
        slope: float = 0.01,
    ):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.slope = slope
        self.layers = [Linear(input_dim, hidden_dim, rng), Linear(hidden_dim, hidden_dim, rng)]
        self.norms = [LayerNorm(hidden_dim), LayerNorm(hidden_dim)]
        self.out = Linear(hidden_dim, output_dim, rng, zero=zero_last)

    def hidden(self, x: Tensor, first_pre: Tensor | None = None) -> Tensor:
        pre = self.layers[0](x) if first_pre is None else first_pre
        h = ad.leaky_relu(self.norms[0](pre), self.slope)
        h = h + ad.leaky_relu(self.norms[1](self.layers[1](h)), self.slope)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(self.hidden(x))

    def call_split(self, parts: list[Tensor]) -> Tensor:
        """Evaluate on the concatenation of ``parts`` along the last axis
        without materialising it; parts may broadcast against each other."""
        w = self.layers[0].weight
        pre = None
        start = 0
        for part in parts:
            width = part.shape[-1]
            term = ad.matmul(part, w[start : start + width])
            pre = term if pre is None else pre + term
            start += width
        if start != self.input_dim:
            raise ValueError(f"expected total input width {self.input_dim}, got {start}")
        pre = pre + self.layers[0].bias
        return self.out(self.hidden(None, first_pre=pre))
