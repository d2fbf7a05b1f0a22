"""Exogenous noise families for ground-truth SEMs.

Every family is a deterministic map from a standard-normal draw ``u`` to the
noise value (so samplers can work in a Gaussian space), plus a log-density
used when a node's value is conditioned on. Both accept arrays or Tensors and
return Tensors so gradients flow through them.
"""

from __future__ import annotations

import numpy as np

from ..numerics import ad
from ..numerics.autodiff import Tensor, no_grad
from ..numerics.rng import RngStream

HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


def _std_normal_logpdf(u: Tensor) -> Tensor:
    return -0.5 * ad.square(u) - HALF_LOG_2PI


class NoiseFamily:
    name = "noise"

    def from_standard_normal(self, u) -> Tensor:
        raise NotImplementedError

    def log_prob(self, z) -> Tensor:
        raise NotImplementedError(f"{self.name} noise has no closed-form density")

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        with no_grad():
            return self.from_standard_normal(rng.normal(size=n)).data

    def to_json(self) -> dict:
        return {"family": self.name, **self.__dict__}


class Gaussian(NoiseFamily):
    name = "gaussian"

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def from_standard_normal(self, u) -> Tensor:
        return ad.as_tensor(u) * self.scale

    def log_prob(self, z) -> Tensor:
        return _std_normal_logpdf(ad.as_tensor(z) * (1.0 / self.scale)) - float(np.log(self.scale))


class ShiftedExp(NoiseFamily):
    """``scale * (E - 1)`` with ``E ~ Exp(1)``: mean zero, right-skewed."""

    name = "shifted_exp"

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def from_standard_normal(self, u) -> Tensor:
        # E = -log(1 - Phi(u)) = -log Phi(-u)
        e = -ad.log_ndtr(-ad.as_tensor(u))
        return (e - 1.0) * self.scale

    def log_prob(self, z) -> Tensor:
        e = ad.as_tensor(z) * (1.0 / self.scale) + 1.0
        inside = e.data >= 0
        return ad.where(inside, -e - float(np.log(self.scale)), -np.inf)


class SoftplusNormal(NoiseFamily):
    """``scale * (softplus(u) - 1)`` with ``u`` standard normal."""

    name = "softplus_normal"

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def from_standard_normal(self, u) -> Tensor:
        return (ad.softplus(ad.as_tensor(u)) - 1.0) * self.scale

    def log_prob(self, z) -> Tensor:
        s = ad.as_tensor(z) * (1.0 / self.scale) + 1.0
        inside = s.data > 0
        s_safe = ad.where(inside, s, 1.0)
        # u = log(expm1(s)) = s + log(1 - exp(-s))
        u = s_safe + ad.log(1.0 - ad.exp(-s_safe))
        value = _std_normal_logpdf(u) - ad.logsigmoid(u) - float(np.log(self.scale))
        return ad.where(inside, value, -np.inf)


class Uniform(NoiseFamily):
    name = "uniform"

    def __init__(self, low: float, high: float):
        if not high > low:
            raise ValueError("uniform noise needs high > low")
        self.low = float(low)
        self.high = float(high)

    def from_standard_normal(self, u) -> Tensor:
        return ad.ndtr(ad.as_tensor(u)) * (self.high - self.low) + self.low

    def log_prob(self, z) -> Tensor:
        z = ad.as_tensor(z)
        inside = (z.data >= self.low) & (z.data <= self.high)
        return ad.where(inside, ad.as_tensor(np.full(z.shape, -np.log(self.high - self.low))), -np.inf)


class SinhArcsinh(NoiseFamily):
    """``scale * sinh((asinh(u) + skew) / tail)``: full support, skewed and
    heavy- or light-tailed depending on ``tail``."""

    name = "sinh_arcsinh"

    def __init__(self, skew: float = 0.5, tail: float = 0.8, scale: float = 1.0):
        if tail <= 0 or scale <= 0:
            raise ValueError("tail and scale must be positive")
        self.skew = float(skew)
        self.tail = float(tail)
        self.scale = float(scale)

    def from_standard_normal(self, u) -> Tensor:
        return ad.sinh((ad.arcsinh(ad.as_tensor(u)) + self.skew) * (1.0 / self.tail)) * self.scale

    def log_prob(self, z) -> Tensor:
        y = ad.as_tensor(z) * (1.0 / self.scale)
        inner = ad.arcsinh(y) * self.tail - self.skew
        u = ad.sinh(inner)
        log_jac = ad.log(ad.cosh(inner)) + float(np.log(self.tail)) - 0.5 * ad.log(1.0 + ad.square(y))
        return _std_normal_logpdf(u) + log_jac - float(np.log(self.scale))


class MlpTransformed(NoiseFamily):
    """Standard normal pushed through a random-weight two-layer tanh MLP, then
    standardised to zero mean and unit variance."""

    name = "mlp"

    def __init__(self, rng: RngStream, hidden: int = 16, n_reference: int = 200_000):
        self.w1 = rng.normal(size=hidden) * 1.5
        self.b1 = rng.normal(size=hidden)
        self.w2 = rng.normal(size=hidden) / np.sqrt(hidden)
        ref = self._raw(rng.normal(size=n_reference))
        self.mean = float(ref.mean())
        self.std = float(ref.std())

    def _raw(self, u: np.ndarray) -> np.ndarray:
        return np.tanh(np.multiply.outer(u, self.w1) + self.b1) @ self.w2 + u

    def from_standard_normal(self, u) -> Tensor:
        u = ad.as_tensor(u)
        h = ad.tanh(ad.reshape(u, u.shape + (1,)) * self.w1 + self.b1)
        raw = ad.tsum(h * self.w2, axis=-1) + u
        return (raw - self.mean) * (1.0 / self.std)

    def to_json(self) -> dict:
        return {
            "family": self.name,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "mean": self.mean,
            "std": self.std,
        }
